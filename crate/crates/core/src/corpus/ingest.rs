//! Ingestion of pre-annotated corpora (JSONL) with the sentence filter
//! contract: article presence, morphological agreement, limited ambiguity
//! (at most four target-article occurrences), character length 50..=500,
//! optional named-entity cap, and duplicate removal.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    mask_sentence, split_instances, AnnotatedSentence, ArticleSlot, CellDataset, CorpusError,
    MaskedInstance, Number, SplitRatios,
};
use crate::paradigm::{article_of, Case, Cell, Gender};

/// One line of the annotated-corpus JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub text: String,
    pub tokens: Vec<String>,
    pub articles: Vec<SlotRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_count: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub index: usize,
    pub gender: Gender,
    pub case: Case,
    pub number: Number,
}

/// Positions of tokens realizing the cell's article, up to casing.
fn target_occurrences(tokens: &[String], cell: Cell) -> Vec<usize> {
    let surface = article_of(cell).as_str();
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.eq_ignore_ascii_case(surface))
        .map(|(i, _)| i)
        .collect()
}

/// The five acceptance filters, each a pure predicate of one record, so the
/// accepted set is independent of application order.
pub fn filter_predicates() -> Vec<(&'static str, fn(&AnnotatedRecord, Cell) -> bool)> {
    fn presence(r: &AnnotatedRecord, cell: Cell) -> bool {
        !target_occurrences(&r.tokens, cell).is_empty()
    }
    fn agreement(r: &AnnotatedRecord, cell: Cell) -> bool {
        target_occurrences(&r.tokens, cell).iter().all(|&p| {
            r.articles.iter().any(|s| {
                s.index == p
                    && s.gender == cell.gender
                    && s.case == cell.case
                    && s.number == Number::Sing
            })
        })
    }
    fn ambiguity(r: &AnnotatedRecord, cell: Cell) -> bool {
        target_occurrences(&r.tokens, cell).len() <= 4
    }
    fn length(r: &AnnotatedRecord, _cell: Cell) -> bool {
        let n = r.text.chars().count();
        (50..=500).contains(&n)
    }
    fn entities(r: &AnnotatedRecord, _cell: Cell) -> bool {
        r.entity_count.map_or(true, |n| n <= 3)
    }
    vec![
        ("presence", presence),
        ("agreement", agreement),
        ("ambiguity", ambiguity),
        ("length", length),
        ("entities", entities),
    ]
}

pub fn record_accepted(record: &AnnotatedRecord, cell: Cell) -> bool {
    filter_predicates().iter().all(|(_, f)| f(record, cell))
}

/// Filter check for by-construction sentences (generation tests): every
/// occurrence of the cell's article is taken to be correctly annotated.
pub fn sentence_passes_filters(tokens: &[String], cell: Cell, entity_count: Option<u32>) -> bool {
    let record = AnnotatedRecord {
        text: tokens.join(" "),
        articles: target_occurrences(tokens, cell)
            .into_iter()
            .map(|index| SlotRecord {
                index,
                gender: cell.gender,
                case: cell.case,
                number: Number::Sing,
            })
            .collect(),
        tokens: tokens.to_vec(),
        entity_count,
    };
    record_accepted(&record, cell)
}

fn validate_record(record: &AnnotatedRecord) -> Result<(), String> {
    if record.tokens.is_empty() {
        return Err("empty token list".into());
    }
    for t in &record.tokens {
        if t.is_empty() || t.chars().any(char::is_whitespace) {
            return Err(format!("bad token {t:?}"));
        }
    }
    for s in &record.articles {
        if s.index >= record.tokens.len() {
            return Err(format!("article index {} out of range", s.index));
        }
    }
    Ok(())
}

/// Applies the filter contract and masks every target-article occurrence.
/// Returns the accepted instances in input order, duplicates (by text)
/// removed after filtering.
pub fn ingest_records(
    records: &[AnnotatedRecord],
    cell: Cell,
) -> Result<Vec<MaskedInstance>, CorpusError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for record in records {
        if !record_accepted(record, cell) {
            continue;
        }
        if !seen.insert(record.text.clone()) {
            continue;
        }
        let positions = target_occurrences(&record.tokens, cell);
        let annotated = AnnotatedSentence {
            tokens: record.tokens.clone(),
            article_slots: positions
                .iter()
                .map(|&index| ArticleSlot {
                    index,
                    gender: cell.gender,
                    case: cell.case,
                    number: Number::Sing,
                })
                .collect(),
        };
        out.push(mask_sentence(&annotated, cell, &positions));
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyAfterFilter);
    }
    Ok(out)
}

/// Reads an annotated JSONL corpus, applies the filter contract, masks all
/// target-article occurrences and splits 80/10/10.
pub fn ingest_annotated(path: &Path, cell: Cell, seed: u64) -> Result<CellDataset, CorpusError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotatedRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        validate_record(&record).map_err(|message| CorpusError::Parse {
            line: lineno + 1,
            message,
        })?;
        records.push(record);
    }
    let instances = ingest_records(&records, cell)?;
    let (train, val, test) = split_instances(instances, SplitRatios::DEFAULT, seed)?;
    Ok(CellDataset {
        cell,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paradigm::Article;

    fn cell(g: Gender, c: Case) -> Cell {
        Cell::new(g, c)
    }

    fn slot(index: usize, g: Gender, c: Case, number: Number) -> SlotRecord {
        SlotRecord {
            index,
            gender: g,
            case: c,
            number,
        }
    }

    /// A valid record for (Fem, Nom) with one correctly annotated "die".
    fn good_record() -> AnnotatedRecord {
        let tokens: Vec<String> =
            "Offenbar steht die Lampe heute wirklich stabil und sicher an gewohnter Stelle ."
                .split_whitespace()
                .map(str::to_string)
                .collect();
        AnnotatedRecord {
            text: tokens.join(" "),
            articles: vec![slot(2, Gender::Fem, Case::Nom, Number::Sing)],
            tokens,
            entity_count: None,
        }
    }

    #[test]
    fn accepts_and_masks_good_record() {
        let z = cell(Gender::Fem, Case::Nom);
        let out = ingest_records(&[good_record()], z).unwrap();
        assert_eq!(out.len(), 1);
        let inst = &out[0];
        assert_eq!(inst.mask_positions, vec![2]);
        assert_eq!(inst.masked_surfaces, vec!["die".to_string()]);
        assert_eq!(inst.factual_article, Article::Die);
        inst.validate().unwrap();
    }

    #[test]
    fn plural_use_is_excluded() {
        let z = cell(Gender::Fem, Case::Nom);
        let mut rec = good_record();
        rec.articles[0].number = Number::Plur;
        assert!(!record_accepted(&rec, z));
    }

    #[test]
    fn unannotated_occurrence_is_excluded() {
        let z = cell(Gender::Fem, Case::Nom);
        let mut rec = good_record();
        rec.articles.clear();
        assert!(!record_accepted(&rec, z));
    }

    #[test]
    fn wrong_case_annotation_is_excluded() {
        let z = cell(Gender::Fem, Case::Nom);
        let mut rec = good_record();
        rec.articles[0].case = Case::Acc;
        assert!(!record_accepted(&rec, z));
    }

    #[test]
    fn short_sentence_is_excluded() {
        let z = cell(Gender::Fem, Case::Nom);
        let tokens: Vec<String> = "die Lampe steht da ."
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let rec = AnnotatedRecord {
            text: tokens.join(" "),
            articles: vec![slot(0, Gender::Fem, Case::Nom, Number::Sing)],
            tokens,
            entity_count: None,
        };
        assert!(rec.text.chars().count() < 50);
        assert!(!record_accepted(&rec, z));
    }

    #[test]
    fn five_occurrences_are_excluded_four_pass() {
        let z = cell(Gender::Fem, Case::Nom);
        let make = |n: usize| {
            let mut tokens: Vec<String> = Vec::new();
            let mut slots = Vec::new();
            for i in 0..n {
                slots.push(slot(tokens.len(), Gender::Fem, Case::Nom, Number::Sing));
                tokens.push("die".into());
                tokens.push(format!("Lampe{i}"));
                tokens.push("leuchtet".into());
            }
            tokens.push("heute".into());
            tokens.push("wirklich".into());
            tokens.push("ausgesprochen".into());
            tokens.push("hell".into());
            tokens.push(".".into());
            AnnotatedRecord {
                text: tokens.join(" "),
                articles: slots,
                tokens,
                entity_count: None,
            }
        };
        assert!(record_accepted(&make(4), z));
        assert!(!record_accepted(&make(5), z));
        // All four occurrences get masked.
        let out = ingest_records(&[make(4)], z).unwrap();
        assert_eq!(out[0].mask_positions.len(), 4);
    }

    #[test]
    fn entity_cap_applies_when_present() {
        let z = cell(Gender::Fem, Case::Nom);
        let mut rec = good_record();
        rec.entity_count = Some(3);
        assert!(record_accepted(&rec, z));
        rec.entity_count = Some(4);
        assert!(!record_accepted(&rec, z));
    }

    #[test]
    fn duplicates_are_removed() {
        let z = cell(Gender::Fem, Case::Nom);
        let out = ingest_records(&[good_record(), good_record()], z).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn empty_after_filter() {
        let z = cell(Gender::Fem, Case::Nom);
        let mut rec = good_record();
        rec.articles[0].number = Number::Plur;
        assert!(matches!(
            ingest_records(&[rec], z),
            Err(CorpusError::EmptyAfterFilter)
        ));
    }

    #[test]
    fn jsonl_parse_error_carries_line_number() {
        let dir = std::env::temp_dir().join(format!("gradlab-ingest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        let good = serde_json::to_string(&good_record()).unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        let err = ingest_annotated(&path, cell(Gender::Fem, Case::Nom), 0).unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ingest_splits_deterministically() {
        let z = cell(Gender::Fem, Case::Nom);
        let dir = std::env::temp_dir().join(format!("gradlab-ingest2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corpus.jsonl");
        let mut lines = String::new();
        for i in 0..20 {
            let mut rec = good_record();
            rec.tokens[4] = format!("heute{i}");
            rec.text = rec.tokens.join(" ");
            lines.push_str(&serde_json::to_string(&rec).unwrap());
            lines.push('\n');
        }
        std::fs::write(&path, lines).unwrap();
        let a = ingest_annotated(&path, z, 42).unwrap();
        let b = ingest_annotated(&path, z, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (16, 2, 2));
        std::fs::remove_dir_all(&dir).ok();
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_record() -> impl Strategy<Value = AnnotatedRecord> {
            // Small random sentences over a vocabulary that includes article
            // surfaces, with partially random annotations.
            let word = prop_oneof![
                Just("die".to_string()),
                Just("Die".to_string()),
                Just("der".to_string()),
                Just("Lampe".to_string()),
                Just("steht".to_string()),
                Just("heute".to_string()),
                Just("wirklichlangeswort".to_string()),
            ];
            (
                proptest::collection::vec(word, 1..14),
                proptest::collection::vec(
                    (0usize..14, 0u8..3, 0u8..4, prop::bool::ANY),
                    0..4,
                ),
                proptest::option::of(0u32..6),
            )
                .prop_map(|(tokens, raw_slots, entity_count)| {
                    let articles = raw_slots
                        .into_iter()
                        .filter(|(i, _, _, _)| *i < tokens.len())
                        .map(|(index, g, c, sing)| SlotRecord {
                            index,
                            gender: Gender::ALL[g as usize],
                            case: Case::ALL[c as usize],
                            number: if sing { Number::Sing } else { Number::Plur },
                        })
                        .collect();
                    AnnotatedRecord {
                        text: tokens.join(" "),
                        tokens,
                        articles,
                        entity_count,
                    }
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]
            #[test]
            fn filters_are_order_independent(
                records in proptest::collection::vec(arb_record(), 1..20),
                perm_seed in 0u64..1000,
            ) {
                let z = Cell::new(Gender::Fem, Case::Nom);
                let mut filters = filter_predicates();
                let baseline: Vec<bool> = records
                    .iter()
                    .map(|r| filters.iter().all(|(_, f)| f(r, z)))
                    .collect();
                let mut rng = crate::rng::Rng::from_seed(perm_seed);
                rng.shuffle(&mut filters);
                let permuted: Vec<bool> = records
                    .iter()
                    .map(|r| filters.iter().all(|(_, f)| f(r, z)))
                    .collect();
                prop_assert_eq!(baseline, permuted);
            }

            #[test]
            fn split_proportions_follow_the_rounding_rule(n in 10usize..300, seed in 0u64..100) {
                let items: Vec<usize> = (0..n).collect();
                let (train, val, test) =
                    split_instances(items, SplitRatios::DEFAULT, seed).unwrap();
                let nf = n as f64;
                // val/test are floored, train takes the remainder.
                prop_assert!((val.len() as f64 - 0.1 * nf).abs() < 1.0);
                prop_assert!((test.len() as f64 - 0.1 * nf).abs() < 1.0);
                prop_assert!((train.len() as f64 - 0.8 * nf).abs() < 2.0);
                prop_assert_eq!(train.len() + val.len() + test.len(), n);
                if n % 10 == 0 {
                    // Exact 80/10/10 whenever the size divides evenly.
                    prop_assert_eq!(val.len(), n / 10);
                    prop_assert_eq!(test.len(), n / 10);
                    prop_assert_eq!(train.len(), n * 8 / 10);
                }
            }
        }
    }
}
