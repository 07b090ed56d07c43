//! Synthetic gender-case datasets, the grammar-neutral dataset, annotated
//! corpus ingestion with the sentence filter contract, and train/val/test
//! splits.
//!
//! Tokens are whitespace-free non-empty strings; sentences are token
//! vectors and `text` is the space-joined rendering. Generation and
//! ingestion are pure functions of (lexicon, seed) resp. (file, seed), so
//! datasets are reproducible byte-for-byte.

mod generate;
mod ingest;
mod lexicon;

pub use generate::{generate_cell_dataset, generate_neutral_dataset};
pub use ingest::{
    filter_predicates, ingest_annotated, ingest_records, record_accepted,
    sentence_passes_filters, AnnotatedRecord, SlotRecord,
};
pub use lexicon::{Frame, FrameTok, Lexicon, Noun};

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::paradigm::{article_of, Article, Case, Cell, Gender};
use crate::rng::Rng;

pub const MASK_TOKEN: &str = "[MASK]";
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("requested {requested} sentences but the lexicon only supports {capacity} unique ones{}", cell.map(|z| format!(" for cell {z}")).unwrap_or_default())]
    InsufficientLexicon {
        cell: Option<Cell>,
        requested: usize,
        capacity: usize,
    },
    #[error("dataset size {requested} is below the minimum of {minimum}")]
    SizeTooSmall { requested: usize, minimum: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no sentences left after filtering")]
    EmptyAfterFilter,
    #[error("split ratios must be positive and sum to 1")]
    BadRatios,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Number {
    Sing,
    Plur,
}

/// One annotated article occurrence inside a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleSlot {
    pub index: usize,
    pub gender: Gender,
    pub case: Case,
    pub number: Number,
}

/// A tokenized sentence with its annotated article slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub article_slots: Vec<ArticleSlot>,
}

impl AnnotatedSentence {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Checks the structural invariants: well-formed tokens, slot indices in
    /// range, slot surfaces matching the paradigm article up to casing.
    pub fn validate(&self) -> Result<(), String> {
        for t in &self.tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(format!("bad token {t:?}"));
            }
        }
        for slot in &self.article_slots {
            let tok = self
                .tokens
                .get(slot.index)
                .ok_or_else(|| format!("slot index {} out of range", slot.index))?;
            let cell = Cell::new(slot.gender, slot.case);
            if slot.number == Number::Sing
                && !tok.eq_ignore_ascii_case(article_of(cell).as_str())
            {
                return Err(format!(
                    "slot {} surface {tok:?} does not realize {}",
                    slot.index,
                    article_of(cell)
                ));
            }
        }
        Ok(())
    }
}

/// A sentence with its cell-article positions replaced by the mask symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub tokens: Vec<String>,
    pub mask_positions: Vec<usize>,
    /// Original surfaces at the mask positions, e.g. "Der" or "der".
    pub masked_surfaces: Vec<String>,
    pub cell: Cell,
    pub factual_article: Article,
}

impl MaskedInstance {
    pub fn single_mask(&self) -> bool {
        self.mask_positions.len() == 1
    }

    /// The sentence with masks restored to their original surfaces.
    pub fn original_tokens(&self) -> Vec<String> {
        let mut toks = self.tokens.clone();
        for (pos, surface) in self.mask_positions.iter().zip(&self.masked_surfaces) {
            toks[*pos] = surface.clone();
        }
        toks
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.mask_positions.is_empty() {
            return Err("no mask positions".into());
        }
        if self.mask_positions.len() != self.masked_surfaces.len() {
            return Err("mask positions and surfaces length mismatch".into());
        }
        if self.factual_article != article_of(self.cell) {
            return Err(format!(
                "factual article {} does not match cell {}",
                self.factual_article, self.cell
            ));
        }
        for (pos, surface) in self.mask_positions.iter().zip(&self.masked_surfaces) {
            match self.tokens.get(*pos) {
                Some(t) if t == MASK_TOKEN => {}
                other => return Err(format!("position {pos} is {other:?}, not a mask")),
            }
            if !surface.eq_ignore_ascii_case(self.factual_article.as_str()) {
                return Err(format!("surface {surface:?} is not the factual article"));
            }
        }
        Ok(())
    }
}

fn mask_sentence(sentence: &AnnotatedSentence, cell: Cell, positions: &[usize]) -> MaskedInstance {
    let mut tokens = sentence.tokens.clone();
    let mut surfaces = Vec::with_capacity(positions.len());
    for &p in positions {
        surfaces.push(std::mem::replace(&mut tokens[p], MASK_TOKEN.to_string()));
    }
    MaskedInstance {
        tokens,
        mask_positions: positions.to_vec(),
        masked_surfaces: surfaces,
        cell,
        factual_article: article_of(cell),
    }
}

/// One cell's dataset with its train/val/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDataset {
    pub cell: Cell,
    pub train: Vec<MaskedInstance>,
    pub val: Vec<MaskedInstance>,
    pub test: Vec<MaskedInstance>,
}

impl CellDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &MaskedInstance> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Sentences free of articles, determiners and third-person pronouns.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralDataset {
    pub sentences: Vec<Vec<String>>,
}

impl NeutralDataset {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Returns (sentence index, token) for every blocklist hit.
pub fn blocklist_violations<'a>(
    sentences: &'a [Vec<String>],
    lexicon: &Lexicon,
) -> Vec<(usize, &'a str)> {
    let mut hits = Vec::new();
    for (i, sent) in sentences.iter().enumerate() {
        for tok in sent {
            if lexicon.blocklist.contains(&tok.to_lowercase()) {
                hits.push((i, tok.as_str()));
            }
        }
    }
    hits
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };

    pub fn validate(&self) -> Result<(), CorpusError> {
        let sum = self.train + self.val + self.test;
        if self.train <= 0.0 || self.val < 0.0 || self.test < 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadRatios);
        }
        Ok(())
    }
}

/// Re-partitions a dataset (all splits pooled) under new ratios.
pub fn resplit(
    dataset: CellDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<CellDataset, CorpusError> {
    let cell = dataset.cell;
    let mut items = dataset.train;
    items.extend(dataset.val);
    items.extend(dataset.test);
    let (train, val, test) = split_instances(items, ratios, seed)?;
    Ok(CellDataset {
        cell,
        train,
        val,
        test,
    })
}

/// Deterministic shuffled partition. Rounding rule: val and test get
/// floor(n * ratio) items each, train the remainder, so a 34350-sentence
/// dataset splits 27480/3435/3435 at 80/10/10.
pub fn split_instances<T>(
    mut items: Vec<T>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), CorpusError> {
    ratios.validate()?;
    let n = items.len();
    let n_val = (n as f64 * ratios.val).floor() as usize;
    let n_test = (n as f64 * ratios.test).floor() as usize;
    let mut rng = Rng::from_seed(seed).fork("split");
    rng.shuffle(&mut items);
    let mut rest = items.split_off(n_val + n_test);
    let test = items.split_off(n_val);
    let val = items;
    let train = std::mem::take(&mut rest);
    Ok((train, val, test))
}

// ---------------------------------------------------------------------------
// Dataset archive
// ---------------------------------------------------------------------------

/// Bookkeeping stored next to the per-cell JSONL files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub split_rule: String,
    pub lexicon_hash: String,
    pub cell_sizes: BTreeMap<String, [usize; 3]>,
    pub neutral_size: usize,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    split: String,
    cell: String,
    factual_article: String,
    tokens: Vec<String>,
    mask_positions: Vec<usize>,
    masked_surfaces: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct NeutralRecord {
    tokens: Vec<String>,
}

pub fn write_archive(
    dir: &Path,
    datasets: &[CellDataset],
    neutral: &NeutralDataset,
    manifest: &DatasetManifest,
) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir)?;
    for ds in datasets {
        let mut out = std::io::BufWriter::new(std::fs::File::create(
            dir.join(format!("{}.jsonl", ds.cell.name())),
        )?);
        for (split, items) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
            for inst in items {
                let rec = InstanceRecord {
                    split: split.to_string(),
                    cell: inst.cell.name(),
                    factual_article: inst.factual_article.as_str().to_string(),
                    tokens: inst.tokens.clone(),
                    mask_positions: inst.mask_positions.clone(),
                    masked_surfaces: inst.masked_surfaces.clone(),
                };
                serde_json::to_writer(&mut out, &rec).map_err(io_from_json)?;
                out.write_all(b"\n")?;
            }
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("neutral.jsonl"))?);
    for sent in &neutral.sentences {
        serde_json::to_writer(&mut out, &NeutralRecord { tokens: sent.clone() })
            .map_err(io_from_json)?;
        out.write_all(b"\n")?;
    }
    let manifest_json = serde_json::to_string_pretty(manifest).map_err(io_from_json)?;
    std::fs::write(dir.join("dataset_manifest.json"), manifest_json + "\n")?;
    Ok(())
}

fn io_from_json(e: serde_json::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}

pub fn read_archive(
    dir: &Path,
) -> Result<(Vec<CellDataset>, NeutralDataset, DatasetManifest), CorpusError> {
    let manifest: DatasetManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.join("dataset_manifest.json"))?,
    )
    .map_err(|e| CorpusError::Parse {
        line: 0,
        message: format!("dataset_manifest.json: {e}"),
    })?;

    let mut datasets = Vec::new();
    for cell in Cell::all() {
        let path = dir.join(format!("{}.jsonl", cell.name()));
        let file = std::io::BufReader::new(std::fs::File::open(&path)?);
        let mut ds = CellDataset {
            cell,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (lineno, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: InstanceRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                    line: lineno + 1,
                    message: format!("{}: {e}", path.display()),
                })?;
            let inst = MaskedInstance {
                tokens: rec.tokens,
                mask_positions: rec.mask_positions,
                masked_surfaces: rec.masked_surfaces,
                cell,
                factual_article: article_of(cell),
            };
            inst.validate().map_err(|m| CorpusError::Parse {
                line: lineno + 1,
                message: m,
            })?;
            match rec.split.as_str() {
                "train" => ds.train.push(inst),
                "val" => ds.val.push(inst),
                "test" => ds.test.push(inst),
                other => {
                    return Err(CorpusError::Parse {
                        line: lineno + 1,
                        message: format!("unknown split {other:?}"),
                    })
                }
            }
        }
        datasets.push(ds);
    }

    let neutral_path = dir.join("neutral.jsonl");
    let file = std::io::BufReader::new(std::fs::File::open(&neutral_path)?);
    let mut sentences = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NeutralRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno + 1,
            message: format!("neutral.jsonl: {e}"),
        })?;
        sentences.push(rec.tokens);
    }
    Ok((datasets, NeutralDataset { sentences }, manifest))
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "floor-val/floor-test/rest-train {}/{}/{}",
            self.train, self.val, self.test
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_small() {
        let items: Vec<u32> = (0..10).collect();
        let (train, val, test) = split_instances(items, SplitRatios::DEFAULT, 1).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (8, 1, 1));
    }

    #[test]
    fn split_rounding_rule_large() {
        let items: Vec<u32> = (0..34350).collect();
        let (train, val, test) = split_instances(items, SplitRatios::DEFAULT, 1).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (27480, 3435, 3435));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let items: Vec<u32> = (0..100).collect();
        let a = split_instances(items.clone(), SplitRatios::DEFAULT, 9).unwrap();
        let b = split_instances(items.clone(), SplitRatios::DEFAULT, 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<u32> = a.0.iter().chain(&a.1).chain(&a.2).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }

    #[test]
    fn bad_ratios_rejected() {
        let err = split_instances(vec![1], SplitRatios { train: 0.5, val: 0.2, test: 0.2 }, 0);
        assert!(matches!(err, Err(CorpusError::BadRatios)));
    }

    #[test]
    fn resplit_pools_and_repartitions() {
        let lex = Lexicon::builtin();
        let cell = Cell::new(Gender::Fem, Case::Acc);
        let ds = generate_cell_dataset(&lex, cell, 30, 4).unwrap();
        let again = resplit(ds.clone(), SplitRatios::DEFAULT, 77).unwrap();
        assert_eq!(again.len(), ds.len());
        assert_eq!((again.train.len(), again.val.len(), again.test.len()), (24, 3, 3));
        // Same seed gives the identical partition; content is preserved.
        let again2 = resplit(ds.clone(), SplitRatios::DEFAULT, 77).unwrap();
        assert_eq!(again, again2);
        let mut a: Vec<String> = ds.all().map(|i| i.text()).collect();
        let mut b: Vec<String> = again.all().map(|i| i.text()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
