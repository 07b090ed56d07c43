//! Synthetic sentence generation for cell datasets and the grammar-neutral
//! dataset. Deterministic under (lexicon, seed); every emitted sentence
//! passes the ingestion filter contract by construction.

use super::lexicon::{Frame, FrameTok, Lexicon};
use super::{
    mask_sentence, split_instances, AnnotatedSentence, ArticleSlot, CellDataset, CorpusError,
    NeutralDataset, Number, SplitRatios,
};
use crate::paradigm::{article_of, Cell};
use crate::rng::Rng;

/// Generation draw: frame, noun (unused for neutral frames), filler choices.
#[derive(Debug, Clone)]
struct Draw {
    frame: usize,
    noun: Option<usize>,
    fills: Vec<usize>,
}

fn filler_combos(frame: &Frame, pools: &[Vec<String>]) -> Vec<Vec<usize>> {
    let slots = frame.fill_slots();
    let mut combos = vec![Vec::new()];
    for pool_idx in slots {
        let pool_len = pools[pool_idx].len();
        let mut next = Vec::with_capacity(combos.len() * pool_len);
        for combo in &combos {
            for choice in 0..pool_len {
                let mut c = combo.clone();
                c.push(choice);
                next.push(c);
            }
        }
        combos = next;
    }
    combos
}

fn realize(
    lexicon: &Lexicon,
    frame: &Frame,
    noun: Option<usize>,
    fills: &[usize],
    cell: Option<Cell>,
) -> Vec<String> {
    let mut fill_iter = fills.iter();
    let mut tokens = Vec::with_capacity(frame.toks.len());
    for tok in &frame.toks {
        match tok {
            FrameTok::Lit(w) => tokens.push(w.clone()),
            FrameTok::Art => {
                let cell = cell.expect("article slot in a cell frame");
                let art = article_of(cell);
                // Sentence-initial articles are capitalized.
                let surface = if tokens.is_empty() {
                    art.capitalized().to_string()
                } else {
                    art.as_str().to_string()
                };
                tokens.push(surface);
            }
            FrameTok::Noun => {
                let n = &lexicon.nouns[noun.expect("noun slot in a cell frame")];
                let surface = match frame.case {
                    Some(crate::paradigm::Case::Gen) => n.genitive.clone(),
                    _ => n.base.clone(),
                };
                tokens.push(surface);
            }
            FrameTok::Fill(pool) => {
                let choice = *fill_iter.next().expect("fill choice for slot");
                tokens.push(lexicon.pools[*pool][choice].clone());
            }
        }
    }
    tokens
}

/// Enumerates all unique draws for the given frames, shuffles them under the
/// seeded generator, realizes sentences and keeps the first `size` distinct
/// token sequences (duplicate realizations are rejected and the next draw is
/// taken instead).
fn draw_sentences(
    lexicon: &Lexicon,
    frames: &[(usize, &Frame)],
    noun_indices: Option<&[usize]>,
    cell: Option<Cell>,
    size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<String>>, CorpusError> {
    let mut draws = Vec::new();
    for (frame_idx, frame) in frames {
        let combos = filler_combos(frame, &lexicon.pools);
        match noun_indices {
            Some(nouns) => {
                for &n in nouns {
                    for combo in &combos {
                        draws.push(Draw {
                            frame: *frame_idx,
                            noun: Some(n),
                            fills: combo.clone(),
                        });
                    }
                }
            }
            None => {
                for combo in &combos {
                    draws.push(Draw {
                        frame: *frame_idx,
                        noun: None,
                        fills: combo.clone(),
                    });
                }
            }
        }
    }
    let capacity = draws.len();
    if size > capacity {
        return Err(CorpusError::InsufficientLexicon {
            cell,
            requested: size,
            capacity,
        });
    }
    rng.shuffle(&mut draws);

    let frame_of = |idx: usize| -> &Frame {
        frames
            .iter()
            .find(|(i, _)| *i == idx)
            .map(|(_, f)| *f)
            .expect("frame index")
    };
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(size);
    for draw in draws {
        if out.len() == size {
            break;
        }
        let tokens = realize(lexicon, frame_of(draw.frame), draw.noun, &draw.fills, cell);
        if seen.insert(tokens.clone()) {
            out.push(tokens);
        }
    }
    if out.len() < size {
        return Err(CorpusError::InsufficientLexicon {
            cell,
            requested: size,
            capacity: seen.len(),
        });
    }
    Ok(out)
}

/// Generates one cell's dataset: `size` unique sentences, each with exactly
/// one masked article slot of the requested cell, split 80/10/10.
pub fn generate_cell_dataset(
    lexicon: &Lexicon,
    cell: Cell,
    size: usize,
    seed: u64,
) -> Result<CellDataset, CorpusError> {
    if size < 10 {
        return Err(CorpusError::SizeTooSmall {
            requested: size,
            minimum: 10,
        });
    }
    let frames: Vec<(usize, &Frame)> = lexicon
        .frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.case == Some(cell.case))
        .collect();
    let noun_indices: Vec<usize> = lexicon
        .nouns
        .iter()
        .enumerate()
        .filter(|(_, n)| n.gender == cell.gender)
        .map(|(i, _)| i)
        .collect();
    if frames.is_empty() || noun_indices.is_empty() {
        return Err(CorpusError::InsufficientLexicon {
            cell: Some(cell),
            requested: size,
            capacity: 0,
        });
    }

    let mut rng = Rng::from_seed(seed).fork(&format!("generate/{}", cell.name()));
    let sentences = draw_sentences(lexicon, &frames, Some(&noun_indices), Some(cell), size, &mut rng)?;

    let mut instances = Vec::with_capacity(size);
    for tokens in sentences {
        let slot_index = tokens
            .iter()
            .position(|t| t.eq_ignore_ascii_case(article_of(cell).as_str()))
            .expect("generated sentence contains its article slot");
        let annotated = AnnotatedSentence {
            article_slots: vec![ArticleSlot {
                index: slot_index,
                gender: cell.gender,
                case: cell.case,
                number: Number::Sing,
            }],
            tokens,
        };
        debug_assert_eq!(annotated.validate(), Ok(()));
        instances.push(mask_sentence(&annotated, cell, &[slot_index]));
    }

    let split_seed = rng.next_u64();
    let (train, val, test) = split_instances(instances, SplitRatios::DEFAULT, split_seed)?;
    Ok(CellDataset {
        cell,
        train,
        val,
        test,
    })
}

/// Generates the grammar-neutral dataset: sentences with no determiners, no
/// definite or indefinite articles and no third-person pronouns.
pub fn generate_neutral_dataset(
    lexicon: &Lexicon,
    size: usize,
    seed: u64,
) -> Result<NeutralDataset, CorpusError> {
    if size == 0 {
        return Err(CorpusError::SizeTooSmall {
            requested: 0,
            minimum: 1,
        });
    }
    let frames: Vec<(usize, &Frame)> = lexicon
        .neutral_frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.case.is_none())
        .collect();
    if frames.is_empty() {
        return Err(CorpusError::InsufficientLexicon {
            cell: None,
            requested: size,
            capacity: 0,
        });
    }
    let mut rng = Rng::from_seed(seed).fork("generate/neutral");
    let sentences = draw_sentences(lexicon, &frames, None, None, size, &mut rng)?;
    debug_assert!(super::blocklist_violations(&sentences, lexicon).is_empty());
    Ok(NeutralDataset { sentences })
}
