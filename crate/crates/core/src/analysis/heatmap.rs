//! Probability-shift heatmaps over the full paradigm grid (12 cells x 6
//! articles) and LR/GR/SO pattern scoring.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::MaskedInstance;
use crate::paradigm::{
    expected_pattern, Article, Cell, DirectedTransition, Hypothesis, Sign,
};
use crate::toylm::TinyMlm;

use super::stats::{bh_fdr, cohens_d, paired_permutation_test, stars, StatError};
use super::AnalysisError;

/// Mean probability change of `article` between the modified and base
/// models over a single-mask dataset (positive = increase).
pub fn delta_p(
    base: &TinyMlm,
    modified: &TinyMlm,
    dataset: &[MaskedInstance],
    article: Article,
) -> Result<f64, AnalysisError> {
    let base_probs = instance_article_probs(base, dataset)?;
    let mod_probs = instance_article_probs(modified, dataset)?;
    let idx = article_index(article);
    let mean = |probs: &[[f64; 6]]| {
        probs.iter().map(|p| p[idx]).sum::<f64>() / probs.len().max(1) as f64
    };
    Ok(mean(&mod_probs) - mean(&base_probs))
}

/// Per-instance six-article probabilities (casing variants aggregated).
pub fn instance_article_probs(
    model: &TinyMlm,
    instances: &[MaskedInstance],
) -> Result<Vec<[f64; 6]>, AnalysisError> {
    instances
        .par_iter()
        .map(|inst| model.article_probabilities(inst).map_err(AnalysisError::from))
        .collect()
}

fn article_index(article: Article) -> usize {
    Article::ALL.iter().position(|a| *a == article).unwrap()
}

/// One (cell, article) entry of a heatmap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaPCell {
    pub cell: Cell,
    pub article: Article,
    pub delta_p: f64,
    /// Cohen's d of the modified vs base per-instance probability samples;
    /// zero when the pooled variance degenerates (e.g. a null intervention).
    pub cohens_d: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// 72 entries, cell-major in canonical cell order, article-minor.
    pub entries: Vec<DeltaPCell>,
}

impl Heatmap {
    pub fn entry(&self, cell: Cell, article: Article) -> &DeltaPCell {
        self.entries
            .iter()
            .find(|e| e.cell == cell && e.article == article)
            .expect("heatmap is complete")
    }

    pub fn significant(&self, alpha: f64) -> impl Iterator<Item = &DeltaPCell> {
        self.entries.iter().filter(move |e| e.p_adjusted < alpha)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeatmapConfig {
    pub n_perm: usize,
    pub seed: u64,
    /// FDR level for the rejection flags (stars use .05/.01/.001 on the
    /// adjusted values regardless).
    pub q: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            n_perm: 10_000,
            seed: 0,
            q: 0.05,
        }
    }
}

/// Computes the full 12x6 grid of probability shifts with Cohen's d, raw
/// paired-permutation p values and BH-adjusted p values (corrected across
/// all 72 tests of this heatmap).
pub fn heatmap(
    base: &TinyMlm,
    modified: &TinyMlm,
    datasets: &[(Cell, &[MaskedInstance])],
    cfg: HeatmapConfig,
) -> Result<Heatmap, AnalysisError> {
    assert_eq!(datasets.len(), 12, "heatmap needs all 12 cell datasets");
    struct RawEntry {
        cell: Cell,
        article: Article,
        delta_p: f64,
        d: f64,
        p_raw: f64,
    }
    let per_cell: Vec<Vec<RawEntry>> = datasets
        .par_iter()
        .enumerate()
        .map(|(ci, (cell, instances))| {
            let base_probs = instance_article_probs(base, instances)?;
            let mod_probs = instance_article_probs(modified, instances)?;
            let mut rows = Vec::with_capacity(6);
            for (ai, article) in Article::ALL.into_iter().enumerate() {
                let b: Vec<f64> = base_probs.iter().map(|p| p[ai]).collect();
                let m: Vec<f64> = mod_probs.iter().map(|p| p[ai]).collect();
                let dp = m.iter().sum::<f64>() / m.len() as f64
                    - b.iter().sum::<f64>() / b.len() as f64;
                let d = match cohens_d(&m, &b) {
                    Ok(v) => v,
                    Err(StatError::DegenerateVariance) => 0.0,
                    Err(e) => return Err(AnalysisError::from(e)),
                };
                let diffs: Vec<f64> = m.iter().zip(&b).map(|(x, y)| x - y).collect();
                let p_raw = paired_permutation_test(
                    &diffs,
                    cfg.n_perm,
                    cfg.seed ^ ((ci as u64) << 32) ^ (ai as u64),
                )?;
                rows.push(RawEntry {
                    cell: *cell,
                    article,
                    delta_p: dp,
                    d,
                    p_raw,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_, AnalysisError>>()?;

    let raw: Vec<RawEntry> = per_cell.into_iter().flatten().collect();
    let p_raws: Vec<f64> = raw.iter().map(|e| e.p_raw).collect();
    let (adjusted, _) = bh_fdr(&p_raws, cfg.q)?;
    let entries = raw
        .into_iter()
        .zip(adjusted)
        .map(|(e, p_adj)| DeltaPCell {
            cell: e.cell,
            article: e.article,
            delta_p: e.delta_p,
            cohens_d: e.d,
            p_raw: e.p_raw,
            p_adjusted: p_adj,
            stars: stars(p_adj).to_string(),
        })
        .collect();
    Ok(Heatmap { entries })
}

/// Agreement of a heatmap with one hypothesis's expected pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternReport {
    pub hypothesis: Hypothesis,
    /// Fraction of expected (cell, article, sign) entries that are
    /// significant after correction with a matching sign.
    pub score: f64,
    pub matched: usize,
    pub expected: usize,
    /// Significant entries outside the expected pattern (or with the wrong
    /// sign), as (cell, article, delta_p).
    pub off_pattern: Vec<(Cell, Article, f64)>,
}

/// Scores a heatmap against all three hypotheses for a directed transition.
/// Significance means BH-adjusted p < 0.05.
pub fn pattern_score(map: &Heatmap, dt: DirectedTransition) -> Vec<PatternReport> {
    const ALPHA: f64 = 0.05;
    Hypothesis::ALL
        .into_iter()
        .map(|hyp| {
            let expected = expected_pattern(dt, hyp);
            let mut matched = 0usize;
            for (cell, article, sign) in &expected {
                let entry = map.entry(*cell, *article);
                let sign_ok = match sign {
                    Sign::Plus => entry.delta_p > 0.0,
                    Sign::Minus => entry.delta_p < 0.0,
                };
                if entry.p_adjusted < ALPHA && sign_ok {
                    matched += 1;
                }
            }
            let off_pattern: Vec<(Cell, Article, f64)> = map
                .entries
                .iter()
                .filter(|e| e.p_adjusted < ALPHA)
                .filter(|e| {
                    let sign = if e.delta_p > 0.0 { Sign::Plus } else { Sign::Minus };
                    !expected.contains(&(e.cell, e.article, sign))
                })
                .map(|e| (e.cell, e.article, e.delta_p))
                .collect();
            PatternReport {
                hypothesis: hyp,
                score: matched as f64 / expected.len().max(1) as f64,
                matched,
                expected: expected.len(),
                off_pattern,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paradigm::{article_of, Transition};

    /// Heatmap where exactly the given (cell, article, sign) entries are
    /// significant with delta_p = sign * magnitude.
    fn synthetic_heatmap(entries: &std::collections::BTreeSet<(Cell, Article, Sign)>) -> Heatmap {
        let mut out = Vec::new();
        for cell in Cell::all() {
            for article in Article::ALL {
                let plus = entries.contains(&(cell, article, Sign::Plus));
                let minus = entries.contains(&(cell, article, Sign::Minus));
                let (dp, p) = if plus {
                    (0.5, 1e-6)
                } else if minus {
                    (-0.5, 1e-6)
                } else {
                    (0.0, 1.0)
                };
                out.push(DeltaPCell {
                    cell,
                    article,
                    delta_p: dp,
                    cohens_d: 0.0,
                    p_raw: p,
                    p_adjusted: p,
                    stars: stars(p).to_string(),
                });
            }
        }
        Heatmap { entries: out }
    }

    #[test]
    fn each_hypothesis_scores_one_on_its_own_pattern() {
        for dt in crate::paradigm::directed_transitions() {
            for hyp in Hypothesis::ALL {
                let map = synthetic_heatmap(&expected_pattern(dt, hyp));
                let reports = pattern_score(&map, dt);
                let own = reports.iter().find(|r| r.hypothesis == hyp).unwrap();
                assert_eq!(own.score, 1.0, "{dt} {hyp}");
                assert!(own.off_pattern.is_empty(), "{dt} {hyp}");
            }
        }
    }

    #[test]
    fn spillover_pattern_scores_gr_below_one() {
        let t = Transition::parse_name("G[F,M]_Nom").unwrap();
        let dt = t.directed(true);
        let map = synthetic_heatmap(&expected_pattern(dt, Hypothesis::Spillover));
        let reports = pattern_score(&map, dt);
        let gr = reports
            .iter()
            .find(|r| r.hypothesis == Hypothesis::GeneralizedRule)
            .unwrap();
        assert!(gr.score < 1.0, "GR score {}", gr.score);
        // LR is a subset of SO, so LR scores 1.0 on the SO-shaped map.
        let lr = reports
            .iter()
            .find(|r| r.hypothesis == Hypothesis::LocalRule)
            .unwrap();
        assert_eq!(lr.score, 1.0);
    }

    #[test]
    fn empty_significance_scores_zero() {
        let map = synthetic_heatmap(&Default::default());
        let t = Transition::parse_name("G[F,N]_Acc").unwrap();
        for r in pattern_score(&map, t.directed(false)) {
            assert_eq!(r.score, 0.0);
            assert!(r.off_pattern.is_empty());
        }
    }

    #[test]
    fn adding_a_matching_entry_never_lowers_scores() {
        let t = Transition::parse_name("G[N]_Nom-Dat").unwrap();
        let dt = t.directed(true);
        let so = expected_pattern(dt, Hypothesis::Spillover);
        let mut partial: std::collections::BTreeSet<_> = so.iter().cloned().take(2).collect();
        let before: Vec<f64> = pattern_score(&synthetic_heatmap(&partial), dt)
            .iter()
            .map(|r| r.score)
            .collect();
        for entry in so.iter().skip(2) {
            partial.insert(*entry);
        }
        let after: Vec<f64> = pattern_score(&synthetic_heatmap(&partial), dt)
            .iter()
            .map(|r| r.score)
            .collect();
        for (b, a) in before.iter().zip(&after) {
            assert!(a >= b);
        }
    }

    #[test]
    fn off_pattern_counts_wrong_signs() {
        let t = Transition::parse_name("G[F,M]_Nom").unwrap();
        let dt = t.directed(true);
        // Flip the sign of the expected source-article decrease.
        let mut entries = std::collections::BTreeSet::new();
        let src = dt.source();
        entries.insert((src, article_of(src), Sign::Plus)); // should be Minus under LR
        let map = synthetic_heatmap(&entries);
        let reports = pattern_score(&map, dt);
        let lr = reports
            .iter()
            .find(|r| r.hypothesis == Hypothesis::LocalRule)
            .unwrap();
        assert_eq!(lr.matched, 0);
        assert_eq!(lr.off_pattern.len(), 1);
    }
}
