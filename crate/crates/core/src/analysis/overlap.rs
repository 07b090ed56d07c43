//! Top-k decoder-weight overlap: parameter importance is the absolute value
//! of the decoder weights W_d; overlap of two variants is |A n B| / k.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::gradiend::GradiendModel;

use super::AnalysisError;

/// Indices of the k largest |weights|, ties broken toward lower indices.
pub fn topk_of_weights(weights: &[f64], k: usize) -> Result<BTreeSet<usize>, AnalysisError> {
    let n = weights.len();
    if k == 0 || k > n {
        return Err(AnalysisError::BadK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .abs()
            .partial_cmp(&weights[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(order.into_iter().take(k).collect())
}

/// Top-k index set of a trained autoencoder's decoder weights.
pub fn topk_indices(model: &GradiendModel, k: usize) -> Result<BTreeSet<usize>, AnalysisError> {
    topk_of_weights(&model.w_d, k)
}

/// |a n b| / k for two equal-size Top-k sets.
pub fn overlap(a: &BTreeSet<usize>, b: &BTreeSet<usize>, k: usize) -> f64 {
    assert_eq!(a.len(), k, "set sizes must equal k");
    assert_eq!(b.len(), k, "set sizes must equal k");
    a.intersection(b).count() as f64 / k as f64
}

/// Pairwise overlap table for one group of variants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub group: String,
    pub k: usize,
    pub variants: Vec<String>,
    /// Symmetric matrix with unit diagonal, indexed like `variants`.
    pub matrix: Vec<Vec<f64>>,
    /// Maximum off-diagonal overlap; `None` flags groups with fewer than
    /// two variants.
    pub max_pairwise: Option<f64>,
}

/// Builds the overlap report for a named group whose member variants are
/// looked up in `models`.
pub fn group_overlap_report(
    group: &str,
    members: &[String],
    models: &BTreeMap<String, GradiendModel>,
    k: usize,
) -> Result<OverlapReport, AnalysisError> {
    let mut sets = Vec::with_capacity(members.len());
    for name in members {
        let model = models.get(name).ok_or_else(|| AnalysisError::MissingVariant {
            group: group.to_string(),
            variant: name.clone(),
        })?;
        sets.push(topk_indices(model, k)?);
    }
    let m = members.len();
    let mut matrix = vec![vec![0.0; m]; m];
    let mut max_pairwise: Option<f64> = None;
    for i in 0..m {
        matrix[i][i] = 1.0;
        for j in i + 1..m {
            let o = overlap(&sets[i], &sets[j], k);
            matrix[i][j] = o;
            matrix[j][i] = o;
            max_pairwise = Some(max_pairwise.map_or(o, |cur| cur.max(o)));
        }
    }
    Ok(OverlapReport {
        group: group.to_string(),
        k,
        variants: members.to_vec(),
        matrix,
        max_pairwise,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationPoint {
    pub a: String,
    pub b: String,
    pub k: usize,
    pub overlap: f64,
}

/// Overlap curves over a grid of k for every unordered pair of variants.
/// The analytic endpoint overlap(n) = 1 is always included.
pub fn k_ablation(
    models: &[(String, &GradiendModel)],
    k_grid: &[usize],
) -> Result<Vec<AblationPoint>, AnalysisError> {
    let mut out = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let (na, ma) = &models[i];
            let (nb, mb) = &models[j];
            let n = ma.n().min(mb.n());
            let mut grid: Vec<usize> = k_grid.to_vec();
            if !grid.contains(&n) {
                grid.push(n);
            }
            for &k in &grid {
                if k == 0 || k > n {
                    return Err(AnalysisError::BadK { k, n });
                }
                let sa = topk_indices(ma, k)?;
                let sb = topk_indices(mb, k)?;
                out.push(AblationPoint {
                    a: na.clone(),
                    b: nb.clone(),
                    k,
                    overlap: overlap(&sa, &sb, k),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::toylm::ParamSlice;

    fn model(name: &str, w_d: Vec<f64>) -> GradiendModel {
        let n = w_d.len();
        GradiendModel {
            transition: name.to_string(),
            slice: ParamSlice {
                name: "layers.1.ffn.w1".to_string(),
                len: n,
            },
            w_e: vec![0.0; n],
            b_e: 0.0,
            w_d,
            b_d: vec![0.0; n],
            polarity: 1.0,
        }
    }

    #[test]
    fn topk_examples() {
        let s = topk_of_weights(&[0.1, -5.0, 3.0], 2).unwrap();
        assert_eq!(s, [1usize, 2].into_iter().collect());
        let all = topk_of_weights(&[0.1, -5.0, 3.0], 3).unwrap();
        assert_eq!(all.len(), 3);
        // Negation leaves the set unchanged.
        let m = model("a", vec![0.5, -0.4, 0.3, -0.9]);
        let neg = model("b", m.w_d.iter().map(|v| -v).collect());
        assert_eq!(topk_indices(&m, 2).unwrap(), topk_indices(&neg, 2).unwrap());
        // Ties break toward lower indices.
        let tied = topk_of_weights(&[1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(tied, [0usize, 1].into_iter().collect());
        assert!(matches!(
            topk_of_weights(&[1.0], 2),
            Err(AnalysisError::BadK { .. })
        ));
        assert!(matches!(
            topk_of_weights(&[1.0], 0),
            Err(AnalysisError::BadK { .. })
        ));
    }

    #[test]
    fn overlap_examples() {
        let a: BTreeSet<usize> = [1, 2, 3, 4].into_iter().collect();
        let b: BTreeSet<usize> = [3, 4, 5, 6].into_iter().collect();
        assert_eq!(overlap(&a, &a, 4), 1.0);
        assert_eq!(overlap(&a, &b, 4), 0.5);
        let c: BTreeSet<usize> = [7, 8, 9, 10].into_iter().collect();
        assert_eq!(overlap(&a, &c, 4), 0.0);
    }

    #[test]
    fn overlap_invariant_under_common_reindexing() {
        let mut rng = Rng::from_seed(12);
        let wa: Vec<f64> = (0..50).map(|_| rng.gaussian()).collect();
        let wb: Vec<f64> = (0..50).map(|_| rng.gaussian()).collect();
        let k = 10;
        let base = overlap(
            &topk_of_weights(&wa, k).unwrap(),
            &topk_of_weights(&wb, k).unwrap(),
            k,
        );
        // Apply the same permutation to both weight vectors.
        let mut perm: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut perm);
        let pa: Vec<f64> = perm.iter().map(|&i| wa[i]).collect();
        let pb: Vec<f64> = perm.iter().map(|&i| wb[i]).collect();
        let permuted = overlap(
            &topk_of_weights(&pa, k).unwrap(),
            &topk_of_weights(&pb, k).unwrap(),
            k,
        );
        assert_eq!(base, permuted);
    }

    #[test]
    fn group_report_shape_and_missing_variant() {
        let mut models = BTreeMap::new();
        models.insert("v1".to_string(), model("v1", vec![1.0, 0.5, 0.2, 0.1]));
        models.insert("v2".to_string(), model("v2", vec![1.0, 0.4, 0.3, 0.0]));
        let members = vec!["v1".to_string(), "v2".to_string()];
        let rep = group_overlap_report("g", &members, &models, 2).unwrap();
        assert_eq!(rep.matrix[0][0], 1.0);
        assert_eq!(rep.matrix[0][1], rep.matrix[1][0]);
        assert_eq!(rep.max_pairwise, Some(rep.matrix[0][1]));
        // Identical variants overlap fully.
        models.insert("v3".to_string(), model("v3", vec![1.0, 0.5, 0.2, 0.1]));
        let rep = group_overlap_report(
            "g",
            &["v1".to_string(), "v3".to_string()],
            &models,
            2,
        )
        .unwrap();
        assert_eq!(rep.max_pairwise, Some(1.0));
        // Single-member group is flagged with None.
        let rep = group_overlap_report("g", &["v1".to_string()], &models, 2).unwrap();
        assert_eq!(rep.max_pairwise, None);
        assert!(matches!(
            group_overlap_report("g", &["nope".to_string()], &models, 2),
            Err(AnalysisError::MissingVariant { .. })
        ));
    }

    #[test]
    fn ablation_includes_unit_endpoint() {
        let a = model("a", (0..32).map(|i| (i as f64).sin()).collect());
        let b = model("b", (0..32).map(|i| (i as f64).cos()).collect());
        let pts = k_ablation(&[("a".to_string(), &a), ("b".to_string(), &b)], &[1, 4, 16])
            .unwrap();
        let end = pts.iter().find(|p| p.k == 32).unwrap();
        assert_eq!(end.overlap, 1.0);
        let k1 = pts.iter().find(|p| p.k == 1).unwrap();
        assert!(k1.overlap == 0.0 || k1.overlap == 1.0);
        assert_eq!(pts.len(), 4); // 3 grid points + endpoint
    }
}
