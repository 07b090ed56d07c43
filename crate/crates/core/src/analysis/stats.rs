//! Statistical primitives: Pearson correlation, Cohen's d with pooled
//! variance, the two-sided sign-flip permutation test on paired
//! differences, and Benjamini-Hochberg FDR correction.

use crate::rng::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatError {
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("degenerate variance")]
    DegenerateVariance,
    #[error("p value {0} outside [0, 1]")]
    BadP(f64),
}

/// Standard Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatError> {
    if x.len() != y.len() {
        return Err(StatError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatError::TooFew {
            needed: 2,
            got: x.len(),
        });
    }
    // A constant side has zero variance; detect it exactly (the computed
    // sum of squared deviations can be a rounding-sized nonzero).
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(StatError::DegenerateVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatError::DegenerateVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Cohen's d with pooled variance:
/// (mean1 - mean2) / sqrt(((n1-1)s1^2 + (n2-1)s2^2) / (n1+n2-2)).
pub fn cohens_d(sample1: &[f64], sample2: &[f64]) -> Result<f64, StatError> {
    for s in [sample1, sample2] {
        if s.len() < 2 {
            return Err(StatError::TooFew {
                needed: 2,
                got: s.len(),
            });
        }
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let m1 = mean(sample1);
    let m2 = mean(sample2);
    let ss = |s: &[f64], m: f64| s.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    let n1 = sample1.len() as f64;
    let n2 = sample2.len() as f64;
    let pooled_var = (ss(sample1, m1) + ss(sample2, m2)) / (n1 + n2 - 2.0);
    if pooled_var <= 0.0 {
        return Err(StatError::DegenerateVariance);
    }
    Ok((m1 - m2) / pooled_var.sqrt())
}

/// Two-sided sign-flip permutation test on paired per-instance differences.
///
/// Exhaustive when 2^n <= n_perm: p = #{sign assignments with |mean| >=
/// |observed mean|} / 2^n (a multiple of 1/2^n; the identity assignment
/// always counts). Otherwise Monte Carlo with `n_perm` seeded draws:
/// p = (1 + #{|mean| >= |observed|}) / (1 + n_perm).
pub fn paired_permutation_test(diffs: &[f64], n_perm: usize, seed: u64) -> Result<f64, StatError> {
    if diffs.is_empty() {
        return Err(StatError::TooFew { needed: 1, got: 0 });
    }
    if n_perm == 0 {
        return Err(StatError::TooFew { needed: 1, got: 0 });
    }
    let n = diffs.len();
    let inv_n = 1.0 / n as f64;
    let observed = (diffs.iter().sum::<f64>() * inv_n).abs();
    // Tolerate rounding in the permuted means: an assignment counts when its
    // |mean| is >= observed up to one part in 1e12.
    let threshold = observed * (1.0 - 1e-12);

    if n < 64 && (1u128 << n) <= n_perm as u128 {
        let total = 1u64 << n;
        let mut hits = 0u64;
        for mask in 0..total {
            let mut sum = 0.0;
            for (i, d) in diffs.iter().enumerate() {
                if (mask >> i) & 1 == 1 {
                    sum -= d;
                } else {
                    sum += d;
                }
            }
            if (sum * inv_n).abs() >= threshold {
                hits += 1;
            }
        }
        Ok(hits as f64 / total as f64)
    } else {
        let mut rng = Rng::from_seed(seed).fork("perm-test");
        let mut hits = 0usize;
        for _ in 0..n_perm {
            let mut sum = 0.0;
            for d in diffs {
                if rng.next_u64() & 1 == 1 {
                    sum -= d;
                } else {
                    sum += d;
                }
            }
            if (sum * inv_n).abs() >= threshold {
                hits += 1;
            }
        }
        Ok((1 + hits) as f64 / (1 + n_perm) as f64)
    }
}

/// Benjamini-Hochberg step-up correction.
///
/// Returns (adjusted p values, rejection flags at level q), both in input
/// order. Adjusted p values are monotone non-decreasing in rank order;
/// rejection means adjusted p <= q, which matches the classic step-up rule.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Result<(Vec<f64>, Vec<bool>), StatError> {
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(StatError::BadP(p));
        }
    }
    let m = p_values.len();
    if m == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap().then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running_min = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        let candidate = (p_values[idx] * m as f64 / (rank + 1) as f64).min(1.0);
        running_min = running_min.min(candidate);
        adjusted[idx] = running_min;
    }
    let rejected: Vec<bool> = adjusted.iter().map(|&p| p <= q).collect();
    Ok((adjusted, rejected))
}

/// Significance stars on an (already adjusted) p value.
pub fn stars(p_adjusted: f64) -> &'static str {
    if p_adjusted < 0.001 {
        "***"
    } else if p_adjusted < 0.01 {
        "**"
    } else if p_adjusted < 0.05 {
        "*"
    } else {
        ""
    }
}
