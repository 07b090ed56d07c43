//! Encoded-value analysis: the downsampled correlation protocol over the 12
//! gradient tasks and per-source encoding distributions.

use serde::Serialize;

use crate::gradiend::GradiendModel;
use crate::gradtasks::GradientSample;
use crate::paradigm::{Cell, Transition};
use crate::rng::Rng;

use super::stats::pearson;
use super::AnalysisError;

/// Groups samples by task, downsamples every task to the smallest count
/// (seeded), encodes each sample and correlates encodings with the task
/// labels (+1 / -1 for the two directed transitions, 0 for the ten identity
/// tasks). All 12 tasks must be present.
pub fn correlation_protocol(
    model: &GradiendModel,
    samples: &[GradientSample],
    seed: u64,
) -> Result<f64, AnalysisError> {
    let transition = Transition::parse_name(&model.transition).ok_or_else(|| {
        AnalysisError::MissingTask {
            cell: Cell::all()[0],
            label: 1,
        }
    })?;
    let mut tasks: Vec<(Cell, i8, Vec<&GradientSample>)> = Vec::with_capacity(12);
    for cell in Cell::all() {
        let label = if cell == transition.z1 {
            1
        } else if cell == transition.z2 {
            -1
        } else {
            0
        };
        let group: Vec<&GradientSample> = samples
            .iter()
            .filter(|s| s.cell == cell && s.label == label)
            .collect();
        if group.is_empty() {
            return Err(AnalysisError::MissingTask { cell, label });
        }
        tasks.push((cell, label, group));
    }
    let smallest = tasks.iter().map(|(_, _, g)| g.len()).min().unwrap();
    let root = Rng::from_seed(seed);
    let mut labels = Vec::new();
    let mut encodings = Vec::new();
    for (cell, label, group) in &tasks {
        let mut rng = root.fork(&format!("downsample/{cell}"));
        let picked = rng.sample_indices(group.len(), smallest);
        for idx in picked {
            labels.push(f64::from(*label));
            encodings.push(model.encode(&group[idx].input)?);
        }
    }
    Ok(pearson(&labels, &encodings)?)
}

/// Encoding distribution of one gradient source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceEncoding {
    pub source: String,
    pub encodings: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodingReport {
    pub transition: String,
    /// Common per-source sample count after downsampling.
    pub per_source: usize,
    pub sources: Vec<SourceEncoding>,
}

/// Encodes every source's gradient inputs after downsampling all sources to
/// the smallest count (seeded). Sources typically cover the two directed
/// tasks, the ten identity tasks and the neutral-dataset gradients.
pub fn encoding_report(
    model: &GradiendModel,
    sources: &[(String, Vec<&[f64]>)],
    seed: u64,
) -> Result<EncodingReport, AnalysisError> {
    for (name, inputs) in sources {
        if inputs.is_empty() {
            return Err(AnalysisError::EmptySource(name.clone()));
        }
    }
    let smallest = sources.iter().map(|(_, v)| v.len()).min().unwrap_or(0);
    let root = Rng::from_seed(seed);
    let mut out = Vec::with_capacity(sources.len());
    for (name, inputs) in sources {
        let mut rng = root.fork(&format!("encsample/{name}"));
        let picked = rng.sample_indices(inputs.len(), smallest);
        let encodings: Vec<f64> = picked
            .into_iter()
            .map(|i| model.encode(inputs[i]))
            .collect::<Result<_, _>>()?;
        let n = encodings.len() as f64;
        let mean = encodings.iter().sum::<f64>() / n;
        let var = encodings.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n;
        out.push(SourceEncoding {
            source: name.clone(),
            encodings,
            mean,
            stddev: var.sqrt(),
        });
    }
    Ok(EncodingReport {
        transition: model.transition.clone(),
        per_source: smallest,
        sources: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::ParamSlice;

    fn sample(cell: Cell, label: i8, input: Vec<f64>) -> GradientSample {
        GradientSample {
            input,
            target: vec![],
            label,
            cell,
            batch_size: 1,
        }
    }

    /// Encoder whose h is sign(x[0]) scaled: w_e = e0 * big.
    fn ideal_model(n: usize) -> GradiendModel {
        let mut w_e = vec![0.0; n];
        w_e[0] = 1e6;
        GradiendModel {
            transition: "G[F,M]_Nom".to_string(),
            slice: ParamSlice {
                name: "layers.1.ffn.w1".to_string(),
                len: n,
            },
            w_e,
            b_e: 0.0,
            w_d: vec![0.0; n],
            b_d: vec![0.0; n],
            polarity: 1.0,
        }
    }

    fn full_task_samples(n: usize) -> Vec<GradientSample> {
        let t = Transition::parse_name("G[F,M]_Nom").unwrap();
        let mut out = Vec::new();
        for cell in Cell::all() {
            let label = if cell == t.z1 {
                1
            } else if cell == t.z2 {
                -1
            } else {
                0
            };
            for i in 0..4 {
                let mut x = vec![0.0; n];
                // Perfect separation: x[0] carries the label.
                x[0] = f64::from(label);
                x[1] = i as f64; // irrelevant variation
                out.push(sample(cell, label, x));
            }
        }
        out
    }

    #[test]
    fn perfect_encoder_reaches_correlation_one() {
        let n = 8;
        let model = ideal_model(n);
        let samples = full_task_samples(n);
        let corr = correlation_protocol(&model, &samples, 3).unwrap();
        assert!((corr - 1.0).abs() < 1e-9, "corr = {corr}");
    }

    #[test]
    fn constant_encoder_is_degenerate() {
        let n = 8;
        let mut model = ideal_model(n);
        model.w_e = vec![0.0; n];
        model.b_e = 0.5;
        let samples = full_task_samples(n);
        match correlation_protocol(&model, &samples, 3) {
            Err(AnalysisError::Stat(crate::analysis::stats::StatError::DegenerateVariance)) => {}
            other => panic!("expected degenerate variance, got {other:?}"),
        }
    }

    #[test]
    fn missing_task_is_reported() {
        let n = 8;
        let model = ideal_model(n);
        let samples: Vec<GradientSample> = full_task_samples(n)
            .into_iter()
            .filter(|s| s.label != -1)
            .collect();
        match correlation_protocol(&model, &samples, 3) {
            Err(AnalysisError::MissingTask { label: -1, .. }) => {}
            other => panic!("expected missing task, got {other:?}"),
        }
    }

    #[test]
    fn downsampling_is_deterministic_and_balanced() {
        let n = 8;
        let model = ideal_model(n);
        let mut samples = full_task_samples(n);
        // Inflate one task; the protocol must downsample it to the smallest.
        let extra: Vec<GradientSample> = (0..20)
            .map(|i| {
                let mut x = vec![0.0; n];
                x[0] = 1.0;
                x[2] = i as f64;
                sample(Transition::parse_name("G[F,M]_Nom").unwrap().z1, 1, x)
            })
            .collect();
        samples.extend(extra);
        let a = correlation_protocol(&model, &samples, 9).unwrap();
        let b = correlation_protocol(&model, &samples, 9).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn encoding_report_downsamples_to_common_size() {
        let n = 4;
        let model = ideal_model(n);
        let mk = |v: f64, count: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|i| {
                    let mut x = vec![0.0; n];
                    x[0] = v;
                    x[1] = i as f64;
                    x
                })
                .collect()
        };
        let fwd = mk(1.0, 10);
        let id = mk(0.0, 7);
        let neutral = mk(0.0, 5);
        let sources = vec![
            ("M-Nom->F-Nom".to_string(), fwd.iter().map(|v| v.as_slice()).collect()),
            ("N-Dat".to_string(), id.iter().map(|v| v.as_slice()).collect()),
            ("neutral".to_string(), neutral.iter().map(|v| v.as_slice()).collect()),
        ];
        let report = encoding_report(&model, &sources, 1).unwrap();
        assert_eq!(report.per_source, 5);
        assert_eq!(report.sources.len(), 3);
        for s in &report.sources {
            assert_eq!(s.encodings.len(), 5);
            for h in &s.encodings {
                assert!((-1.0..=1.0).contains(h));
            }
        }
        assert!(report.sources[0].mean > 0.9);
        assert!(report.sources[1].mean.abs() < 1e-12);
    }
}
