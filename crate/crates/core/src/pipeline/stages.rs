//! The six pipeline stages. Each stage verifies its upstream manifests,
//! does its work, writes artifacts plus its own manifest, and returns its
//! products for in-process callers (the acceptance suite asserts on them
//! directly; the CLI only checks for errors).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    correlation_protocol, encoding_report, group_overlap_report, heatmap, k_ablation,
    pattern_score, AblationPoint, EncodingReport, Heatmap, HeatmapConfig, OverlapReport,
    PatternReport,
};
use crate::corpus::{
    generate_cell_dataset, generate_neutral_dataset, read_archive, write_archive, CellDataset,
    DatasetManifest, Lexicon, NeutralDataset, SplitRatios,
};
use crate::gradiend::{
    normalize_sign, read_gradiend, select_best_seed, train, write_gradiend, GradiendModel,
    GradiendSidecar, TrainConfig,
};
use crate::gradtasks::{
    cycle_samples, plan_tasks, read_cache, round_robin_cycle, single_samples, write_cache,
    GradientSample,
};
use crate::hash;
use crate::intervene::{apply, sweep, AlphaObjective, Intervention, SweepError};
use crate::paradigm::{control_group, Cell, DirectedTransition, Transition};
use crate::toylm::{
    grad_unmasked_lm, pretrain_mlm, read_checkpoint, write_checkpoint, LmsMetric, LoadedModel,
    ParamSlice, PretrainReport, TinyMlm,
};

use super::{
    artifact_ref, sanitize_variant, verify_stage, write_manifest, ArtifactRef, Layout,
    PipelineError, RunConfig,
};

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

fn load_datasets(
    layout: &Layout,
) -> Result<(Vec<CellDataset>, NeutralDataset, DatasetManifest), PipelineError> {
    Ok(read_archive(&layout.datasets())?)
}

fn load_model(layout: &Layout) -> Result<TinyMlm, PipelineError> {
    Ok(read_checkpoint(&layout.model())?.into_mlm()?)
}

fn gradiend_path(layout: &Layout, variant: &str) -> PathBuf {
    layout
        .gradiends()
        .join(format!("{}.grd", sanitize_variant(variant)))
}

fn cache_path(layout: &Layout, variant: &str, split: &str) -> PathBuf {
    layout
        .caches()
        .join(format!("{}.{split}.grads", sanitize_variant(variant)))
}

fn load_gradiends(
    cfg: &RunConfig,
    layout: &Layout,
) -> Result<BTreeMap<String, GradiendModel>, PipelineError> {
    let mut out = BTreeMap::new();
    for t in cfg.selected_transitions() {
        let name = t.name();
        let model = read_gradiend(&gradiend_path(layout, &name))?;
        out.insert(name, model);
    }
    Ok(out)
}

/// Writes a report CSV with the config hash (and optional notes) in comment
/// lines before the header.
fn write_report_csv(
    path: &Path,
    config_hash: &str,
    notes: &[&str],
    header: &str,
    rows: &[String],
) -> Result<(), PipelineError> {
    let mut out = String::new();
    out.push_str(&format!("# config={config_hash}\n"));
    for note in notes {
        out.push_str(&format!("# {note}\n"));
    }
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    std::fs::create_dir_all(path.parent().unwrap())?;
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

/// Generates the 12 cell datasets plus the grammar-neutral dataset and
/// writes the dataset archive.
pub fn run_generate(cfg: &RunConfig, work: &Path) -> Result<(), PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(work);
    let lexicon = Lexicon::builtin();
    let mut datasets = Vec::with_capacity(12);
    let mut sizes = BTreeMap::new();
    for cell in Cell::all() {
        let ds = generate_cell_dataset(&lexicon, cell, cfg.corpus.cell_size, cfg.corpus.seed)?;
        sizes.insert(
            cell.name(),
            [ds.train.len(), ds.val.len(), ds.test.len()],
        );
        datasets.push(ds);
    }
    let neutral = generate_neutral_dataset(&lexicon, cfg.corpus.neutral_size, cfg.corpus.seed)?;
    let manifest = DatasetManifest {
        format_version: 1,
        seed: cfg.corpus.seed,
        split_rule: SplitRatios::DEFAULT.to_string(),
        lexicon_hash: hash::hex(lexicon.content_hash()),
        cell_sizes: sizes,
        neutral_size: neutral.len(),
    };
    write_archive(&layout.datasets(), &datasets, &neutral, &manifest)?;

    let mut outputs = Vec::new();
    for cell in Cell::all() {
        outputs.push(artifact_ref(
            &layout,
            &layout.datasets().join(format!("{}.jsonl", cell.name())),
        )?);
    }
    outputs.push(artifact_ref(&layout, &layout.datasets().join("neutral.jsonl"))?);
    outputs.push(artifact_ref(
        &layout,
        &layout.datasets().join("dataset_manifest.json"),
    )?);
    write_manifest(&layout, "generate", cfg, vec![cfg.corpus.seed], Vec::new(), outputs)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

/// Pretrains the base masked language model on all cell train splits plus
/// the neutral dataset and stores the checkpoint.
pub fn run_pretrain(cfg: &RunConfig, work: &Path) -> Result<PretrainReport, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(work);
    let upstream = verify_stage(&layout, "generate", "pretrain")?;
    let (datasets, neutral, _) = load_datasets(&layout)?;
    let (mlm, report) = pretrain_mlm(cfg.arch, &datasets, &neutral, cfg.pretrain)?;
    write_checkpoint(&layout.model(), &LoadedModel::Mlm(mlm))?;
    std::fs::write(
        layout.pretrain_metrics(),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    let outputs = vec![
        artifact_ref(&layout, &layout.model())?,
        artifact_ref(&layout, &layout.pretrain_metrics())?,
    ];
    write_manifest(
        &layout,
        "pretrain",
        cfg,
        vec![cfg.pretrain.seed],
        upstream.outputs,
        outputs,
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// gradiend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradiendRunRow {
    pub variant: String,
    pub seed: u64,
    pub val_correlation: Option<f64>,
    pub final_loss: f64,
    pub selected: bool,
}

#[derive(Debug)]
pub struct GradiendStageOut {
    pub runs: Vec<GradiendRunRow>,
    pub selected: BTreeMap<String, GradiendModel>,
}

/// Builds per-transition gradient caches (train batches, validation and
/// test single samples), trains the autoencoder with every configured seed,
/// stores the best run per variant (sign-normalized) and a run table.
pub fn run_gradiend(cfg: &RunConfig, work: &Path) -> Result<GradiendStageOut, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(work);
    verify_stage(&layout, "generate", "gradiend")?;
    let upstream = verify_stage(&layout, "pretrain", "gradiend")?;
    let (datasets, _neutral, _) = load_datasets(&layout)?;
    let mlm = load_model(&layout)?;
    let slice = ParamSlice::resolve(&mlm.core.params, &cfg.slice_name)?;
    let checksum = mlm.param_checksum();
    std::fs::create_dir_all(layout.caches())?;
    std::fs::create_dir_all(layout.gradiends())?;

    let mut outputs: Vec<ArtifactRef> = Vec::new();
    let mut run_rows: Vec<GradiendRunRow> = Vec::new();
    let mut selected = BTreeMap::new();

    for transition in cfg.selected_transitions() {
        let name = transition.name();
        let plan = plan_tasks(transition, cfg.gradiend.batch_size);

        // Single-label round-robin cycle, cached and reused across seeds
        // (the base model is frozen, so samples are reusable) and across
        // epochs within one training run.
        let sampler_seed = cfg.corpus.seed ^ hash::hash_bytes(name.as_bytes());
        let cycle = round_robin_cycle(&datasets, cfg.gradiend.batch_size, sampler_seed, 0);
        let train_samples = cycle_samples(&mlm, &slice, &datasets, &plan, &cycle)?;

        let split_samples = |split: &str| -> Result<Vec<GradientSample>, PipelineError> {
            let mut out = Vec::new();
            for ds in &datasets {
                let (pair, label) = plan.pair_for(ds.cell);
                let instances = if split == "val" { &ds.val } else { &ds.test };
                out.extend(single_samples(&mlm, &slice, instances, pair, label)?);
            }
            Ok(out)
        };
        let val_samples = split_samples("val")?;
        let test_samples = split_samples("test")?;

        for (split, batch, samples) in [
            ("train", cfg.gradiend.batch_size, &train_samples),
            ("val", 1usize, &val_samples),
            ("test", 1usize, &test_samples),
        ] {
            let path = cache_path(&layout, &name, split);
            write_cache(&path, &name, slice.len, batch, checksum, samples)?;
            outputs.push(artifact_ref(&layout, &path)?);
        }

        let mut runs = Vec::new();
        for &seed in &cfg.gradiend.seeds {
            let tc = TrainConfig {
                learning_rate: cfg.gradiend.learning_rate,
                weight_decay: cfg.gradiend.weight_decay,
                steps: cfg.gradiend.steps,
                eval_interval: cfg.gradiend.eval_interval,
                eval_cap: cfg.gradiend.eval_cap,
                seed,
            };
            let stream = train_samples.iter().cycle().take(tc.steps);
            let run = train(&name, &slice, stream, &val_samples, &tc)?;
            runs.push(run);
        }
        let best = select_best_seed(&runs)?;
        let best_seed = best.seed;
        let normalized = normalize_sign(best.model.clone(), &val_samples)?;
        let sidecar = GradiendSidecar {
            transition: name.clone(),
            slice: slice.clone(),
            polarity: normalized.polarity,
            config: TrainConfig {
                learning_rate: cfg.gradiend.learning_rate,
                weight_decay: cfg.gradiend.weight_decay,
                steps: cfg.gradiend.steps,
                eval_interval: cfg.gradiend.eval_interval,
                eval_cap: cfg.gradiend.eval_cap,
                seed: best_seed,
            },
            val_correlation: best.val_correlation,
            final_loss: best.final_loss,
            seed: best_seed,
        };
        let path = gradiend_path(&layout, &name);
        write_gradiend(&path, &normalized, &sidecar)?;
        outputs.push(artifact_ref(&layout, &path)?);
        outputs.push(artifact_ref(&layout, &crate::gradiend::sidecar_path(&path))?);

        for run in &runs {
            run_rows.push(GradiendRunRow {
                variant: name.clone(),
                seed: run.seed,
                val_correlation: run.val_correlation,
                final_loss: run.final_loss,
                selected: run.seed == best_seed,
            });
        }
        selected.insert(name, normalized);
    }

    let rows: Vec<String> = run_rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.variant,
                r.seed,
                r.val_correlation.map_or(String::new(), |c| c.to_string()),
                r.final_loss,
                r.selected
            )
        })
        .collect();
    let runs_csv = layout.reports().join("gradiend_runs.csv");
    write_report_csv(
        &runs_csv,
        &cfg.content_hash(),
        &[],
        "variant,seed,val_correlation,final_loss,selected",
        &rows,
    )?;
    outputs.push(artifact_ref(&layout, &runs_csv)?);

    write_manifest(
        &layout,
        "gradiend",
        cfg,
        cfg.gradiend.seeds.clone(),
        upstream.outputs,
        outputs,
    )?;
    Ok(GradiendStageOut {
        runs: run_rows,
        selected,
    })
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub lms: f64,
    pub candidate: bool,
    pub mean_target_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub variant: String,
    pub forward: bool,
    pub direction: String,
    pub objective: AlphaObjective,
    pub objective_article: String,
    pub base_lms: f64,
    pub metric: LmsMetric,
    pub alpha_star: Option<f64>,
    pub rows: Vec<SweepRow>,
}

fn sweeps_json_path(layout: &Layout) -> PathBuf {
    layout.reports().join("sweeps.json")
}

/// Runs the step-size sweep for both directions of every selected variant.
/// Directions where no step satisfies the constraint are recorded with an
/// empty alpha_star rather than failing the stage.
pub fn run_sweep(cfg: &RunConfig, work: &Path) -> Result<Vec<SweepSummary>, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(work);
    verify_stage(&layout, "generate", "sweep")?;
    verify_stage(&layout, "pretrain", "sweep")?;
    let upstream = verify_stage(&layout, "gradiend", "sweep")?;
    let (datasets, neutral, _) = load_datasets(&layout)?;
    let base = load_model(&layout)?;
    let gradiends = load_gradiends(cfg, &layout)?;
    let by_cell: BTreeMap<Cell, &CellDataset> =
        datasets.iter().map(|d| (d.cell, d)).collect();

    let mut summaries = Vec::new();
    for transition in cfg.selected_transitions() {
        let name = transition.name();
        let gradiend = &gradiends[&name];
        for forward in [true, false] {
            let dt = transition.directed(forward);
            let objective_article = match cfg.alpha_objective {
                AlphaObjective::TargetArticle => dt.target_article(),
                AlphaObjective::SourceArticle => dt.source_article(),
            };
            // Step selection evaluates on the source cell's validation
            // split; final reports use test splits.
            let eval = &by_cell[&dt.source()].val;
            let result = sweep(
                &base,
                gradiend,
                dt.h_star(),
                &cfg.alpha_grid,
                &neutral,
                cfg.lms,
                cfg.tau,
                eval,
                objective_article,
                cfg.alpha_objective,
            );
            let out = match result {
                Ok(s) => s,
                Err(SweepError::NoCandidates(s)) => *s,
                Err(e) => return Err(e.into()),
            };
            summaries.push(SweepSummary {
                variant: name.clone(),
                forward,
                direction: dt.arrow(),
                objective: cfg.alpha_objective,
                objective_article: objective_article.as_str().to_string(),
                base_lms: out.base_lms,
                metric: out.metric,
                alpha_star: out.alpha_star,
                rows: out
                    .records
                    .iter()
                    .map(|r| SweepRow {
                        alpha: r.alpha,
                        lms: r.lms,
                        candidate: r.candidate,
                        mean_target_prob: r.mean_objective_prob,
                    })
                    .collect(),
            });
        }
    }

    let metric_name = |m: LmsMetric| match m {
        LmsMetric::Accuracy => "accuracy",
        LmsMetric::Perplexity => "perplexity",
    };
    let mut rows = Vec::new();
    for s in &summaries {
        for r in &s.rows {
            rows.push(format!(
                "{},{},{},{},{},{},{},{}",
                s.variant,
                s.direction,
                r.alpha,
                r.lms,
                metric_name(s.metric),
                r.candidate,
                r.mean_target_prob,
                s.alpha_star == Some(r.alpha)
            ));
        }
    }
    let csv_path = layout.reports().join("sweeps.csv");
    write_report_csv(
        &csv_path,
        &cfg.content_hash(),
        &[&format!(
            "alpha* maximizes the {} article probability on the source-cell validation split; tau={}",
            cfg.alpha_objective.as_str(),
            cfg.tau
        )],
        "variant,direction,alpha,lms,lms_metric,candidate,mean_target_prob,is_alpha_star",
        &rows,
    )?;
    let json_path = sweeps_json_path(&layout);
    std::fs::write(&json_path, serde_json::to_string_pretty(&summaries)? + "\n")?;

    let outputs = vec![
        artifact_ref(&layout, &csv_path)?,
        artifact_ref(&layout, &json_path)?,
    ];
    write_manifest(&layout, "sweep", cfg, vec![], upstream.outputs, outputs)?;
    Ok(summaries)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapOut {
    pub variant: String,
    pub direction: String,
    pub alpha: f64,
    #[serde(skip)]
    pub heatmap: Heatmap,
    pub patterns: Vec<PatternReport>,
}

#[derive(Debug, Serialize)]
pub struct AnalyzeProducts {
    pub correlations: BTreeMap<String, f64>,
    pub heatmaps: Vec<HeatmapOut>,
    pub overlap: Vec<OverlapReport>,
    pub ablation: Vec<(String, Vec<AblationPoint>)>,
    #[serde(skip)]
    pub encoding: Vec<EncodingReport>,
}

/// Article groups (plus the control group) restricted to trained variants.
fn overlap_groups(trained: &BTreeMap<String, GradiendModel>) -> Vec<(String, Vec<String>)> {
    let mut groups = Vec::new();
    for group in crate::paradigm::catalog() {
        let members: Vec<String> = group
            .transitions
            .iter()
            .map(|t| t.name())
            .filter(|n| trained.contains_key(n))
            .collect();
        if !members.is_empty() {
            groups.push((group.name(), members));
        }
    }
    let control: Vec<String> = control_group()
        .transitions
        .iter()
        .map(|t| t.name())
        .filter(|n| trained.contains_key(n))
        .collect();
    if !control.is_empty() {
        groups.push(("Control".to_string(), control));
    }
    groups
}

/// Emits the full statistical analysis: the correlation table over test
/// samples, probability-shift heatmaps at every selected step size, pattern
/// scores, Top-k overlap with its ablation, and encoding distributions.
pub fn run_analyze(cfg: &RunConfig, work: &Path) -> Result<AnalyzeProducts, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(work);
    verify_stage(&layout, "generate", "analyze")?;
    verify_stage(&layout, "pretrain", "analyze")?;
    verify_stage(&layout, "gradiend", "analyze")?;
    let sweep_manifest = verify_stage(&layout, "sweep", "analyze")?;
    let (datasets, neutral, _) = load_datasets(&layout)?;
    let base = load_model(&layout)?;
    let slice = ParamSlice::resolve(&base.core.params, &cfg.slice_name)?;
    let gradiends = load_gradiends(cfg, &layout)?;
    let checksum = base.param_checksum();
    let config_hash = cfg.content_hash();
    let summaries: Vec<SweepSummary> =
        serde_json::from_str(&std::fs::read_to_string(sweeps_json_path(&layout))?)?;

    let mut outputs: Vec<ArtifactRef> = Vec::new();

    // Test-sample caches per variant.
    let mut test_caches: BTreeMap<String, Vec<GradientSample>> = BTreeMap::new();
    for name in gradiends.keys() {
        let (_, _, _, samples) =
            read_cache(&cache_path(&layout, name, "test"), Some(checksum))?;
        test_caches.insert(name.clone(), samples);
    }

    // Correlation protocol on test samples.
    let mut correlations = BTreeMap::new();
    for (name, model) in &gradiends {
        let corr = correlation_protocol(model, &test_caches[name], cfg.analysis.seed)?;
        correlations.insert(name.clone(), corr);
    }
    {
        let names: Vec<String> = correlations.keys().cloned().collect();
        let header = format!("model,{}", names.join(","));
        let row = format!(
            "tiny-mlm,{}",
            names
                .iter()
                .map(|n| (correlations[n] * 100.0).to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let path = layout.reports().join("correlation_table.csv");
        write_report_csv(&path, &config_hash, &["values scaled by 100"], &header, &[row])?;
        outputs.push(artifact_ref(&layout, &path)?);
    }

    // Heatmaps (at alpha*) and pattern scores on test splits.
    let by_cell: Vec<(Cell, &[crate::corpus::MaskedInstance])> = datasets
        .iter()
        .map(|d| (d.cell, d.test.as_slice()))
        .collect();
    let mut heatmaps = Vec::new();
    let mut heatmap_rows = Vec::new();
    let mut pattern_rows = Vec::new();
    let mut off_pattern_rows = Vec::new();
    for summary in &summaries {
        let Some(alpha) = summary.alpha_star else {
            continue;
        };
        let transition = Transition::parse_name(&summary.variant).ok_or_else(|| {
            PipelineError::Config(format!("unknown variant {:?} in sweeps", summary.variant))
        })?;
        let dt: DirectedTransition = transition.directed(summary.forward);
        let gradiend = &gradiends[&summary.variant];
        let modified = apply(&base, &Intervention::new(gradiend, dt.h_star(), alpha))?;
        let map_seed = cfg.analysis.seed
            ^ hash::hash_bytes(format!("{}/{}", summary.variant, summary.direction).as_bytes());
        let map = heatmap(
            &base,
            &modified,
            &by_cell,
            HeatmapConfig {
                n_perm: cfg.analysis.n_perm,
                seed: map_seed,
                q: 0.05,
            },
        )?;
        for e in &map.entries {
            heatmap_rows.push(format!(
                "{},{},{},{},{},{},{},{},{},{}",
                summary.variant,
                summary.direction,
                alpha,
                e.cell,
                e.article,
                e.delta_p,
                e.cohens_d,
                e.p_raw,
                e.p_adjusted,
                e.stars
            ));
        }
        let patterns = pattern_score(&map, dt);
        for p in &patterns {
            pattern_rows.push(format!(
                "{},{},{},{},{},{},{}",
                summary.variant,
                summary.direction,
                p.hypothesis,
                p.score,
                p.matched,
                p.expected,
                p.off_pattern.len()
            ));
            for (cell, article, dp) in &p.off_pattern {
                off_pattern_rows.push(format!(
                    "{},{},{},{},{},{}",
                    summary.variant, summary.direction, p.hypothesis, cell, article, dp
                ));
            }
        }
        heatmaps.push(HeatmapOut {
            variant: summary.variant.clone(),
            direction: summary.direction.clone(),
            alpha,
            heatmap: map,
            patterns,
        });
    }
    {
        let path = layout.reports().join("heatmaps.csv");
        write_report_csv(
            &path,
            &config_hash,
            &["delta_p in raw probability units; stars on BH-adjusted p"],
            "variant,direction,alpha,cell,article,delta_p,cohens_d,p_raw,p_bh,stars",
            &heatmap_rows,
        )?;
        outputs.push(artifact_ref(&layout, &path)?);
        let path = layout.reports().join("pattern_scores.csv");
        write_report_csv(
            &path,
            &config_hash,
            &["expected patterns include a negative expectation on the source article (reporting convention)"],
            "variant,direction,hypothesis,score,matched,expected,off_pattern",
            &pattern_rows,
        )?;
        outputs.push(artifact_ref(&layout, &path)?);
        let path = layout.reports().join("off_pattern.csv");
        write_report_csv(
            &path,
            &config_hash,
            &["significant heatmap entries outside the hypothesis pattern"],
            "variant,direction,hypothesis,cell,article,delta_p",
            &off_pattern_rows,
        )?;
        outputs.push(artifact_ref(&layout, &path)?);
    }

    // Top-k overlap per article group plus control, and the k ablation.
    let groups = overlap_groups(&gradiends);
    let mut overlap_reports = Vec::new();
    let mut ablation = Vec::new();
    let mut pair_rows = Vec::new();
    let mut ablation_rows = Vec::new();
    for (gname, members) in &groups {
        let report = group_overlap_report(gname, members, &gradiends, cfg.analysis.k)?;
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                pair_rows.push(format!(
                    "{},{},{},{}",
                    gname, members[i], members[j], report.matrix[i][j]
                ));
            }
        }
        overlap_reports.push(report);
        if members.len() >= 2 {
            let models: Vec<(String, &GradiendModel)> = members
                .iter()
                .map(|m| (m.clone(), &gradiends[m]))
                .collect();
            let grid: Vec<usize> = cfg
                .analysis
                .k_grid
                .iter()
                .copied()
                .filter(|&k| k >= 1 && k <= slice.len)
                .collect();
            let points = k_ablation(&models, &grid)?;
            for p in &points {
                ablation_rows.push(format!("{}~{},{},{}", p.a, p.b, p.k, p.overlap));
            }
            ablation.push((gname.clone(), points));
        }
    }
    {
        let header = format!(
            "model,{}",
            groups
                .iter()
                .map(|(g, _)| g.clone())
                .collect::<Vec<_>>()
                .join(",")
        );
        let row = format!(
            "tiny-mlm,{}",
            overlap_reports
                .iter()
                .map(|r| r
                    .max_pairwise
                    .map_or(String::new(), |v| (v * 100.0).to_string()))
                .collect::<Vec<_>>()
                .join(",")
        );
        let mut notes = vec![format!(
            "maximum pairwise Top-k overlap, scaled by 100; k={}",
            cfg.analysis.k
        )];
        // Large k dilutes the overlap statistic toward trivial convergence.
        if cfg.analysis.k as f64 > 0.1 * slice.len as f64 {
            let warning = format!(
                "warning: k/n = {}/{} exceeds 0.1; overlaps approach the trivial limit",
                cfg.analysis.k, slice.len
            );
            eprintln!("{warning}");
            notes.push(warning);
        }
        let note_refs: Vec<&str> = notes.iter().map(String::as_str).collect();
        let path = layout.reports().join("overlap.csv");
        write_report_csv(&path, &config_hash, &note_refs, &header, &[row])?;
        outputs.push(artifact_ref(&layout, &path)?);
        let path = layout.reports().join("overlap_pairs.csv");
        write_report_csv(
            &path,
            &config_hash,
            &[],
            "group,variant_a,variant_b,overlap",
            &pair_rows,
        )?;
        outputs.push(artifact_ref(&layout, &path)?);
        let path = layout.reports().join("k_ablation.csv");
        write_report_csv(&path, &config_hash, &[], "pair,k,overlap", &ablation_rows)?;
        outputs.push(artifact_ref(&layout, &path)?);
    }

    // Encoding reports: the two directed tasks, ten identity tasks, and the
    // neutral-source gradients (unmasked language-modeling loss).
    let neutral_count = neutral.len().min(cfg.analysis.neutral_gradient_cap);
    let neutral_grads: Vec<Vec<f64>> = neutral.sentences[..neutral_count]
        .iter()
        .map(|s| grad_unmasked_lm(&base, &slice, s))
        .collect::<Result<_, _>>()?;
    let mut encoding_rows = Vec::new();
    let mut encoding_out = Vec::new();
    for (name, model) in &gradiends {
        let transition = Transition::parse_name(name).expect("trained variants are cataloged");
        let samples = &test_caches[name];
        let mut sources: Vec<(String, Vec<&[f64]>)> = Vec::new();
        let fwd = transition.directed(true);
        let bwd = transition.directed(false);
        for (label, dt) in [(1i8, fwd), (-1i8, bwd)] {
            let inputs: Vec<&[f64]> = samples
                .iter()
                .filter(|s| s.label == label)
                .map(|s| s.input.as_slice())
                .collect();
            sources.push((format!("{}->{}", dt.source(), dt.destination()), inputs));
        }
        for cell in Cell::all() {
            if cell == transition.z1 || cell == transition.z2 {
                continue;
            }
            let inputs: Vec<&[f64]> = samples
                .iter()
                .filter(|s| s.cell == cell && s.label == 0)
                .map(|s| s.input.as_slice())
                .collect();
            sources.push((cell.name(), inputs));
        }
        sources.push((
            "neutral".to_string(),
            neutral_grads.iter().map(|g| g.as_slice()).collect(),
        ));
        let report = encoding_report(model, &sources, cfg.analysis.seed)?;
        for source in &report.sources {
            for h in &source.encodings {
                encoding_rows.push(format!("{},{},{}", name, source.source, h));
            }
        }
        encoding_out.push(report);
    }
    {
        let path = layout.reports().join("encoding.csv");
        write_report_csv(
            &path,
            &config_hash,
            &["per-source encoded values after downsampling to a common size"],
            "variant,source,h",
            &encoding_rows,
        )?;
        outputs.push(artifact_ref(&layout, &path)?);
    }

    let products = AnalyzeProducts {
        correlations,
        heatmaps,
        overlap: overlap_reports,
        ablation,
        encoding: encoding_out,
    };

    // Machine-readable summary for the report stage.
    #[derive(Serialize)]
    struct AnalyzeSummary<'a> {
        correlations: &'a BTreeMap<String, f64>,
        overlap: &'a [OverlapReport],
        heatmaps: Vec<HeatmapBrief>,
    }
    #[derive(Serialize)]
    struct HeatmapBrief {
        variant: String,
        direction: String,
        alpha: f64,
        patterns: Vec<(String, f64)>,
        source_cell_target_delta_p: f64,
        source_cell_target_p_bh: f64,
    }
    let briefs: Vec<HeatmapBrief> = products
        .heatmaps
        .iter()
        .map(|h| {
            let transition = Transition::parse_name(&h.variant).unwrap();
            let dt = transition.directed(h.direction == transition.directed(true).arrow());
            let entry = h.heatmap.entry(dt.source(), dt.target_article());
            HeatmapBrief {
                variant: h.variant.clone(),
                direction: h.direction.clone(),
                alpha: h.alpha,
                patterns: h
                    .patterns
                    .iter()
                    .map(|p| (p.hypothesis.to_string(), p.score))
                    .collect(),
                source_cell_target_delta_p: entry.delta_p,
                source_cell_target_p_bh: entry.p_adjusted,
            }
        })
        .collect();
    let summary_path = layout.reports().join("analyze_summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&AnalyzeSummary {
            correlations: &products.correlations,
            overlap: &products.overlap,
            heatmaps: briefs,
        })? + "\n",
    )?;
    outputs.push(artifact_ref(&layout, &summary_path)?);

    write_manifest(
        &layout,
        "analyze",
        cfg,
        vec![cfg.analysis.seed],
        sweep_manifest.outputs,
        outputs,
    )?;
    Ok(products)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Renders the human-readable run summary from the emitted artifacts.
pub fn run_report(cfg: &RunConfig, work: &Path) -> Result<String, PipelineError> {
    let layout = Layout::new(work);
    verify_stage(&layout, "analyze", "report")?;
    let mut out = String::new();
    out.push_str("gradlab run summary\n");
    out.push_str(&format!("config hash: {}\n\n", cfg.content_hash()));

    if layout.pretrain_metrics().exists() {
        let report: PretrainReport =
            serde_json::from_str(&std::fs::read_to_string(layout.pretrain_metrics())?)?;
        out.push_str(&format!(
            "base model: {} epochs, min cell accuracy {:.4}, final loss {:.5}\n\n",
            report.epochs_run, report.min_cell_accuracy, report.final_loss
        ));
    }

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(
        layout.reports().join("analyze_summary.json"),
    )?)?;
    out.push_str("test correlations (x100):\n");
    if let Some(corrs) = summary["correlations"].as_object() {
        for (name, v) in corrs {
            out.push_str(&format!("  {:<16} {:.1}\n", name, v.as_f64().unwrap_or(f64::NAN) * 100.0));
        }
    }
    out.push_str("\ninterventions at alpha*:\n");
    if let Some(maps) = summary["heatmaps"].as_array() {
        for m in maps {
            out.push_str(&format!(
                "  {:<16} {:<10} alpha*={:<6} dP(target|source cell)={:.5} p_bh={:.4} patterns: {}\n",
                m["variant"].as_str().unwrap_or(""),
                m["direction"].as_str().unwrap_or(""),
                m["alpha"].as_f64().unwrap_or(f64::NAN),
                m["source_cell_target_delta_p"].as_f64().unwrap_or(f64::NAN),
                m["source_cell_target_p_bh"].as_f64().unwrap_or(f64::NAN),
                m["patterns"]
                    .as_array()
                    .map(|ps| ps
                        .iter()
                        .map(|p| format!(
                            "{}={:.2}",
                            p[0].as_str().unwrap_or(""),
                            p[1].as_f64().unwrap_or(f64::NAN)
                        ))
                        .collect::<Vec<_>>()
                        .join(" "))
                    .unwrap_or_default()
            ));
        }
    }
    out.push_str("\nmax pairwise Top-k overlap (x100):\n");
    if let Some(groups) = summary["overlap"].as_array() {
        for g in groups {
            let max = g["max_pairwise"].as_f64();
            out.push_str(&format!(
                "  {:<12} {}\n",
                g["group"].as_str().unwrap_or(""),
                max.map_or("n/a (fewer than two variants)".to_string(), |v| format!(
                    "{:.1}",
                    v * 100.0
                ))
            ));
        }
    }

    let path = layout.reports().join("summary.txt");
    let mut file = std::fs::File::create(&path)?;
    file.write_all(out.as_bytes())?;
    Ok(out)
}
