//! Command-line pipeline driver.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 data error
//! (missing or stale artifacts, parse failures, IO), 4 numeric failure
//! (non-convergence, divergence, empty candidate sets, degenerate
//! statistics).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use gradlab::pipeline::{
    run_analyze, run_generate, run_gradiend, run_pretrain, run_report, run_sweep, PipelineError,
    RunConfig,
};

#[derive(Parser)]
#[command(
    name = "gradlab",
    about = "Train a tiny German-article MLM, learn gradient update directions per article transition, intervene under a language-modeling-score constraint, and run the statistical analysis.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Declarative run configuration (JSON); missing fields use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Work directory holding datasets, checkpoints, caches and reports.
    #[arg(long, short = 'o', default_value = "gradlab-work")]
    out: PathBuf,
    /// Corpus seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated variant names, e.g. "G[F,M]_Nom,G[F]_Nom-Dat".
    #[arg(long)]
    transitions: Option<String>,
    /// Comma-separated ascending step sizes, e.g. "0.01,0.1,0.5".
    #[arg(long)]
    alpha_grid: Option<String>,
    /// Language-modeling-score tolerance threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Top-k size for the overlap analysis.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cell datasets and the grammar-neutral dataset.
    Generate(Common),
    /// Pretrain the base masked language model.
    Pretrain(Common),
    /// Build gradient caches and train the autoencoder for every variant.
    Gradiend(Common),
    /// Sweep intervention step sizes under the LMS constraint.
    Sweep(Common),
    /// Emit correlation, heatmap, pattern, overlap and encoding reports.
    Analyze(Common),
    /// Render the human-readable run summary.
    Report(Common),
}

/// Splits a variant list on commas outside brackets, since canonical names
/// like "G[F,M]_Nom" themselves contain commas.
fn split_variants(spec: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for ch in spec.chars() {
        match ch {
            '[' => {
                depth += 1;
                current.push(ch);
            }
            ']' => {
                depth = depth.saturating_sub(1);
                current.push(ch);
            }
            ',' if depth == 0 => {
                if !current.trim().is_empty() {
                    out.push(current.trim().to_string());
                }
                current.clear();
            }
            _ => current.push(ch),
        }
    }
    if !current.trim().is_empty() {
        out.push(current.trim().to_string());
    }
    out
}

fn resolve_config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.corpus.seed = seed;
    }
    if let Some(spec) = &common.transitions {
        cfg.transitions = Some(split_variants(spec));
    }
    if let Some(spec) = &common.alpha_grid {
        cfg.alpha_grid = spec
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| PipelineError::Config(format!("bad alpha {s:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(tau) = common.tau {
        cfg.tau = tau;
    }
    if let Some(k) = common.k {
        cfg.analysis.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: &Command) -> Result<(), anyhow::Error> {
    let common = match command {
        Command::Generate(c)
        | Command::Pretrain(c)
        | Command::Gradiend(c)
        | Command::Sweep(c)
        | Command::Analyze(c)
        | Command::Report(c) => c,
    };
    let cfg = resolve_config(common)?;
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating work directory {}", common.out.display()))?;
    let work = common.out.as_path();
    match command {
        Command::Generate(_) => {
            run_generate(&cfg, work)?;
            println!("datasets written to {}", work.join("datasets").display());
        }
        Command::Pretrain(_) => {
            let report = run_pretrain(&cfg, work)?;
            println!(
                "base model trained: {} epochs, min cell accuracy {:.4}",
                report.epochs_run, report.min_cell_accuracy
            );
        }
        Command::Gradiend(_) => {
            let out = run_gradiend(&cfg, work)?;
            for row in &out.runs {
                if row.selected {
                    println!(
                        "{}: seed {} selected, val correlation {}",
                        row.variant,
                        row.seed,
                        row.val_correlation
                            .map_or("n/a".to_string(), |c| format!("{c:.4}"))
                    );
                }
            }
        }
        Command::Sweep(_) => {
            let summaries = run_sweep(&cfg, work)?;
            for s in &summaries {
                println!(
                    "{} {}: alpha* = {}",
                    s.variant,
                    s.direction,
                    s.alpha_star
                        .map_or("none (constraint empty)".to_string(), |a| a.to_string())
                );
            }
        }
        Command::Analyze(_) => {
            let products = run_analyze(&cfg, work)?;
            println!(
                "analysis complete: {} variants, {} heatmaps, reports in {}",
                products.correlations.len(),
                products.heatmaps.len(),
                work.join("reports").display()
            );
        }
        Command::Report(_) => {
            let text = run_report(&cfg, work)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<PipelineError>()
                .map(PipelineError::exit_code)
                .unwrap_or(3);
            ExitCode::from(code as u8)
        }
    }
}
