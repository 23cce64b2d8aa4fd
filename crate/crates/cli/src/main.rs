//! Benchmark driver for the hp-adaptive loop.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use serde::Deserialize;

use hp_adapt::driver::{run_loop, RunConfig};
use hp_adapt::problem::ProblemKind;
use hp_adapt::strategy::StrategyTag;

#[derive(Debug, Parser)]
#[command(
    name = "hp-adapt",
    about = "hp-adaptive finite elements for the Poisson benchmarks"
)]
struct Cli {
    /// gaussian, lshape or sine
    #[arg(long)]
    problem: Option<ProblemKind>,
    /// hp-residual, prior, param, apriori, linear or h-only
    #[arg(long)]
    strategy: Option<String>,
    /// Marking parameter in (0, 1] [default: 0.5]
    #[arg(long)]
    theta: Option<f64>,
    /// Threshold of the param strategy
    #[arg(long)]
    gamma: Option<f64>,
    /// Maximal number of refinement steps [default: 100]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Stop once the relative energy error is below this value
    #[arg(long)]
    target_rel_error: Option<f64>,
    /// CSV file receiving one line per iteration
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory receiving per-iteration mesh and degree dumps
    #[arg(long)]
    mesh_out: Option<PathBuf>,
    /// JSON file receiving a run summary
    #[arg(long)]
    json_summary: Option<PathBuf>,
    /// JSON file with any of the options above; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Suppress per-iteration progress on stderr
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    problem: Option<ProblemKind>,
    strategy: Option<String>,
    theta: Option<f64>,
    gamma: Option<f64>,
    #[serde(alias = "max_iter")]
    max_iter: Option<usize>,
    #[serde(alias = "target_rel_error")]
    target_rel_error: Option<f64>,
    out: Option<PathBuf>,
    #[serde(alias = "mesh_out")]
    mesh_out: Option<PathBuf>,
    #[serde(alias = "json_summary")]
    json_summary: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let problem = cli
        .problem
        .or(file.problem)
        .context("--problem is required")?;
    let name = cli
        .strategy
        .or(file.strategy)
        .unwrap_or_else(|| "hp-residual".into());
    let strategy = StrategyTag::parse(&name, cli.gamma.or(file.gamma))?;
    let mut config = RunConfig::new(problem, strategy);
    config.theta = cli.theta.or(file.theta).unwrap_or(0.5);
    if let Some(m) = cli.max_iter.or(file.max_iter) {
        config.max_iter = m;
    }
    config.target_rel_error = cli.target_rel_error.or(file.target_rel_error);
    config.mesh_out = cli.mesh_out.or(file.mesh_out);
    let out = cli.out.or(file.out);
    let json = cli.json_summary.or(file.json_summary);
    let quiet = cli.quiet;

    let history = run_loop(&config, |row| {
        if !quiet {
            eprintln!(
                "iter {:3}  dofs {:7}  pmax {:2}  eta {:.3e}  err {:.3e}  eff {:.4}",
                row.iteration,
                row.dofs,
                row.max_degree,
                row.eta,
                row.error,
                row.estimator_effectivity
            );
        }
    })?;
    let ratio = history.max_boundary_ratio();
    if ratio > 0.01 {
        eprintln!(
            "warning: boundary-data term reached {:.2}% of the estimator",
            100.0 * ratio
        );
    }
    match &out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            history.write_csv(BufWriter::new(f))?;
        }
        None => history.write_csv(std::io::stdout().lock())?,
    }
    let summary = history.summary();
    if let Some(path) = &json {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &summary)?;
    }
    if !quiet {
        eprintln!(
            "{} iterations, DoF^(1/3) = {:.2}, relative error {:.3e}, {:.1} s",
            summary.iterations,
            summary.final_dofs_cbrt,
            summary.final_relative_error,
            summary.seconds
        );
    }
    Ok(())
}
