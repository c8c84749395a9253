//! Subcommand runner. Every command writes one output document that embeds
//! the resolved config and seed, and reports whether its checks passed.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, DimensionFit, ProfileOptions};
use crate::config::{self, ConfigError, DimensionMode, ExperimentConfig, OutputFormat};
use crate::engine::{EngineError, ThetaTrie};
use crate::models::hypotheses::{self, HypothesisReport, Verdict};
use crate::models::ModelError;
use crate::rng::RngStream;
use crate::tree::mix64;

#[derive(Debug, Parser)]
#[command(name = "recmetric", version, about = "Random metric spaces from recursive gluing equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a config key, e.g. `--set engine.depth=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Monte Carlo checks of the contraction, length, height and mass conditions.
    CheckHypotheses,
    /// Root-anchored distance matrices of sampled points.
    SampleMatrices,
    /// Discrepancies and mean heights across depths.
    Convergence,
    /// Covering-number or mass-scaling dimension fit.
    Dimension {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Cut-line of the mass fragmentation and its big-subspace count.
    Cutline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Minkowski,
    Hausdorff,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// A finished command: the rendered output and whether its checks passed.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub output: String,
    pub passed: bool,
    /// File the output was written to, if any.
    pub written: Option<String>,
}

/// Resolves the config from flags and runs the subcommand, writing to the
/// configured output path or returning the document for stdout.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output.path={}", toml_string(&out.to_string_lossy())));
    }
    if let Some(f) = cli.format {
        overrides.push(format!("output.format={}", if matches!(f, FormatArg::Json) { "\"json\"" } else { "\"csv\"" }));
    }
    if let Command::Dimension { mode: Some(m) } = &cli.command {
        let name = if matches!(m, ModeArg::Minkowski) { "minkowski" } else { "hausdorff" };
        overrides.push(format!("experiment.mode=\"{name}\""));
    }
    let config = match &cli.config {
        Some(path) => config::load_file(&path.to_string_lossy(), &overrides)?,
        None => config::load("", &overrides)?,
    };
    let mut outcome = execute(&cli.command, &config)?;
    if let Some(path) = &config.output.path {
        std::fs::write(path, &outcome.output).map_err(|source| CliError::Io { path: path.clone(), source })?;
        outcome.written = Some(path.clone());
    }
    Ok(outcome)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

pub fn execute(command: &Command, config: &ExperimentConfig) -> Result<Outcome, CliError> {
    match command {
        Command::CheckHypotheses => check_hypotheses(config),
        Command::SampleMatrices => sample_matrices(config),
        Command::Convergence => convergence(config),
        Command::Dimension { .. } => dimension(config),
        Command::Cutline => cutline(config),
    }
}

fn stream(config: &ExperimentConfig, tag: u64) -> RngStream {
    RngStream::new(config.seed, mix64(tag))
}

fn document(name: &str, config: &ExperimentConfig, result: impl Serialize, passed: bool) -> String {
    let doc = json!({
        "command": name,
        "seed": config.seed,
        "passed": passed,
        "config": config,
        "result": result,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("serializable output");
    text.push('\n');
    text
}

fn csv_header(name: &str, config: &ExperimentConfig, passed: bool) -> String {
    let resolved = serde_json::to_string(config).expect("serializable config");
    format!("# command={name}\n# seed={}\n# passed={passed}\n# config={resolved}\n", config.seed)
}

pub fn check_hypotheses(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let law = config.law()?;
    let x = &config.experiment;
    let n = x.n_samples;
    let mut reports: Vec<HypothesisReport> = Vec::new();
    reports.push(hypotheses::estimate_h1(&law, n, &mut stream(config, 1))?);
    for (k, &p) in x.moments.iter().enumerate() {
        reports.push(hypotheses::estimate_contraction(&law, p, n, &mut stream(config, 100 + k as u64))?);
    }
    for (k, &p) in x.moments.iter().enumerate() {
        reports.push(hypotheses::estimate_h3(&law, p, n, &mut stream(config, 200 + k as u64), false)?);
    }
    reports.push(hypotheses::estimate_necessary(&law, n, &mut stream(config, 3))?);
    reports.push(hypotheses::estimate_rstar_negmoment(&law, x.delta, n, &mut stream(config, 4))?);
    let passed = reports.iter().all(|r| r.verdict == Verdict::Satisfied);
    let output = match config.output.format {
        OutputFormat::Json => document("check-hypotheses", config, &reports, passed),
        OutputFormat::Csv => {
            let mut s = csv_header("check-hypotheses", config, passed);
            s.push_str("name,estimate,std_error,n_samples,verdict\n");
            for r in &reports {
                let verdict = serde_json::to_value(r.verdict).expect("verdict").as_str().unwrap_or("").to_string();
                let _ = writeln!(s, "{},{},{},{},{}", r.name, r.estimate, r.std_error, r.n_samples, verdict);
            }
            s
        }
    };
    Ok(Outcome { output, passed, written: None })
}

pub fn sample_matrices(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let law = config.law()?;
    let x = &config.experiment;
    let engine = config.engine.engine_config();
    let depth = engine.depth;
    let mut matrices = Vec::with_capacity(x.reps);
    let mut violations = 0;
    for rep in 0..x.reps {
        let mut trie = ThetaTrie::new(law.clone(), mix64(config.seed ^ mix64(rep as u64)), engine)?;
        let mut rng = stream(config, 1000 + rep as u64);
        let sample = trie.distance_matrix(x.k, depth, &mut rng)?;
        violations += sample.metric_violations(1e-9);
        matrices.push(sample);
    }
    let passed = violations == 0;
    let output = match config.output.format {
        OutputFormat::Json => {
            let items: Vec<_> = matrices
                .iter()
                .enumerate()
                .map(|(rep, m)| json!({"rep": rep, "depth": m.depth, "k": x.k, "seed": config.seed, "entries": m.entries}))
                .collect();
            document("sample-matrices", config, json!({"violations": violations, "matrices": items}), passed)
        }
        OutputFormat::Csv => {
            let mut s = csv_header("sample-matrices", config, passed);
            s.push_str("rep,i,j,d\n");
            for (rep, m) in matrices.iter().enumerate() {
                for i in 0..m.size() {
                    for j in (i + 1)..m.size() {
                        let _ = writeln!(s, "{rep},{i},{j},{}", m.entries[i][j]);
                    }
                }
            }
            s
        }
    };
    Ok(Outcome { output, passed, written: None })
}

pub fn convergence(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let law = config.law()?;
    let x = &config.experiment;
    let options = ProfileOptions { k: x.k, reps: x.reps, permutations: x.permutations, coupled: x.coupled };
    let profile = analysis::convergence_profile(&law, &x.depths, options, config.engine.engine_config(), config.seed)?;
    let passed = profile.discrepancy.windows(2).all(|w| w[1] < w[0]);
    let output = match config.output.format {
        OutputFormat::Json => document("convergence", config, &profile, passed),
        OutputFormat::Csv => {
            let mut s = csv_header("convergence", config, passed);
            s.push_str("depth,discrepancy,p_value,mean_height\n");
            for (t, depth) in profile.depths.iter().enumerate() {
                let (d, p) = if t == 0 {
                    (String::new(), String::new())
                } else {
                    (profile.discrepancy[t - 1].to_string(), profile.p_values[t - 1].to_string())
                };
                let _ = writeln!(s, "{depth},{d},{p},{}", profile.mean_height[t]);
            }
            s
        }
    };
    Ok(Outcome { output, passed, written: None })
}

pub fn dimension(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let law = config.law()?;
    let x = &config.experiment;
    let engine = config.engine.engine_config();
    let fit: DimensionFit = match x.mode {
        DimensionMode::Minkowski => {
            analysis::minkowski_fit(&law, engine.depth, x.n_points, &x.eps_grid, x.reps, engine, config.seed)?
        }
        DimensionMode::Hausdorff => {
            let grid = if x.radii_grid.is_empty() { &x.eps_grid } else { &x.radii_grid };
            analysis::hausdorff_probe(&law, engine.depth, x.n_centers, x.n_mass_points, grid, engine, config.seed)?
        }
    };
    let passed = fit.slope.is_finite();
    let output = match config.output.format {
        OutputFormat::Json => document("dimension", config, &fit, passed),
        OutputFormat::Csv => {
            let mut s = csv_header("dimension", config, passed);
            let _ = writeln!(s, "# slope={} intercept={} r2={} slope_stderr={}", fit.slope, fit.intercept, fit.r2, fit.slope_stderr);
            s.push_str("rep,epsilon,N\n");
            for g in &fit.grid {
                let _ = writeln!(s, "{},{},{}", g.rep, g.epsilon, g.statistic);
            }
            s
        }
    };
    Ok(Outcome { output, passed, written: None })
}

pub fn cutline(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let law = config.law()?;
    let x = &config.experiment;
    let mut trie = ThetaTrie::new(law, mix64(config.seed), config.engine.engine_config())?;
    let line = trie.cut_line(x.epsilon, config.engine.max_nodes)?;
    let big = trie.big_subspace_count(&line, x.epsilon, x.height_samples, &mut stream(config, 5))?;
    let total = line.total_mass_r();
    let censored = line.censored_mass_r();
    let passed = (total - 1.0).abs() <= 1e-6;
    let summary = json!({
        "epsilon": x.epsilon,
        "nodes": line.nodes.len(),
        "total_mass_r": total,
        "censored_mass_r": censored,
        "big_subspaces": big,
    });
    let output = match config.output.format {
        OutputFormat::Json => document("cutline", config, json!({"summary": summary, "nodes": line.nodes}), passed),
        OutputFormat::Csv => {
            let mut s = csv_header("cutline", config, passed);
            let _ = writeln!(
                s,
                "# total_mass_r={total} censored_mass_r={censored} nodes={} big_subspaces={big}",
                line.nodes.len()
            );
            s.push_str("theta,R_theta,S_theta\n");
            for n in &line.nodes {
                let _ = writeln!(s, "{},{},{}", n.address, n.mass_r, n.mass_s);
            }
            s
        }
    };
    Ok(Outcome { output, passed, written: None })
}
