//! The `ildl` command-line tool: corrupt datasets, fit and evaluate models,
//! and run benchmarks with the statistical comparison stage.

pub mod bench;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ildl::dataset::{self, DatasetManifest, Standardizer};
use ildl::model_io;
use ildl::{evaluate_all, fit_auto, predict, recover_d, Hyperparams, InstanceMatrix, LabelDistributionMatrix, NoiseConfig};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "ildl", version, about = "Label distribution learning from noisy label distributions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt a dataset's labels and write a self-contained copy.
    Corrupt(CorruptArgs),
    /// Fit a model and write it to a file.
    Train(TrainArgs),
    /// Score a model's predictions against true label distributions.
    Evaluate(EvaluateArgs),
    /// Run a benchmark described by an experiment config.
    Benchmark(BenchmarkArgs),
    /// Aggregate run CSVs and run the statistics stage.
    Report(ReportArgs),
}

/// Either a manifest (features z-scored on load) or raw CSV files.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest.
    #[arg(long, conflicts_with_all = ["features", "labels"])]
    pub dataset: Option<PathBuf>,
    /// Headerless feature CSV, used as is.
    #[arg(long, requires = "labels")]
    pub features: Option<PathBuf>,
    /// Headerless label-distribution CSV.
    #[arg(long, requires = "features")]
    pub labels: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> CliResult<(InstanceMatrix, LabelDistributionMatrix)> {
        match (&self.dataset, &self.features, &self.labels) {
            (Some(m), _, _) => {
                let (_, raw) = dataset::load_manifest_recording(m)?;
                let x = Standardizer::fit(&raw.x).apply(&raw.x)?;
                Ok((x, raw.d))
            }
            (None, Some(f), Some(l)) => {
                let x = InstanceMatrix::new(dataset::read_csv_matrix(f)?)?;
                let d = LabelDistributionMatrix::new(dataset::read_csv_matrix(l)?)?;
                if x.n() != d.n() {
                    return Err(CliError::data(format!("{} feature rows but {} label rows", x.n(), d.n())));
                }
                Ok((x, d))
            }
            _ => Err(CliError::usage("give --dataset, or both --features and --labels")),
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct HyperFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Neighbours in the similarity graph.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Weight on the graph-alignment term.
    #[arg(long)]
    pub graph_weight: Option<f64>,
}

impl HyperFlags {
    pub fn apply(&self, h: &mut Hyperparams) {
        if let Some(v) = self.alpha {
            h.alpha = v;
        }
        if let Some(v) = self.beta {
            h.beta = v;
        }
        if let Some(v) = self.gamma {
            h.gamma = v;
        }
        if let Some(v) = self.sigma {
            h.sigma = v;
        }
        self.apply_solver(h);
    }

    /// Flags that are not part of the benchmark grid.
    fn apply_solver(&self, h: &mut Hyperparams) {
        if let Some(v) = self.k {
            h.k_neighbors = v;
        }
        if let Some(v) = self.tol {
            h.tol = v;
        }
        if let Some(v) = self.max_iter {
            h.max_iter = v;
        }
        if let Some(v) = self.graph_weight {
            h.graph_weight = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Manifest of the clean dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub pi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperFlags,
    /// TOML file of hyperparameters; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the recovered label distributions as CSV.
    #[arg(long)]
    pub recovered: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data holding the true label distributions.
    #[command(flatten)]
    pub data: DataArgs,
    /// CSV report to append a row to.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: one per core).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Replace the configured noise rates.
    #[arg(long)]
    pub pi: Option<f64>,
    /// Replace the configured seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run CSVs to merge; repeat for several files.
    #[arg(long = "runs", required = true)]
    pub runs: Vec<PathBuf>,
    /// Method the Wilcoxon tests and CD diagrams compare against.
    #[arg(long)]
    pub control: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitKind::Usage.into() } else { ExitCode::SUCCESS };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind.into()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    match cli.command {
        Command::Corrupt(a) => cmd_corrupt(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Benchmark(a) => cmd_benchmark(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    }
}

fn cmd_corrupt(a: &CorruptArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let cfg = NoiseConfig::new(a.pi, a.seed)?;
    let manifest = DatasetManifest::load(&a.dataset)?;
    let (written, draw) = dataset::write_corrupted_dataset(&manifest, &cfg, &a.out)?;
    writeln!(out, "manifest {}", a.out.join("manifest.toml").display())?;
    writeln!(out, "rows {}", written.n)?;
    writeln!(out, "total_flips {}", draw.total_flips())?;
    if let Some(c) = &written.corruption {
        writeln!(out, "omega_checksum {}", c.omega_checksum)?;
    }
    Ok(())
}

fn load_hyper(config: Option<&Path>, flags: &HyperFlags) -> CliResult<Hyperparams> {
    let mut h = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => Hyperparams::default(),
    };
    flags.apply(&mut h);
    h.validate()?;
    Ok(h)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let hyper = load_hyper(a.config.as_deref(), &a.hyper)?;
    let (x, omega) = a.data.load()?;
    let report = fit_auto(&x, &omega, &hyper)?;
    model_io::save_model(&report.model, &a.out)?;
    if let Some(p) = &a.recovered {
        let d = recover_d(&report.model, &x, &omega)?;
        dataset::write_csv_matrix(p, d.values())?;
    }
    writeln!(out, "iterations {}", report.iterations)?;
    writeln!(out, "converged {}", report.converged)?;
    writeln!(out, "final_objective {}", report.final_objective)?;
    writeln!(out, "consensus_residual {}", report.consensus_residual)?;
    writeln!(out, "model {}", a.out.display())?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let model = model_io::load_model(&a.model)?;
    let (x, d) = a.data.load()?;
    let pred = predict(&model, &x)?;
    let scores = evaluate_all(&d, &pred)?;
    write!(out, "{}", scores.to_key_value())?;
    if let Some(path) = &a.out {
        let new = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if new {
            writeln!(f, "model,n_instances,chebyshev,clark,canberra,kl,cosine,intersection")?;
        }
        let v = scores.values();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            a.model.display(),
            scores.n_instances,
            v[0],
            v[1],
            v[2],
            v[3],
            v[4],
            v[5]
        )?;
    }
    Ok(())
}

fn cmd_benchmark(a: &BenchmarkArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(pi) = a.pi {
        cfg.noise_rates = vec![pi];
    }
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    for (flag, grid) in [
        (a.hyper.alpha, &mut cfg.hyper_grid.alpha),
        (a.hyper.beta, &mut cfg.hyper_grid.beta),
        (a.hyper.gamma, &mut cfg.hyper_grid.gamma),
        (a.hyper.sigma, &mut cfg.hyper_grid.sigma),
    ] {
        if let Some(v) = flag {
            *grid = vec![v];
        }
    }
    a.hyper.apply_solver(&mut cfg.solver);
    let outcome = bench::run_benchmark(&cfg, a.jobs, &a.out)?;
    for n in &outcome.stats.notices {
        writeln!(out, "notice: {n}")?;
    }
    writeln!(out, "rows {}", outcome.records.len())?;
    writeln!(out, "failed {}", outcome.failed)?;
    writeln!(out, "report {}", a.out.display())?;
    if !outcome.complete() {
        return Err(CliError::new(
            ExitKind::Incomplete,
            format!("{} of {} runs failed; see runs.csv", outcome.failed, outcome.records.len()),
        ));
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let mut records = Vec::new();
    for p in &a.runs {
        records.extend(report::read_runs(p)?);
    }
    fs::create_dir_all(&a.out)?;
    report::write_summary(&a.out, &records)?;
    let stats = report::stats_stage(&records, a.control.as_deref(), &a.out)?;
    for n in &stats.notices {
        writeln!(out, "notice: {n}")?;
    }
    for f in &stats.friedman {
        writeln!(
            out,
            "{} friedman chi2={} F_F={} critical={} cd={}",
            f.metric, f.result.chi2, f.result.f_f, f.critical_value, f.cd
        )?;
    }
    writeln!(out, "report {}", a.out.display())?;
    Ok(())
}
