//! The benchmark pipeline: split, corrupt the training labels, select
//! hyperparameters, fit and score against the clean test labels.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ildl::dataset::{self, RawDataset, SplitSpec, Standardizer};
use ildl::metrics::evaluate_all;
use ildl::{fit_auto, noise, predict, Hyperparams, InstanceMatrix, LabelDistributionMatrix, MetricReport, NoiseConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, CliResult};
use crate::report::{self, RunRecord, METHOD_NAME};

/// Fraction of the training split used for fitting during selection; the
/// rest is the held-out validation fifth.
pub const SELECTION_FIT_FRACTION: f64 = 0.8;

/// Mixed into the run seed for the inner selection split.
const SELECTION_SPLIT_SALT: u64 = 0x5e1ec7;

/// Seed of repetition `run` for configured seed `seed`; run 0 keeps `seed`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    seed ^ (run as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone)]
struct Job {
    dataset: usize,
    pi: f64,
    seed: u64,
    run: usize,
    /// Grid cell to evaluate; `None` selects among all cells.
    cell: Option<usize>,
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub records: Vec<RunRecord>,
    pub failed: usize,
    pub stats: report::StatsOutcome,
}

impl BenchOutcome {
    pub fn complete(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    datasets: Vec<String>,
    noise_rates: Vec<f64>,
    seeds: Vec<u64>,
    runs_per_config: usize,
    mode: Mode,
    grid_cells: usize,
    rows: usize,
    failed: usize,
    complete: bool,
    notices: Vec<String>,
}

/// Train/test data for one run, with the training labels corrupted.
pub struct PreparedRun {
    pub train_x: InstanceMatrix,
    pub train_omega: LabelDistributionMatrix,
    pub test_x: InstanceMatrix,
    pub test_d: LabelDistributionMatrix,
}

/// Splits, standardises on the training rows only and corrupts the training
/// labels. The test labels stay clean.
pub fn prepare_run(raw: &RawDataset, train_fraction: f64, pi: f64, seed: u64) -> ildl::Result<PreparedRun> {
    let split = dataset::split(&raw.x, &raw.d, &SplitSpec::new(train_fraction, seed)?)?;
    let scaler = Standardizer::fit(&split.train.0);
    let train_x = scaler.apply(&split.train.0)?;
    let test_x = scaler.apply(&split.test.0)?;
    let (train_omega, _) = noise::corrupt(&train_x, &split.train.1, &NoiseConfig::new(pi, seed)?)?;
    Ok(PreparedRun { train_x, train_omega, test_x, test_d: split.test.1 })
}

/// Grid cell with the lowest mean KL between the held-out observed labels
/// and the predictions of a model fitted on the remaining training rows.
pub fn select_cell(x: &InstanceMatrix, omega: &LabelDistributionMatrix, cells: &[Hyperparams], seed: u64) -> ildl::Result<usize> {
    if cells.len() == 1 {
        return Ok(0);
    }
    let inner = dataset::split(x, omega, &SplitSpec::new(SELECTION_FIT_FRACTION, seed ^ SELECTION_SPLIT_SALT)?)?;
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (i, cell) in cells.iter().enumerate() {
        let score = fit_auto(&inner.train.0, &inner.train.1, cell)
            .and_then(|r| predict(&r.model, &inner.test.0))
            .and_then(|p| evaluate_all(&inner.test.1, &p));
        match score {
            Ok(s) if s.kl.is_finite() => {
                if best.is_none_or(|(_, b)| s.kl < b) {
                    best = Some((i, s.kl));
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((i, _)), _) => Ok(i),
        (None, Some(e)) => Err(e),
        (None, None) => Err(ildl::IldlError::InvalidHyperparams("no grid cell produced a finite score".into())),
    }
}

/// Fits on the training split and scores on the clean test labels.
pub fn evaluate_cell(prep: &PreparedRun, hyper: &Hyperparams) -> ildl::Result<(ildl::FitReport, MetricReport)> {
    let fit = fit_auto(&prep.train_x, &prep.train_omega, hyper)?;
    let pred = predict(&fit.model, &prep.test_x)?;
    let scores = evaluate_all(&prep.test_d, &pred)?;
    Ok((fit, scores))
}

fn run_job(job: &Job, name: &str, raw: &Result<RawDataset, String>, cfg: &ExperimentConfig, cells: &[Hyperparams]) -> RunRecord {
    let mut rec = RunRecord {
        dataset: name.to_string(),
        method: METHOD_NAME.into(),
        pi: job.pi,
        seed: job.seed,
        run: job.run,
        alpha: None,
        beta: None,
        gamma: None,
        sigma: None,
        status: "ok".into(),
        iterations: None,
        converged: None,
        chebyshev: None,
        clark: None,
        canberra: None,
        kl: None,
        cosine: None,
        intersection: None,
    };
    let raw = match raw {
        Ok(r) => r,
        Err(e) => {
            rec.status = format!("failed: {e}");
            return rec;
        }
    };
    let seed = run_seed(job.seed, job.run);
    let outcome = prepare_run(raw, cfg.train_fraction, job.pi, seed).and_then(|prep| {
        let idx = match job.cell {
            Some(i) => i,
            None => select_cell(&prep.train_x, &prep.train_omega, cells, seed)?,
        };
        let (fit, scores) = evaluate_cell(&prep, &cells[idx])?;
        Ok((idx, fit, scores))
    });
    match outcome {
        Ok((idx, fit, scores)) => {
            let h = &cells[idx];
            rec.alpha = Some(h.alpha);
            rec.beta = Some(h.beta);
            rec.gamma = Some(h.gamma);
            rec.sigma = Some(h.sigma);
            rec.iterations = Some(fit.iterations);
            rec.converged = Some(fit.converged);
            rec.set_metrics(&scores);
        }
        Err(e) => rec.status = format!("failed: {e}"),
    }
    rec
}

/// Runs the configured benchmark and writes the report directory.
pub fn run_benchmark(cfg: &ExperimentConfig, jobs: Option<usize>, out_dir: &Path) -> CliResult<BenchOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let mut log = String::new();

    let loaded: Vec<(String, Result<RawDataset, String>)> = cfg
        .datasets
        .iter()
        .map(|p| {
            let path = cfg.resolve(p);
            match dataset::load_manifest_recording(&path) {
                Ok((m, raw)) => (m.name, Ok(raw)),
                Err(e) => (path.display().to_string(), Err(e.to_string())),
            }
        })
        .collect();
    let cells = cfg.hyper_grid.cells(&cfg.solver);

    let mut job_list = Vec::new();
    for dataset in 0..loaded.len() {
        for &pi in &cfg.noise_rates {
            for &seed in &cfg.seeds {
                for run in 0..cfg.runs_per_config {
                    match cfg.mode {
                        Mode::Select => job_list.push(Job { dataset, pi, seed, run, cell: None }),
                        Mode::Sensitivity => {
                            for c in 0..cells.len() {
                                job_list.push(Job { dataset, pi, seed, run, cell: Some(c) });
                            }
                        }
                    }
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::usage(format!("cannot start worker pool: {e}")))?;
    let timed: Vec<(RunRecord, f64)> = pool.install(|| {
        job_list
            .par_iter()
            .map(|job| {
                let t = Instant::now();
                let (name, raw) = &loaded[job.dataset];
                (run_job(job, name, raw, cfg, &cells), t.elapsed().as_secs_f64())
            })
            .collect()
    });
    let mut records = Vec::with_capacity(timed.len());
    for (rec, secs) in timed {
        let _ = writeln!(
            log,
            "{} pi={} seed={} run={} status={} secs={secs:.3}",
            rec.dataset, rec.pi, rec.seed, rec.run, rec.status
        );
        records.push(rec);
    }
    let failed = records.iter().filter(|r| !r.is_ok()).count();

    report::write_runs(&out_dir.join("runs.csv"), &records)?;
    if cfg.mode == Mode::Sensitivity {
        write_sensitivity(out_dir, &records)?;
    }

    let mut all = records.clone();
    for extra in &cfg.extra_runs {
        all.extend(report::read_runs(&cfg.resolve(extra))?);
    }
    report::write_summary(out_dir, &all)?;
    let stats = if cfg.mode == Mode::Sensitivity {
        report::StatsOutcome {
            notices: vec!["statistics stage skipped in sensitivity mode".into()],
            ..Default::default()
        }
    } else {
        report::stats_stage(&all, None, out_dir)?
    };

    let summary = RunSummary {
        datasets: loaded.iter().map(|(n, _)| n.clone()).collect(),
        noise_rates: cfg.noise_rates.clone(),
        seeds: cfg.seeds.clone(),
        runs_per_config: cfg.runs_per_config,
        mode: cfg.mode,
        grid_cells: cells.len(),
        rows: records.len(),
        failed,
        complete: failed == 0,
        notices: stats.notices.clone(),
    };
    let text = toml::to_string(&summary).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(out_dir.join("summary.toml"), text)?;
    let _ = writeln!(log, "total secs={:.3}", started.elapsed().as_secs_f64());
    fs::write(out_dir.join("benchmark.log"), log)?;
    Ok(BenchOutcome { records, failed, stats })
}

/// Mean and standard deviation of KL per grid cell over the runs.
fn write_sensitivity(out_dir: &Path, records: &[RunRecord]) -> CliResult<()> {
    use std::collections::BTreeMap;
    type Key = (String, u64, u64, u64, u64, u64);
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in records {
        let (Some(a), Some(b), Some(g), Some(s), Some(kl)) = (r.alpha, r.beta, r.gamma, r.sigma, r.kl) else {
            continue;
        };
        groups
            .entry((r.dataset.clone(), r.pi.to_bits(), a.to_bits(), b.to_bits(), g.to_bits(), s.to_bits()))
            .or_default()
            .push(kl);
    }
    let mut out = String::from("dataset,pi,alpha,beta,gamma,sigma,mean_kl,std_kl,n_runs\n");
    for ((d, pi, a, b, g, s), v) in groups {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        let f = f64::from_bits;
        let _ = writeln!(out, "{d},{},{},{},{},{},{mean},{std},{}", f(pi), f(a), f(b), f(g), f(s), v.len());
    }
    fs::write(out_dir.join("sensitivity.csv"), out)?;
    Ok(())
}
