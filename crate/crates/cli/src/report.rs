//! Run records, mean ± std aggregation and the statistics stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ildl::metrics::Metric;
use ildl::stats::{self, CdDiagram, Decision, Direction, FriedmanResult};
use ildl::IldlError;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Name under which this crate's solver appears in reports.
pub const METHOD_NAME: &str = "ildl";

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub method: String,
    pub pi: f64,
    pub seed: u64,
    pub run: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    /// `ok`, or `failed: <reason>` for a missing cell.
    pub status: String,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub chebyshev: Option<f64>,
    pub clark: Option<f64>,
    pub canberra: Option<f64>,
    pub kl: Option<f64>,
    pub cosine: Option<f64>,
    pub intersection: Option<f64>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn metric(&self, m: Metric) -> Option<f64> {
        if !self.is_ok() {
            return None;
        }
        match m {
            Metric::Chebyshev => self.chebyshev,
            Metric::Clark => self.clark,
            Metric::Canberra => self.canberra,
            Metric::Kl => self.kl,
            Metric::Cosine => self.cosine,
            Metric::Intersection => self.intersection,
        }
    }

    pub fn set_metrics(&mut self, r: &ildl::MetricReport) {
        self.chebyshev = Some(r.chebyshev);
        self.clark = Some(r.clark);
        self.canberra = Some(r.canberra);
        self.kl = Some(r.kl);
        self.cosine = Some(r.cosine);
        self.intersection = Some(r.intersection);
    }
}

pub fn write_runs(path: &Path, records: &[RunRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs(path: &Path) -> CliResult<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<RunRecord>, _>>()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Key ordering blocks by dataset, then noise rate.
type BlockKey = (String, u64);

fn block_key(r: &RunRecord) -> BlockKey {
    (r.dataset.clone(), r.pi.to_bits())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub pi: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of each metric per
/// (dataset, method, noise rate), over successful runs.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, u64, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.dataset.clone(), r.pi.to_bits(), r.method.clone())).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((dataset, pi, method), rs) in groups {
        for m in Metric::ALL {
            let vals: Vec<f64> = rs.iter().filter_map(|r| r.metric(m)).collect();
            if vals.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&vals);
            out.push(SummaryRow {
                dataset: dataset.clone(),
                method: method.clone(),
                pi: f64::from_bits(pi),
                metric: m.name().into(),
                mean,
                std,
                n_runs: vals.len(),
            });
        }
    }
    out
}

/// Fixed-width `mean±std` table, one line per (dataset, noise rate, method).
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut lines: BTreeMap<(String, u64, String), BTreeMap<String, String>> = BTreeMap::new();
    for r in rows {
        lines
            .entry((r.dataset.clone(), r.pi.to_bits(), r.method.clone()))
            .or_default()
            .insert(r.metric.clone(), format!("{:.4}±{:.4}", r.mean, r.std));
    }
    let mut out = format!("{:<20} {:<12} {:>5}", "dataset", "method", "pi");
    for m in Metric::ALL {
        let _ = write!(out, " {:>15}", m.name());
    }
    out.push('\n');
    for ((dataset, pi, method), cells) in lines {
        let _ = write!(out, "{:<20} {:<12} {:>5}", dataset, method, f64::from_bits(pi));
        for m in Metric::ALL {
            let _ = write!(out, " {:>15}", cells.get(m.name()).map(String::as_str).unwrap_or("-"));
        }
        out.push('\n');
    }
    out
}

pub fn write_summary(out_dir: &Path, records: &[RunRecord]) -> CliResult<Vec<SummaryRow>> {
    let rows = summarize(records);
    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    fs::write(out_dir.join("table.txt"), summary_table(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanRow {
    pub metric: Metric,
    pub n_datasets: usize,
    pub n_methods: usize,
    pub result: FriedmanResult,
    pub critical_value: f64,
    pub cd: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatsOutcome {
    /// Why the stage, or part of it, did not run.
    pub notices: Vec<String>,
    pub friedman: Vec<FriedmanRow>,
    pub wilcoxon_rows: usize,
}

fn direction(m: Metric) -> Direction {
    if m.lower_is_better() {
        Direction::LowerBetter
    } else {
        Direction::HigherBetter
    }
}

/// Mean score per block (rows) and method (columns), keeping only blocks in
/// which every method has at least one successful run.
pub fn score_matrix(records: &[RunRecord], methods: &[String], m: Metric) -> (Vec<BlockKey>, DMatrix<f64>) {
    let mut sums: BTreeMap<BlockKey, Vec<Vec<f64>>> = BTreeMap::new();
    for r in records {
        let Some(v) = r.metric(m) else { continue };
        let Some(j) = methods.iter().position(|x| *x == r.method) else { continue };
        sums.entry(block_key(r)).or_insert_with(|| vec![Vec::new(); methods.len()])[j].push(v);
    }
    let blocks: Vec<(BlockKey, Vec<f64>)> = sums
        .into_iter()
        .filter(|(_, cols)| cols.iter().all(|c| !c.is_empty()))
        .map(|(k, cols)| (k, cols.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()))
        .collect();
    let mut mat = DMatrix::zeros(blocks.len(), methods.len());
    for (i, (_, row)) in blocks.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            mat[(i, j)] = *v;
        }
    }
    (blocks.into_iter().map(|(k, _)| k).collect(), mat)
}

/// Writes `friedman.csv`, `cd_<metric>.txt` and `wilcoxon.csv`.
///
/// Friedman ranks methods on per-(dataset, noise rate) mean scores; the
/// Wilcoxon test pairs the control with each other method run by run.
pub fn stats_stage(records: &[RunRecord], control: Option<&str>, out_dir: &Path) -> CliResult<StatsOutcome> {
    let mut outcome = StatsOutcome::default();
    let methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if methods.len() < 2 {
        outcome.notices.push(format!(
            "statistics stage skipped: {} method(s) in the runs, need at least 2",
            methods.len()
        ));
        return Ok(outcome);
    }
    let control = match control {
        Some(c) => c.to_string(),
        None if methods.iter().any(|m| m == METHOD_NAME) => METHOD_NAME.to_string(),
        None => methods[0].clone(),
    };
    let control_idx = methods
        .iter()
        .position(|m| *m == control)
        .ok_or_else(|| CliError::usage(format!("control method {control:?} not found in the runs")))?;

    let mut friedman_csv = String::from("metric,n_datasets,n_methods,chi2,f_f,df1,df2,p_value,critical_0.05,degenerate,cd_0.05\n");
    for m in Metric::ALL {
        let (_, scores) = score_matrix(records, &methods, m);
        if scores.nrows() < 2 {
            outcome.notices.push(format!(
                "{m}: Friedman test and CD skipped: {} complete dataset block(s), need at least 2",
                scores.nrows()
            ));
            continue;
        }
        let ranks = stats::rank_matrix(&scores, direction(m))?;
        let result = stats::friedman_statistic(&ranks)?;
        let critical_value = result.critical_value(0.05)?;
        let diagram = CdDiagram::new(methods.clone(), &ranks, control_idx, 0.05)?;
        fs::write(out_dir.join(format!("cd_{}.txt", m.name())), diagram.to_text())?;
        let _ = writeln!(
            friedman_csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.name(),
            scores.nrows(),
            methods.len(),
            result.chi2,
            result.f_f,
            result.df1,
            result.df2,
            result.p_value,
            critical_value,
            result.degenerate,
            diagram.cd
        );
        outcome.friedman.push(FriedmanRow {
            metric: m,
            n_datasets: scores.nrows(),
            n_methods: methods.len(),
            result,
            critical_value,
            cd: diagram.cd,
        });
    }
    fs::write(out_dir.join("friedman.csv"), friedman_csv)?;

    let mut wilcoxon_csv = String::from("metric,control,other,n_pairs,statistic,p_value,decision,better\n");
    for m in Metric::ALL {
        let by_key = |method: &str| -> BTreeMap<(String, u64, u64, usize), f64> {
            records
                .iter()
                .filter(|r| r.method == method)
                .filter_map(|r| r.metric(m).map(|v| ((r.dataset.clone(), r.pi.to_bits(), r.seed, r.run), v)))
                .collect()
        };
        let ctrl = by_key(&control);
        for other in methods.iter().filter(|o| **o != control) {
            let oth = by_key(other);
            let (a, b): (Vec<f64>, Vec<f64>) =
                ctrl.iter().filter_map(|(k, &v)| oth.get(k).map(|&w| (v, w))).unzip();
            match stats::wilcoxon_signed_rank(&a, &b) {
                Ok(t) => {
                    let control_better = if m.lower_is_better() { t.median_difference < 0.0 } else { t.median_difference > 0.0 };
                    let better = if t.median_difference == 0.0 {
                        "tie"
                    } else if control_better {
                        control.as_str()
                    } else {
                        other.as_str()
                    };
                    let decision = match t.decision {
                        Decision::Reject => "reject",
                        Decision::Retain => "retain",
                    };
                    let _ = writeln!(
                        wilcoxon_csv,
                        "{},{},{},{},{},{},{},{}",
                        m.name(),
                        control,
                        other,
                        t.n_effective,
                        t.statistic,
                        t.p_value,
                        decision,
                        better
                    );
                    outcome.wilcoxon_rows += 1;
                }
                Err(e @ (IldlError::InsufficientData { .. } | IldlError::AllZeroDifferences)) => {
                    outcome.notices.push(format!("{m}: Wilcoxon {control} vs {other} skipped: {e}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    fs::write(out_dir.join("wilcoxon.csv"), wilcoxon_csv)?;
    Ok(outcome)
}
