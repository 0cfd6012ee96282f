//! Rank aggregation, the Friedman / Iman-Davenport test, Bonferroni-Dunn
//! critical differences and the Wilcoxon signed-rank test.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{IldlError, Result};

/// Largest effective sample size handled by the exact Wilcoxon distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

const BONFERRONI_DUNN_TABLE: &str = include_str!("../data/bonferroni_dunn.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

/// Per-dataset ranks of `K` algorithms over `N` datasets; rank 1 is best.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    ranks: DMatrix<f64>,
    direction: Direction,
}

impl RankMatrix {
    pub fn ranks(&self) -> &DMatrix<f64> {
        &self.ranks
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn n_datasets(&self) -> usize {
        self.ranks.nrows()
    }

    pub fn n_algorithms(&self) -> usize {
        self.ranks.ncols()
    }

    pub fn mean_ranks(&self) -> Vec<f64> {
        let n = self.n_datasets() as f64;
        self.ranks.column_iter().map(|c| c.sum() / n).collect()
    }
}

/// Mid-ranks of `values`, 1-based, smallest value first.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Ranks each row of `scores` (datasets × algorithms), averaging ties.
pub fn rank_matrix(scores: &DMatrix<f64>, direction: Direction) -> Result<RankMatrix> {
    for (idx, v) in scores.iter().enumerate() {
        if !v.is_finite() {
            let (row, col) = (idx % scores.nrows(), idx / scores.nrows());
            return Err(IldlError::NonFiniteScore { row, col });
        }
    }
    let mut ranks = DMatrix::zeros(scores.nrows(), scores.ncols());
    for i in 0..scores.nrows() {
        let row: Vec<f64> = scores
            .row(i)
            .iter()
            .map(|&v| match direction {
                Direction::LowerBetter => v,
                Direction::HigherBetter => -v,
            })
            .collect();
        for (j, r) in mid_ranks(&row).into_iter().enumerate() {
            ranks[(i, j)] = r;
        }
    }
    Ok(RankMatrix { ranks, direction })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi2: f64,
    /// Iman-Davenport statistic; infinite when `degenerate`.
    pub f_f: f64,
    /// Every dataset ranks the algorithms identically with no ties, so the
    /// within-dataset variance is zero.
    pub degenerate: bool,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
}

impl FriedmanResult {
    /// Critical value of `F(df1, df2)` at level `alpha`.
    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        f_critical(self.df1, self.df2, alpha)
    }
}

pub fn f_critical(df1: f64, df2: f64, alpha: f64) -> Result<f64> {
    let f = FisherSnedecor::new(df1, df2)
        .map_err(|e| IldlError::InvalidHyperparams(format!("F({df1}, {df2}): {e}")))?;
    Ok(f.inverse_cdf(1.0 - alpha))
}

pub fn friedman_statistic(ranks: &RankMatrix) -> Result<FriedmanResult> {
    let (n, k) = (ranks.n_datasets(), ranks.n_algorithms());
    if n < 2 {
        return Err(IldlError::InsufficientData { what: "datasets", needed: 2, got: n });
    }
    if k < 2 {
        return Err(IldlError::InsufficientData { what: "algorithms", needed: 2, got: k });
    }
    let (nf, kf) = (n as f64, k as f64);
    let centre = (kf + 1.0) / 2.0;
    let ss: f64 = ranks.mean_ranks().iter().map(|r| (r - centre).powi(2)).sum();
    let chi2 = 12.0 * nf / (kf * (kf + 1.0)) * ss;
    let denom = nf * (kf - 1.0) - chi2;
    let df1 = kf - 1.0;
    let df2 = (kf - 1.0) * (nf - 1.0);
    let degenerate = denom <= 1e-12 * nf * kf;
    let (f_f, p_value) = if degenerate {
        (f64::INFINITY, 0.0)
    } else {
        let f_f = (nf - 1.0) * chi2 / denom;
        let dist = FisherSnedecor::new(df1, df2)
            .map_err(|e| IldlError::InvalidHyperparams(format!("F({df1}, {df2}): {e}")))?;
        (f_f, dist.sf(f_f).clamp(0.0, 1.0))
    };
    Ok(FriedmanResult { chi2, f_f, degenerate, df1, df2, p_value })
}

fn table_column(alpha: f64) -> Result<usize> {
    if (alpha - 0.05).abs() < 1e-12 {
        Ok(1)
    } else if (alpha - 0.1).abs() < 1e-12 {
        Ok(2)
    } else {
        Err(IldlError::UnsupportedAlpha(alpha))
    }
}

/// Tabulated `q_alpha` for `k` algorithms, if `k` is covered by the table.
pub fn bonferroni_dunn_table_value(k: usize, alpha: f64) -> Result<Option<f64>> {
    let col = table_column(alpha)?;
    for line in BONFERRONI_DUNN_TABLE.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('k') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| IldlError::Parse {
                source_name: "bonferroni_dunn.csv".into(),
                message: format!("bad field {s:?}"),
            })
        };
        if parse(fields[0])? as usize == k {
            return Ok(Some(parse(fields[col])?));
        }
    }
    Ok(None)
}

/// `q_alpha` for `k` algorithms: the embedded table for `k <= 10`, otherwise
/// the normal quantile `z_{1 - alpha / (2 (k - 1))}` the table is built from.
pub fn bonferroni_dunn_q(k: usize, alpha: f64) -> Result<f64> {
    if k < 2 {
        return Err(IldlError::InsufficientData { what: "algorithms", needed: 2, got: k });
    }
    if let Some(q) = bonferroni_dunn_table_value(k, alpha)? {
        return Ok(q);
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / (2.0 * (k as f64 - 1.0))))
}

/// Critical difference in average rank, `q_alpha * sqrt(K (K + 1) / (6 N))`.
pub fn bonferroni_dunn_cd(k: usize, n: usize, alpha: f64) -> Result<f64> {
    let q = bonferroni_dunn_q(k, alpha)?;
    if n < 1 {
        return Err(IldlError::InsufficientData { what: "datasets", needed: 1, got: n });
    }
    let (kf, nf) = (k as f64, n as f64);
    Ok(q * (kf * (kf + 1.0) / (6.0 * nf)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Retain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Sum of the ranks of positive differences `a - b`.
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub decision: Decision,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub exact: bool,
    /// Median of `a - b`; its sign gives the direction of the difference.
    pub median_difference: f64,
}

/// Two-sided Wilcoxon signed-rank test of `a` against `b` at level 0.05.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    wilcoxon_signed_rank_at(a, b, 0.05)
}

pub fn wilcoxon_signed_rank_at(a: &[f64], b: &[f64], alpha: f64) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(IldlError::DimensionMismatch(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(IldlError::InsufficientData { what: "pairs", needed: 3, got: a.len() });
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(IldlError::NonFiniteScore { row: i % a.len(), col: i / a.len() });
    }
    let all_diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let diffs: Vec<f64> = all_diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if diffs.is_empty() {
        return Err(IldlError::AllZeroDifferences);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = mid_ranks(&abs);
    let t_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let (p_value, exact) = if n <= WILCOXON_EXACT_MAX_N {
        (exact_two_sided_p(&ranks, t_plus), true)
    } else {
        (normal_two_sided_p(&ranks, t_plus), false)
    };
    let p_value = p_value.clamp(0.0, 1.0);
    Ok(TestResult {
        statistic: t_plus,
        p_value,
        alpha,
        decision: if p_value < alpha { Decision::Reject } else { Decision::Retain },
        n_effective: n,
        exact,
        median_difference: median(&all_diffs),
    })
}

/// Exact null distribution of the positive-rank sum, counted over all `2^n`
/// sign patterns. Mid-ranks are doubled so every rank is an integer.
fn exact_two_sided_p(ranks: &[f64], t_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let patterns = 2f64.powi(ranks.len() as i32);
    let t = (2.0 * t_plus).round() as usize;
    let lower: f64 = counts[..=t].iter().sum();
    let upper: f64 = counts[t..].iter().sum();
    (2.0 * lower.min(upper) / patterns).min(1.0)
}

fn normal_two_sided_p(ranks: &[f64], t_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let dev = (t_plus - mean).abs();
    let z = ((dev - 0.5).max(0.0)) / var.sqrt();
    2.0 * Normal::standard().sf(z)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Average ranks, CD and groupings in the layout consumed by CD-diagram
/// plotting scripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdDiagram {
    pub names: Vec<String>,
    pub mean_ranks: Vec<f64>,
    pub cd: f64,
    pub alpha: f64,
    pub control: usize,
    /// Maximal sets of algorithms whose average ranks lie within `cd` of
    /// each other, as indices into `names`.
    pub groups: Vec<Vec<usize>>,
}

impl CdDiagram {
    pub fn new(names: Vec<String>, ranks: &RankMatrix, control: usize, alpha: f64) -> Result<Self> {
        if names.len() != ranks.n_algorithms() {
            return Err(IldlError::DimensionMismatch(format!(
                "{} names for {} algorithms",
                names.len(),
                ranks.n_algorithms()
            )));
        }
        if control >= names.len() {
            return Err(IldlError::DimensionMismatch(format!("control index {control} out of range")));
        }
        let mean_ranks = ranks.mean_ranks();
        let cd = bonferroni_dunn_cd(ranks.n_algorithms(), ranks.n_datasets(), alpha)?;
        let groups = cd_groups(&mean_ranks, cd);
        Ok(Self { names, mean_ranks, cd, alpha, control, groups })
    }

    /// Whether algorithm `j` differs significantly from the control.
    pub fn differs_from_control(&self, j: usize) -> bool {
        (self.mean_ranks[j] - self.mean_ranks[self.control]).abs() > self.cd
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# cd {:.6} alpha {}", self.cd, self.alpha);
        let _ = writeln!(out, "# control {}", self.names[self.control]);
        let _ = writeln!(out, "algorithm,mean_rank,differs_from_control");
        let mut order: Vec<usize> = (0..self.names.len()).collect();
        order.sort_by(|&a, &b| self.mean_ranks[a].partial_cmp(&self.mean_ranks[b]).unwrap_or(Ordering::Equal));
        for j in order {
            let _ = writeln!(out, "{},{:.6},{}", self.names[j], self.mean_ranks[j], self.differs_from_control(j));
        }
        for g in &self.groups {
            let members: Vec<&str> = g.iter().map(|&j| self.names[j].as_str()).collect();
            let _ = writeln!(out, "group,{}", members.join(";"));
        }
        out
    }
}

/// Maximal runs of rank-sorted algorithms spanning at most `cd`.
pub fn cd_groups(mean_ranks: &[f64], cd: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..mean_ranks.len()).collect();
    order.sort_by(|&a, &b| mean_ranks[a].partial_cmp(&mean_ranks[b]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for start in 0..order.len() {
        let mut end = start;
        while end + 1 < order.len() && mean_ranks[order[end + 1]] - mean_ranks[order[start]] <= cd {
            end += 1;
        }
        if end > start && !groups.iter().any(|&(s, e)| s <= start && end <= e) {
            groups.push((start, end));
        }
    }
    groups.into_iter().map(|(s, e)| order[s..=e].to_vec()).collect()
}
