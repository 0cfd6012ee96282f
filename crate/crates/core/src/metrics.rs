//! The six label distribution measures: Chebyshev, Clark, Canberra and KL
//! (lower is better), Cosine and Intersection (higher is better).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IldlError, Result};
use crate::model::LabelDistributionMatrix;

/// Floor applied to denominators and to the prediction inside the KL log.
pub const METRIC_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Chebyshev,
    Clark,
    Canberra,
    Kl,
    Cosine,
    Intersection,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Chebyshev,
        Metric::Clark,
        Metric::Canberra,
        Metric::Kl,
        Metric::Cosine,
        Metric::Intersection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Chebyshev => "chebyshev",
            Metric::Clark => "clark",
            Metric::Canberra => "canberra",
            Metric::Kl => "kl",
            Metric::Cosine => "cosine",
            Metric::Intersection => "intersection",
        }
    }

    pub fn lower_is_better(self) -> bool {
        !matches!(self, Metric::Cosine | Metric::Intersection)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = IldlError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| IldlError::UnknownMetric(s.to_string()))
    }
}

/// Evaluates one measure on a pair of distributions, `d` being the truth.
pub fn metric(m: Metric, d: &[f64], d_hat: &[f64]) -> Result<f64> {
    if d.len() != d_hat.len() {
        return Err(IldlError::DimensionMismatch(format!(
            "distributions have lengths {} and {}",
            d.len(),
            d_hat.len()
        )));
    }
    let pairs = d.iter().copied().zip(d_hat.iter().copied());
    let v = match m {
        Metric::Chebyshev => pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        Metric::Clark => pairs
            .map(|(a, b)| (a - b).powi(2) / ((a + b).powi(2)).max(METRIC_FLOOR))
            .sum::<f64>()
            .sqrt(),
        Metric::Canberra => pairs.map(|(a, b)| (a - b).abs() / (a + b).max(METRIC_FLOOR)).sum(),
        Metric::Kl => pairs
            .filter(|&(a, _)| a > 0.0)
            .map(|(a, b)| a * (a / b.max(METRIC_FLOOR)).ln())
            .sum(),
        Metric::Cosine => {
            let dot: f64 = pairs.map(|(a, b)| a * b).sum();
            let na = d.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb = d_hat.iter().map(|b| b * b).sum::<f64>().sqrt();
            dot / (na * nb).max(METRIC_FLOOR)
        }
        Metric::Intersection => pairs.map(|(a, b)| a.min(b)).sum(),
    };
    Ok(v)
}

/// Looks a measure up by name.
pub fn metric_by_name(name: &str, d: &[f64], d_hat: &[f64]) -> Result<f64> {
    metric(name.parse()?, d, d_hat)
}

/// Mean of each measure over the rows of a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chebyshev: f64,
    pub clark: f64,
    pub canberra: f64,
    pub kl: f64,
    pub cosine: f64,
    pub intersection: f64,
    pub n_instances: usize,
}

impl MetricReport {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Chebyshev => self.chebyshev,
            Metric::Clark => self.clark,
            Metric::Canberra => self.canberra,
            Metric::Kl => self.kl,
            Metric::Cosine => self.cosine,
            Metric::Intersection => self.intersection,
        }
    }

    /// Values in [`Metric::ALL`] order.
    pub fn values(&self) -> [f64; 6] {
        Metric::ALL.map(|m| self.get(m))
    }

    /// `name = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for m in Metric::ALL {
            out.push_str(&format!("{} = {}\n", m.name(), self.get(m)));
        }
        out.push_str(&format!("n_instances = {}\n", self.n_instances));
        out
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn evaluate_all(d: &LabelDistributionMatrix, d_hat: &LabelDistributionMatrix) -> Result<MetricReport> {
    if d.n() != d_hat.n() || d.q() != d_hat.q() {
        return Err(IldlError::DimensionMismatch(format!(
            "truth is {}x{}, prediction is {}x{}",
            d.n(),
            d.q(),
            d_hat.n(),
            d_hat.q()
        )));
    }
    let mut sums = [CompensatedSum::default(); 6];
    for i in 0..d.n() {
        let (a, b) = (d.row(i), d_hat.row(i));
        for (k, m) in Metric::ALL.into_iter().enumerate() {
            sums[k].add(metric(m, &a, &b)?);
        }
    }
    let n = d.n() as f64;
    let mean = |k: usize| sums[k].total() / n;
    Ok(MetricReport {
        chebyshev: mean(0),
        clark: mean(1),
        canberra: mean(2),
        kl: mean(3),
        cosine: mean(4),
        intersection: mean(5),
        n_instances: d.n(),
    })
}
