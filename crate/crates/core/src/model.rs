//! Shared data model: instances, label distributions, fitted parameters and
//! solver hyperparameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{IldlError, Result};

/// Rows may deviate from unit sum by at most this much.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Entries in `[-NEGATIVE_CLAMP, 0)` are clamped to zero; anything lower is rejected.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

/// `n × d` feature matrix, one instance per row.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMatrix {
    values: DMatrix<f64>,
}

impl InstanceMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() < 1 {
            return Err(IldlError::InvalidShape(format!(
                "instance matrix must be at least 2x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.values.select_rows(indices.iter()))
    }
}

/// `n × q` matrix whose rows lie on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistributionMatrix {
    values: DMatrix<f64>,
}

impl LabelDistributionMatrix {
    /// Validates `values`, clamping tiny negative entries to zero.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        validate_distribution_matrix(values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.values.select_rows(indices.iter()))
    }
}

/// Checks that every row of `m` is a probability vector.
pub fn validate_distribution_matrix(mut m: DMatrix<f64>) -> Result<LabelDistributionMatrix> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(IldlError::InvalidShape(format!(
            "label matrix must be non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(&m)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v < -NEGATIVE_CLAMP {
                return Err(IldlError::NegativeEntry { row: i, col: j, value: v });
            }
            if v < 0.0 {
                m[(i, j)] = 0.0;
            }
        }
        let sum: f64 = m.row(i).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(IldlError::RowSumViolation { row: i, sum });
        }
    }
    Ok(LabelDistributionMatrix { values: m })
}

/// Fitted parameters: regression weights `w` (d×q), instance-noise
/// coefficients `p` (d×q) and label-noise coefficients `q` (q×q).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub w: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl Model {
    pub fn new(w: DMatrix<f64>, p: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let (d, nq) = w.shape();
        if p.shape() != (d, nq) {
            return Err(IldlError::DimensionMismatch(format!(
                "P is {:?}, expected {:?}",
                p.shape(),
                (d, nq)
            )));
        }
        if q.shape() != (nq, nq) {
            return Err(IldlError::DimensionMismatch(format!(
                "Q is {:?}, expected {:?}",
                q.shape(),
                (nq, nq)
            )));
        }
        for m in [&w, &p, &q] {
            check_finite(m)?;
        }
        Ok(Self { w, p, q })
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.w.ncols()
    }
}

/// Trade-off weights, kernel settings and ADMM schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Nuclear-norm weight on the regression weights.
    pub alpha: f64,
    /// Group-sparsity weight on the instance-noise coefficients.
    pub beta: f64,
    /// Group-sparsity weight on the label-noise coefficients.
    pub gamma: f64,
    /// Gaussian kernel bandwidth shared by the feature and label graphs.
    pub sigma: f64,
    /// Weight on the graph-alignment term; 0 disables it.
    pub graph_weight: f64,
    /// Neighbours per instance; clamped to `n - 1` at fit time.
    pub k_neighbors: usize,
    pub mu0: f64,
    pub mu_max: f64,
    pub mu_growth: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Gradient steps per W-subproblem.
    pub w_inner_steps: usize,
    /// Floor on row norms in the l2,1 reweighting.
    pub l21_smooth_eps: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.05,
            gamma: 0.05,
            sigma: 0.5,
            graph_weight: 0.0,
            k_neighbors: 10,
            mu0: 0.1,
            mu_max: 1e6,
            mu_growth: 1.1,
            tol: 1e-6,
            max_iter: 200,
            w_inner_steps: 10,
            l21_smooth_eps: 1e-8,
        }
    }
}

/// Default hyperparameters. They do not depend on the problem size; the
/// arguments are accepted so callers can pass the shape they are fitting.
pub fn default_hyperparams(_d: usize, _q: usize) -> Hyperparams {
    Hyperparams::default()
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(IldlError::InvalidHyperparams(msg));
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("graph_weight", self.graph_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("mu0", self.mu0),
            ("mu_max", self.mu_max),
            ("tol", self.tol),
            ("l21_smooth_eps", self.l21_smooth_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.k_neighbors < 1 {
            return bad("k_neighbors must be >= 1".into());
        }
        if !(self.mu_growth > 1.0 && self.mu_growth.is_finite()) {
            return bad(format!("mu_growth must be > 1, got {}", self.mu_growth));
        }
        if self.mu0 > self.mu_max {
            return bad(format!("mu0 {} exceeds mu_max {}", self.mu0, self.mu_max));
        }
        if self.w_inner_steps < 1 {
            return bad("w_inner_steps must be >= 1".into());
        }
        Ok(())
    }

    /// Neighbour count usable on `n` instances.
    pub fn effective_k(&self, n: usize) -> usize {
        self.k_neighbors.min(n.saturating_sub(1)).max(1)
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(IldlError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(IldlError::InvalidShape(format!(
            "row {i} has {} columns, expected {cols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(n, cols, |i, j| rows[i][j]))
}
