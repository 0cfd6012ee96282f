//! Proximal and projection primitives: singular value thresholding, l2,1
//! machinery and Euclidean projection onto the probability simplex.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{IldlError, Result};

const SVD_EPS: f64 = 1e-14;
const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone)]
pub struct SvtResult {
    pub shrunk: DMatrix<f64>,
    /// Number of singular values strictly above the threshold.
    pub rank_after: usize,
    /// Singular values of the input, non-increasing.
    pub singular_values_before: Vec<f64>,
}

fn decompose(a: &DMatrix<f64>) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(a.clone(), true, true, SVD_EPS, SVD_MAX_ITER).ok_or(IldlError::SvdFailure)
}

/// Proximal operator of `tau * ||.||_*`: shrinks every singular value of `a`
/// by `tau`, dropping those that fall to zero.
pub fn svt(a: &DMatrix<f64>, tau: f64) -> Result<SvtResult> {
    assert!(tau >= 0.0, "threshold must be non-negative");
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(SvtResult { shrunk: a.clone(), rank_after: 0, singular_values_before: vec![] });
    }
    let svd = decompose(a)?;
    let u = svd.u.as_ref().ok_or(IldlError::SvdFailure)?;
    let v_t = svd.v_t.as_ref().ok_or(IldlError::SvdFailure)?;

    let mut shrunk = DMatrix::zeros(rows, cols);
    let mut rank_after = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let kept = s - tau;
        if kept > 0.0 {
            rank_after += 1;
            shrunk += kept * u.column(k) * v_t.row(k);
        }
    }
    let mut singular_values_before: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values_before.sort_by(|x, y| y.total_cmp(x));
    Ok(SvtResult { shrunk, rank_after, singular_values_before })
}

/// Singular values of `a`, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(vec![]);
    }
    let svd = SVD::try_new(a.clone(), false, false, SVD_EPS, SVD_MAX_ITER)
        .ok_or(IldlError::SvdFailure)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

pub fn nuclear_norm(a: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

/// Sum of row Euclidean norms.
pub fn l21_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.norm()).sum()
}

/// IRLS weights for `||A||_{2,1}`: `1 / (2 max(||a_i||, eps))` for every row.
pub fn l21_reweight_diag(a: &DMatrix<f64>, eps: f64) -> DVector<f64> {
    assert!(eps > 0.0, "smoothing floor must be positive");
    DVector::from_iterator(a.nrows(), a.row_iter().map(|r| 0.5 / r.norm().max(eps)))
}

/// Euclidean projection onto `{u : u >= 0, sum(u) = 1}` by sorting and
/// thresholding.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // Absorb the rounding error into the largest entry so the row sums to 1.
    let total: f64 = out.iter().sum();
    let imax = out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    out[imax] += 1.0 - total;
    out
}

/// Applies [`project_simplex`] to every row of `m`.
pub fn project_rows_to_simplex(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        for (j, v) in project_simplex(&row).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}
