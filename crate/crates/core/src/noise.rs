//! Synthetic corruption with instance- and label-dependent flip rates.
//!
//! For every instance a flip budget `phi_i ~ TruncNormal(pi, 0.1^2, [0, 1])`
//! is drawn, spread over the labels by
//! `p_i = phi_i * softmax(x_i rho1 + d_i rho2)` with `rho1`, `rho2` standard
//! normal. Each label is then flipped on independently with probability
//! `p_i(j)`, the 0/1 selector is added to `d_i` and the row is renormalised.
//!
//! Randomness comes from ChaCha8 seeded with the configured seed, using one
//! stream per quantity so the draws are reproducible on every platform:
//!
//! | stream | quantity | draw order |
//! |--------|----------|------------|
//! | 0 | `phi` | instance order |
//! | 1 | `rho1` | row-major `d × q` |
//! | 2 | `rho2` | row-major `q × q` |
//! | 3 | selectors | row-major `n × q`, one uniform per entry |

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{IldlError, Result};
use crate::model::{InstanceMatrix, LabelDistributionMatrix};

pub const STREAM_PHI: u64 = 0;
pub const STREAM_RHO1: u64 = 1;
pub const STREAM_RHO2: u64 = 2;
pub const STREAM_SELECTORS: u64 = 3;

/// Standard deviation of the per-instance flip budget.
pub const FLIP_STD: f64 = 0.1;

const MAX_REJECTIONS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Noise rate: mean of the truncated normal flip budget.
    pub pi: f64,
    pub flip_std: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(pi: f64, seed: u64) -> Result<Self> {
        let cfg = Self { pi, flip_std: FLIP_STD, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(IldlError::InvalidNoiseConfig(format!("pi must lie in [0, 1], got {}", self.pi)));
        }
        if !(self.flip_std > 0.0 && self.flip_std.is_finite()) {
            return Err(IldlError::InvalidNoiseConfig(format!(
                "flip_std must be positive, got {}",
                self.flip_std
            )));
        }
        Ok(())
    }
}

/// Every random quantity drawn by [`corrupt`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub phi: Vec<f64>,
    pub rho1: DMatrix<f64>,
    pub rho2: DMatrix<f64>,
    pub flip_probs: DMatrix<f64>,
    pub selectors: DMatrix<u8>,
}

impl NoiseDraw {
    pub fn total_flips(&self) -> usize {
        self.selectors.iter().map(|&s| s as usize).sum()
    }
}

/// ChaCha8 generator positioned at the start of `stream` for `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws from `N(mean, std^2)` conditioned on `[lo, hi]` by rejection.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    std: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lo < hi) || !(std > 0.0) {
        return Err(IldlError::DegenerateInterval { lo, hi });
    }
    for _ in 0..MAX_REJECTIONS {
        let z: f64 = rng.sample(StandardNormal);
        let v = mean + std * z;
        if (lo..=hi).contains(&v) {
            return Ok(v);
        }
    }
    Err(IldlError::RejectionExhausted(MAX_REJECTIONS))
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Adds the 0/1 selector to `d` and renormalises by `1 + #flips`.
pub fn apply_selectors(d: &[f64], selectors: &[u8]) -> Vec<f64> {
    let flips: usize = selectors.iter().map(|&s| s as usize).sum();
    if flips == 0 {
        return d.to_vec();
    }
    let denom = 1.0 + flips as f64;
    d.iter().zip(selectors).map(|(&v, &s)| (v + s as f64) / denom).collect()
}

/// Corrupts the clean distributions `d` into an observed matrix `Omega`.
pub fn corrupt(
    x: &InstanceMatrix,
    d: &LabelDistributionMatrix,
    cfg: &NoiseConfig,
) -> Result<(LabelDistributionMatrix, NoiseDraw)> {
    cfg.validate()?;
    if x.n() != d.n() {
        return Err(IldlError::DimensionMismatch(format!(
            "X has {} rows, D has {}",
            x.n(),
            d.n()
        )));
    }
    let (n, nf, q) = (x.n(), x.d(), d.q());

    let mut rng = substream(cfg.seed, STREAM_PHI);
    let phi = (0..n)
        .map(|_| sample_truncated_normal(cfg.pi, cfg.flip_std, 0.0, 1.0, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let rho1 = standard_normal_matrix(nf, q, &mut substream(cfg.seed, STREAM_RHO1));
    let rho2 = standard_normal_matrix(q, q, &mut substream(cfg.seed, STREAM_RHO2));

    let logits = x.values() * &rho1 + d.values() * &rho2;
    let mut flip_probs = DMatrix::zeros(n, q);
    for i in 0..n {
        let row: Vec<f64> = logits.row(i).iter().copied().collect();
        for (j, s) in softmax(&row).into_iter().enumerate() {
            flip_probs[(i, j)] = phi[i] * s;
        }
    }

    let mut rng = substream(cfg.seed, STREAM_SELECTORS);
    let mut selectors = DMatrix::<u8>::zeros(n, q);
    for i in 0..n {
        for j in 0..q {
            let u: f64 = rng.random();
            selectors[(i, j)] = u8::from(u < flip_probs[(i, j)]);
        }
    }

    let mut omega = d.values().clone();
    for i in 0..n {
        let sel: Vec<u8> = selectors.row(i).iter().copied().collect();
        let row = apply_selectors(&d.row(i), &sel);
        for (j, v) in row.into_iter().enumerate() {
            omega[(i, j)] = v;
        }
    }
    let omega = LabelDistributionMatrix::new(omega)?;
    Ok((omega, NoiseDraw { phi, rho1, rho2, flip_probs, selectors }))
}

fn standard_normal_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // Filled row-major to match the documented draw order.
    let data: Vec<f64> = (0..r * c).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(r, c, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = substream(1, 0);
        for _ in 0..10_000 {
            let v = sample_truncated_normal(0.2, 0.1, 0.0, 1.0, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        let v = sample_truncated_normal(0.5, 1e-9, 0.0, 1.0, &mut rng).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-7);
        assert!(matches!(
            sample_truncated_normal(0.5, 0.1, 1.0, 1.0, &mut rng),
            Err(IldlError::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        for v in softmax(&[3.0, 3.0, 3.0]) {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let e = std::f64::consts::E;
        let s = softmax(&[1.0, 0.0]);
        assert_abs_diff_eq!(s[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s[0], 0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(s[1], 0.268941, epsilon = 1e-6);
        let big = softmax(&[1000.0, 0.0]);
        assert_eq!(big, vec![1.0, 0.0]);
    }

    #[test]
    fn selector_application() {
        assert_eq!(apply_selectors(&[0.3, 0.7], &[0, 0]), vec![0.3, 0.7]);
        assert_eq!(apply_selectors(&[0.5, 0.5], &[1, 0]), vec![0.75, 0.25]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(NoiseConfig::new(1.5, 0).is_err());
        assert!(NoiseConfig { pi: 0.2, flip_std: 0.0, seed: 0 }.validate().is_err());
    }
}
