//! Synthetic datasets with a known low-rank linear generator, used by the
//! test suites and the toy benchmark configurations.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{InstanceMatrix, LabelDistributionMatrix};
use crate::noise::{self, softmax};
use crate::prox::project_simplex;

/// How clean distributions are derived from the latent scores `X W*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelLink {
    /// `softmax(x_i W*)`: strictly positive rows.
    #[default]
    Softmax,
    /// `project_simplex(x_i W*)`: exactly what a linear model predicts.
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub q: usize,
    /// Rank of the generating weights.
    pub rank: usize,
    /// Standard deviation of each latent score.
    pub scale: f64,
    /// Standard deviation of each feature.
    pub feature_std: f64,
    pub link: LabelLink,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, q: usize, seed: u64) -> Self {
        Self { n, d, q, rank: q.min(d).min(3).max(1), scale: 1.0, feature_std: 1.0, link: LabelLink::Softmax, seed }
    }
}

/// Generated instance together with the weights that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub x: InstanceMatrix,
    pub d: LabelDistributionMatrix,
    pub w_true: DMatrix<f64>,
}

/// Draws `X` with i.i.d. `N(0, feature_std^2)` entries and a rank-`rank` `W*`
/// scaled so each latent score has standard deviation `scale`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let mut rng = noise::substream(spec.seed, 100);
    let x = DMatrix::from_fn(spec.n, spec.d, |_, _| spec.feature_std * rng.sample::<f64, _>(StandardNormal));
    let a = DMatrix::from_fn(spec.d, spec.rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = DMatrix::from_fn(spec.rank, spec.q, |_, _| rng.sample::<f64, _>(StandardNormal));
    // Var(x W*_{:j}) = sum_k W*_{kj}^2 ~ d * rank for unit-normal factors.
    let w_true = (a * b) * (spec.scale / (spec.feature_std * ((spec.d * spec.rank) as f64).sqrt()));
    let scores = &x * &w_true;
    let mut d = DMatrix::zeros(spec.n, spec.q);
    for i in 0..spec.n {
        let row: Vec<f64> = scores.row(i).iter().copied().collect();
        let dist = match spec.link {
            LabelLink::Softmax => softmax(&row),
            LabelLink::Projection => project_simplex(&row),
        };
        for (j, v) in dist.into_iter().enumerate() {
            d[(i, j)] = v;
        }
    }
    Ok(SyntheticData {
        x: InstanceMatrix::new(x)?,
        d: LabelDistributionMatrix::new(d)?,
        w_true,
    })
}
