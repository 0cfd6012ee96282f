//! Label distribution learning from observations corrupted by instance- and
//! label-dependent noise.
//!
//! The crate is organised around the fitting pipeline:
//!
//! * [`model`]: validated instance and label-distribution matrices, fitted
//!   parameters and hyperparameters.
//! * [`prox`]: singular value thresholding, l2,1 reweighting and simplex
//!   projection.
//! * [`graph`]: kNN similarity graph and the graph-alignment term.
//! * [`admm`]: the ADMM solver, label recovery and prediction.
//! * [`noise`]: the dependent-noise corruption generator.
//! * [`metrics`]: the six label distribution evaluation measures.
//! * [`stats`]: Friedman, Bonferroni-Dunn and Wilcoxon machinery.
//! * [`dataset`]: CSV ingestion, manifests, splitting and standardisation.
//! * [`model_io`]: binary model files.

pub mod admm;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod model_io;
pub mod noise;
pub mod prox;
pub mod stats;
pub mod synthetic;

pub use admm::{fit, fit_auto, predict, recover_d, FitReport, Problem, SolverState};
pub use error::{IldlError, Result};
pub use graph::{build_knn_similarity, SimilarityGraph};
pub use metrics::{evaluate_all, Metric, MetricReport};
pub use model::{default_hyperparams, Hyperparams, InstanceMatrix, LabelDistributionMatrix, Model};
pub use noise::{corrupt, NoiseConfig, NoiseDraw};
