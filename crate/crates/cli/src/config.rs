//! Experiment configuration files.
//!
//! ```toml
//! datasets = ["yeast-alpha/manifest.toml"]   # relative to this file
//! noise_rates = [0.2]
//! seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
//! runs_per_config = 1
//! train_fraction = 0.5
//! mode = "select"                            # or "sensitivity"
//! extra_runs = ["baselines.csv"]             # pre-computed scores of other methods
//!
//! [hyper_grid]
//! alpha = [0.005, 0.01, 0.05, 0.1, 0.5, 1, 10]
//! beta = [0.05]
//! gamma = [0.05]
//! sigma = [0.5]
//!
//! [solver]                                   # any Hyperparams field
//! max_iter = 200
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ildl::Hyperparams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Pick one grid cell per run on a held-out fifth of the training split.
    #[default]
    Select,
    /// Evaluate every grid cell on the test split.
    Sensitivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let h = Hyperparams::default();
        Self { alpha: vec![h.alpha], beta: vec![h.beta], gamma: vec![h.gamma], sigma: vec![h.sigma] }
    }
}

impl HyperGrid {
    /// Every combination, alpha varying slowest.
    pub fn cells(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for &alpha in &self.alpha {
            for &beta in &self.beta {
                for &gamma in &self.gamma {
                    for &sigma in &self.sigma {
                        out.push(Hyperparams { alpha, beta, gamma, sigma, ..*base });
                    }
                }
            }
        }
        out
    }
}

fn default_noise_rates() -> Vec<f64> {
    vec![0.2]
}

fn default_runs() -> usize {
    1
}

fn default_train_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<PathBuf>,
    #[serde(default = "default_noise_rates")]
    pub noise_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_runs")]
    pub runs_per_config: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub hyper_grid: HyperGrid,
    #[serde(default)]
    pub solver: Hyperparams,
    #[serde(default)]
    pub extra_runs: Vec<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::usage(m));
        if self.datasets.is_empty() {
            return bad("config lists no datasets".into());
        }
        for (name, grid) in [
            ("noise_rates", &self.noise_rates),
            ("hyper_grid.alpha", &self.hyper_grid.alpha),
            ("hyper_grid.beta", &self.hyper_grid.beta),
            ("hyper_grid.gamma", &self.hyper_grid.gamma),
            ("hyper_grid.sigma", &self.hyper_grid.sigma),
        ] {
            if grid.is_empty() {
                return bad(format!("{name} must not be empty"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.runs_per_config == 0 {
            return bad("runs_per_config must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        for &pi in &self.noise_rates {
            ildl::NoiseConfig::new(pi, 0)?;
        }
        for cell in self.hyper_grid.cells(&self.solver) {
            cell.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg: ExperimentConfig = toml::from_str("datasets = [\"a.toml\"]\nseeds = [1, 2]\n").unwrap();
        assert_eq!(cfg.noise_rates, vec![0.2]);
        assert_eq!(cfg.mode, Mode::Select);
        assert_eq!(cfg.hyper_grid.cells(&cfg.solver).len(), 1);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_duplicate_seeds_and_empty_grids() {
        let cfg: ExperimentConfig = toml::from_str("datasets = [\"a\"]\nseeds = [1, 1]\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: ExperimentConfig =
            toml::from_str("datasets = [\"a\"]\nseeds = [1]\n[hyper_grid]\nalpha = []\nbeta = [1]\ngamma = [1]\nsigma = [1]\n")
                .unwrap();
        assert!(cfg.validate().is_err());
        assert!(toml::from_str::<ExperimentConfig>("datasets = [\"a\"]\nseeds = [1]\nbogus = 1\n").is_err());
    }

    #[test]
    fn grid_is_a_cartesian_product() {
        let g = HyperGrid { alpha: vec![0.1, 1.0], beta: vec![0.5], gamma: vec![0.2, 0.3, 0.4], sigma: vec![1.0] };
        let cells = g.cells(&Hyperparams::default());
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[0].alpha, cells[0].gamma), (0.1, 0.2));
        assert_eq!((cells[5].alpha, cells[5].gamma), (1.0, 0.4));
    }
}
