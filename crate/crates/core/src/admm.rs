//! ADMM solver for noisy label distribution recovery.
//!
//! The observed matrix is modelled as `Omega = D + X P + (X W) Q` with the
//! clean distributions approximated by `X W`. The solver minimises
//!
//! ```text
//! 1/2 ||Omega - X P - X W (Q + I)||^2 + alpha ||Z||_* + beta ||P||_{2,1}
//!     + gamma ||Q||_{2,1} + ||S - S~(W)||^2 + <Gamma, Z - W> + mu/2 ||Z - W||^2
//! ```
//!
//! by cycling Z (singular value thresholding), W (Armijo gradient descent),
//! P and Q (one reweighted least-squares step each) and the multipliers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};

use crate::error::{IldlError, Result};
use crate::graph::{self, SimilarityGraph};
use crate::model::{Hyperparams, InstanceMatrix, LabelDistributionMatrix, Model};
use crate::prox;

/// Ridge used for the initial least-squares weights.
pub const INIT_RIDGE: f64 = 1e-3;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const SOLVE_JITTER: f64 = 1e-10;

/// Iterates of the ADMM loop.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Auxiliary copy of `w` carrying the nuclear norm.
    pub z: DMatrix<f64>,
    /// Lagrange multipliers for `Z = W`.
    pub gamma: DMatrix<f64>,
    pub mu: f64,
    pub iter: usize,
    pub objective_history: Vec<f64>,
}

impl SolverState {
    pub fn model(&self) -> Model {
        Model { w: self.w.clone(), p: self.p.clone(), q: self.q.clone() }
    }

    /// `||Z - W|| / max(1, ||W||)`.
    pub fn consensus_residual(&self) -> f64 {
        (&self.z - &self.w).norm() / self.w.norm().max(1.0)
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        let ok = [&self.w, &self.p, &self.q, &self.z, &self.gamma]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.mu.is_finite();
        if ok {
            Ok(())
        } else {
            Err(IldlError::NonFiniteState { iter: self.iter, what: what.to_string() })
        }
    }
}

/// Outcome of a [`Problem::fit`] run.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: Model,
    pub recovered_d: LabelDistributionMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    /// Augmented Lagrangian at the initial state followed by one value per iteration.
    pub objective_history: Vec<f64>,
    pub consensus_residual: f64,
    /// Number of W-subproblems whose line search found no descent.
    pub w_stalls: usize,
}

/// Result of one W-subproblem solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WUpdate {
    pub steps: usize,
    pub stalled: bool,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Training data, graph and hyperparameters for one fit, with cached
/// products reused by every iteration.
#[derive(Debug)]
pub struct Problem<'a> {
    x: &'a InstanceMatrix,
    omega: &'a LabelDistributionMatrix,
    graph: &'a SimilarityGraph,
    hyper: Hyperparams,
    xtx: DMatrix<f64>,
    x_spec_sq: f64,
}

impl<'a> Problem<'a> {
    pub fn new(
        x: &'a InstanceMatrix,
        omega: &'a LabelDistributionMatrix,
        graph: &'a SimilarityGraph,
        hyper: Hyperparams,
    ) -> Result<Self> {
        hyper.validate()?;
        if x.n() != omega.n() {
            return Err(IldlError::DimensionMismatch(format!(
                "X has {} rows, Omega has {}",
                x.n(),
                omega.n()
            )));
        }
        if graph.n() != x.n() {
            return Err(IldlError::DimensionMismatch(format!(
                "graph has {} nodes, X has {} rows",
                graph.n(),
                x.n()
            )));
        }
        let xtx = x.values().tr_mul(x.values());
        let x_spec_sq = SymmetricEigen::new(xtx.clone()).eigenvalues.max().max(0.0);
        Ok(Self { x, omega, graph, hyper, xtx, x_spec_sq })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    fn xv(&self) -> &DMatrix<f64> {
        self.x.values()
    }

    fn om(&self) -> &DMatrix<f64> {
        self.omega.values()
    }

    fn q_plus_i(q: &DMatrix<f64>) -> DMatrix<f64> {
        q + DMatrix::identity(q.nrows(), q.ncols())
    }

    /// Ridge-regression start: `W = (X^T X + 1e-3 I)^-1 X^T Omega`, `Z = W`,
    /// everything else zero.
    pub fn init_state(&self) -> Result<SolverState> {
        let d = self.x.d();
        let q = self.omega.q();
        let a = &self.xtx + DMatrix::identity(d, d) * INIT_RIDGE;
        let rhs = self.xv().tr_mul(self.om());
        let w = solve_spd(a, &rhs, "ridge initialisation")?;
        Ok(SolverState {
            z: w.clone(),
            w,
            p: DMatrix::zeros(d, q),
            q: DMatrix::zeros(q, q),
            gamma: DMatrix::zeros(d, q),
            mu: self.hyper.mu0,
            iter: 0,
            objective_history: vec![],
        })
    }

    /// `R = Omega - X P - (X W)(Q + I)`; the data-fit term is `||R||^2 / 2`.
    pub fn residual(&self, state: &SolverState) -> Result<DMatrix<f64>> {
        self.check_state_dims(state)?;
        Ok(self.residual_for(&state.w, &state.p, &state.q))
    }

    fn residual_for(&self, w: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
        let x = self.xv();
        self.om() - x * p - (x * w) * Self::q_plus_i(q)
    }

    fn check_state_dims(&self, s: &SolverState) -> Result<()> {
        let (d, q) = (self.x.d(), self.omega.q());
        let ok = s.w.shape() == (d, q)
            && s.p.shape() == (d, q)
            && s.z.shape() == (d, q)
            && s.gamma.shape() == (d, q)
            && s.q.shape() == (q, q);
        if ok {
            Ok(())
        } else {
            Err(IldlError::DimensionMismatch(format!(
                "state does not match d = {d}, q = {q}"
            )))
        }
    }

    /// `Z = svt(W - Gamma / mu, alpha / mu)`.
    pub fn update_z(&self, state: &mut SolverState) -> Result<()> {
        update_z(state, self.hyper.alpha)
    }

    /// Value of the W-subproblem objective at `w` with the rest of `state` fixed.
    pub fn w_objective(&self, state: &SolverState, w: &DMatrix<f64>) -> f64 {
        let r = self.residual_for(w, &state.p, &state.q);
        let mut f = 0.5 * r.norm_squared();
        if self.hyper.graph_weight > 0.0 {
            let y = self.xv() * w;
            f += self.hyper.graph_weight * graph::graph_term_value_for(&y, self.graph);
        }
        let diff = &state.z - w;
        f + state.gamma.dot(&diff) + 0.5 * state.mu * diff.norm_squared()
    }

    /// Value and gradient of the W-subproblem objective.
    pub fn w_objective_and_grad(&self, state: &SolverState, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let x = self.xv();
        let m = Self::q_plus_i(&state.q);
        let y = x * w;
        let r = self.om() - x * &state.p - &y * &m;
        let mut f = 0.5 * r.norm_squared();
        let mut grad = -x.tr_mul(&(r * m.transpose()));
        if self.hyper.graph_weight > 0.0 {
            let (gv, gg) = graph::graph_term_value_and_grad(x, &y, self.graph);
            f += self.hyper.graph_weight * gv;
            grad += self.hyper.graph_weight * gg;
        }
        let diff = &state.z - w;
        f += state.gamma.dot(&diff) + 0.5 * state.mu * diff.norm_squared();
        grad += -&state.gamma - state.mu * &diff;
        (f, grad)
    }

    /// Gradient descent with Armijo backtracking on the W-subproblem. Each
    /// step starts from `1 / L` with `L = ||X||^2 ||Q + I||^2 + mu` and halves
    /// until the sufficient-decrease test passes; after 30 failed halvings the
    /// step is abandoned and the update reports a stall.
    pub fn update_w(&self, state: &mut SolverState) -> Result<WUpdate> {
        self.check_state_dims(state)?;
        let m_norm = prox::singular_values(&Self::q_plus_i(&state.q))?.first().copied().unwrap_or(0.0);
        let lipschitz = self.x_spec_sq * m_norm * m_norm + state.mu;
        let mut w = state.w.clone();
        let (mut f, mut grad) = self.w_objective_and_grad(state, &w);
        let before = f;
        let mut steps = 0;
        let mut stalled = false;
        for _ in 0..self.hyper.w_inner_steps {
            let g2 = grad.norm_squared();
            if g2 == 0.0 || !g2.is_finite() {
                break;
            }
            let mut t = 1.0 / lipschitz;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cand = &w - t * &grad;
                let fc = self.w_objective(state, &cand);
                if fc <= f - ARMIJO_C * t * g2 {
                    accepted = Some((cand, fc));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((cand, fc)) => {
                    let decrease = f - fc;
                    w = cand;
                    steps += 1;
                    if decrease <= 1e-15 * f.abs().max(1.0) {
                        f = fc;
                        break;
                    }
                    (f, grad) = self.w_objective_and_grad(state, &w);
                }
                None => {
                    stalled = true;
                    break;
                }
            }
        }
        state.w = w;
        Ok(WUpdate { steps, stalled, objective_before: before, objective_after: f })
    }

    /// `1/2 ||R||^2 + beta ||P||_{2,1}`.
    pub fn p_objective(&self, state: &SolverState) -> f64 {
        0.5 * self.residual_for(&state.w, &state.p, &state.q).norm_squared()
            + self.hyper.beta * prox::l21_norm(&state.p)
    }

    /// `1/2 ||R||^2 + gamma ||Q||_{2,1}`.
    pub fn q_objective(&self, state: &SolverState) -> f64 {
        0.5 * self.residual_for(&state.w, &state.p, &state.q).norm_squared()
            + self.hyper.gamma * prox::l21_norm(&state.q)
    }

    /// One reweighted least-squares step for P:
    /// `(X^T X + 2 beta G) P = X^T (Omega - X W (Q + I))`.
    pub fn update_p(&self, state: &mut SolverState) -> Result<()> {
        self.check_state_dims(state)?;
        let before = cfg!(debug_assertions).then(|| self.p_objective(state));
        let x = self.xv();
        let weights = prox::l21_reweight_diag(&state.p, self.hyper.l21_smooth_eps);
        let mut a = self.xtx.clone();
        add_diag(&mut a, &(2.0 * self.hyper.beta * weights));
        let target = self.om() - (x * &state.w) * Self::q_plus_i(&state.q);
        let rhs = x.tr_mul(&target);
        state.p = solve_with_retry(a, &rhs, "P-subproblem")?;
        if let Some(before) = before {
            let slack = 0.5 * self.hyper.beta * self.hyper.l21_smooth_eps * state.p.nrows() as f64;
            let after = self.p_objective(state);
            debug_assert!(
                after <= before + slack + 1e-9 * before.abs().max(1.0),
                "P-step increased its objective: {before} -> {after}"
            );
        }
        Ok(())
    }

    /// One reweighted least-squares step for Q with `B = X W`:
    /// `(B^T B + 2 gamma H) Q = B^T (Omega - X P - X W)`.
    pub fn update_q(&self, state: &mut SolverState) -> Result<()> {
        self.check_state_dims(state)?;
        let before = cfg!(debug_assertions).then(|| self.q_objective(state));
        let x = self.xv();
        let b = x * &state.w;
        let weights = prox::l21_reweight_diag(&state.q, self.hyper.l21_smooth_eps);
        let mut a = b.tr_mul(&b);
        add_diag(&mut a, &(2.0 * self.hyper.gamma * weights));
        let target = self.om() - x * &state.p - &b;
        let rhs = b.tr_mul(&target);
        state.q = solve_with_retry(a, &rhs, "Q-subproblem")?;
        if let Some(before) = before {
            let slack = 0.5 * self.hyper.gamma * self.hyper.l21_smooth_eps * state.q.nrows() as f64;
            let after = self.q_objective(state);
            debug_assert!(
                after <= before + slack + 1e-9 * before.abs().max(1.0),
                "Q-step increased its objective: {before} -> {after}"
            );
        }
        Ok(())
    }

    pub fn update_multipliers(&self, state: &mut SolverState) {
        update_multipliers(state, &self.hyper)
    }

    pub fn augmented_lagrangian(&self, state: &SolverState) -> Result<f64> {
        self.check_state_dims(state)?;
        let h = &self.hyper;
        let r = self.residual_for(&state.w, &state.p, &state.q);
        let mut value = 0.5 * r.norm_squared()
            + h.alpha * prox::nuclear_norm(&state.z)?
            + h.beta * prox::l21_norm(&state.p)
            + h.gamma * prox::l21_norm(&state.q);
        if h.graph_weight > 0.0 {
            let y = self.xv() * &state.w;
            value += h.graph_weight * graph::graph_term_value_for(&y, self.graph);
        }
        let diff = &state.z - &state.w;
        Ok(value + state.gamma.dot(&diff) + 0.5 * state.mu * diff.norm_squared())
    }

    /// One full sweep Z -> W -> P -> Q -> multipliers.
    pub fn step(&self, state: &mut SolverState) -> Result<WUpdate> {
        state.iter += 1;
        self.update_z(state)?;
        state.check_finite("Z-update")?;
        let wu = self.update_w(state)?;
        state.check_finite("W-update")?;
        self.update_p(state)?;
        state.check_finite("P-update")?;
        self.update_q(state)?;
        state.check_finite("Q-update")?;
        self.update_multipliers(state);
        state.check_finite("multiplier update")?;
        Ok(wu)
    }

    /// Runs the ADMM loop until the relative objective change and the
    /// consensus residual both drop below `tol`, or `max_iter` sweeps.
    pub fn fit(&self) -> Result<FitReport> {
        let mut state = self.init_state()?;
        let mut prev = self.augmented_lagrangian(&state)?;
        state.objective_history.push(prev);
        let mut converged = false;
        let mut w_stalls = 0;
        while state.iter < self.hyper.max_iter {
            let wu = self.step(&mut state)?;
            w_stalls += usize::from(wu.stalled);
            let obj = self.augmented_lagrangian(&state)?;
            if !obj.is_finite() {
                return Err(IldlError::NonFiniteState {
                    iter: state.iter,
                    what: "objective".into(),
                });
            }
            state.objective_history.push(obj);
            let rel_change = (obj - prev).abs() / prev.abs().max(1.0);
            prev = obj;
            if rel_change.max(state.consensus_residual()) < self.hyper.tol {
                converged = true;
                break;
            }
        }
        let model = state.model();
        let recovered_d = recover_d(&model, self.x, self.omega)?;
        Ok(FitReport {
            model,
            recovered_d,
            iterations: state.iter,
            converged,
            final_objective: prev,
            consensus_residual: state.consensus_residual(),
            objective_history: state.objective_history,
            w_stalls,
        })
    }
}

/// `Z = svt(W - Gamma / mu, alpha / mu)`.
pub fn update_z(state: &mut SolverState, alpha: f64) -> Result<()> {
    assert!(state.mu > 0.0, "penalty must be positive");
    let target = &state.w - &state.gamma / state.mu;
    state.z = prox::svt(&target, alpha / state.mu)?.shrunk;
    Ok(())
}

/// `Gamma += mu (Z - W)`, then `mu = min(growth * mu, mu_max)`.
pub fn update_multipliers(state: &mut SolverState, hyper: &Hyperparams) {
    state.gamma += state.mu * (&state.z - &state.w);
    state.mu = (hyper.mu_growth * state.mu).min(hyper.mu_max);
}

/// Fits with a prebuilt similarity graph.
pub fn fit(
    x: &InstanceMatrix,
    omega: &LabelDistributionMatrix,
    hyper: &Hyperparams,
    graph: &SimilarityGraph,
) -> Result<FitReport> {
    Problem::new(x, omega, graph, *hyper)?.fit()
}

/// Like [`fit`], building the kNN graph from `hyper.k_neighbors` and `hyper.sigma`.
pub fn fit_auto(x: &InstanceMatrix, omega: &LabelDistributionMatrix, hyper: &Hyperparams) -> Result<FitReport> {
    hyper.validate()?;
    let graph = if hyper.graph_weight > 0.0 {
        graph::build_knn_similarity(x, hyper.effective_k(x.n()), hyper.sigma)?
    } else {
        SimilarityGraph::empty(x.n(), hyper.sigma)
    };
    fit(x, omega, hyper, &graph)
}

fn check_model_dims(model: &Model, x: &InstanceMatrix) -> Result<()> {
    if model.d() != x.d() {
        return Err(IldlError::DimensionMismatch(format!(
            "model expects {} features, data has {}",
            model.d(),
            x.d()
        )));
    }
    Ok(())
}

/// `Omega - X P - (X W) Q`, each row projected onto the simplex.
pub fn recover_d(model: &Model, x: &InstanceMatrix, omega: &LabelDistributionMatrix) -> Result<LabelDistributionMatrix> {
    check_model_dims(model, x)?;
    if omega.n() != x.n() || omega.q() != model.n_labels() {
        return Err(IldlError::DimensionMismatch(format!(
            "Omega is {}x{}, expected {}x{}",
            omega.n(),
            omega.q(),
            x.n(),
            model.n_labels()
        )));
    }
    let xv = x.values();
    let raw = omega.values() - xv * &model.p - (xv * &model.w) * &model.q;
    LabelDistributionMatrix::new(prox::project_rows_to_simplex(&raw))
}

/// Rows of `X W`, each projected onto the simplex.
pub fn predict(model: &Model, x_new: &InstanceMatrix) -> Result<LabelDistributionMatrix> {
    check_model_dims(model, x_new)?;
    LabelDistributionMatrix::new(prox::project_rows_to_simplex(&(x_new.values() * &model.w)))
}

fn add_diag(a: &mut DMatrix<f64>, diag: &DVector<f64>) {
    for (i, v) in diag.iter().enumerate() {
        a[(i, i)] += v;
    }
}

fn solve_spd(a: DMatrix<f64>, rhs: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(a)
        .map(|c| c.solve(rhs))
        .ok_or(IldlError::SingularSystem(what))
}

/// Cholesky, then LU, then one retry with a `1e-10` diagonal shift.
fn solve_with_retry(a: DMatrix<f64>, rhs: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let attempt = |a: DMatrix<f64>| -> Option<DMatrix<f64>> {
        let sol = match Cholesky::<f64, Dyn>::new(a.clone()) {
            Some(c) => c.solve(rhs),
            None => LU::<f64, Dyn, Dyn>::new(a).solve(rhs)?,
        };
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    };
    if let Some(sol) = attempt(a.clone()) {
        return Ok(sol);
    }
    let n = a.nrows();
    attempt(a + DMatrix::identity(n, n) * SOLVE_JITTER).ok_or(IldlError::SingularSystem(what))
}
