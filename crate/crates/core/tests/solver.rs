use approx::assert_abs_diff_eq;
use ildl::admm::{self, Problem, SolverState};
use ildl::metrics::{metric, Metric};
use ildl::prox;
use ildl::{fit_auto, predict, recover_d, Hyperparams, InstanceMatrix, LabelDistributionMatrix, Model, SimilarityGraph};
use nalgebra::{dmatrix, DMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn simplex_rows(n: usize, q: usize, rng: &mut ChaCha8Rng) -> LabelDistributionMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..q).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect();
    LabelDistributionMatrix::from_rows(&rows).unwrap()
}

fn state(w: DMatrix<f64>, p: DMatrix<f64>, q: DMatrix<f64>, z: DMatrix<f64>, gamma: DMatrix<f64>, mu: f64) -> SolverState {
    SolverState { w, p, q, z, gamma, mu, iter: 0, objective_history: vec![] }
}

fn zero_state(d: usize, q: usize, mu: f64) -> SolverState {
    let z = || DMatrix::zeros(d, q);
    state(z(), z(), DMatrix::zeros(q, q), z(), z(), mu)
}

/// Noiseless data whose distributions are exactly linear in the features:
/// an intercept column carries a base distribution and the remaining columns
/// add small zero-sum shifts.
fn realizable(n: usize, q: usize, seed: u64) -> (InstanceMatrix, LabelDistributionMatrix, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 4;
    let x = DMatrix::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() - 0.5 });
    let mut w = DMatrix::zeros(d, q);
    for j in 0..q {
        w[(0, j)] = 1.0 / q as f64;
    }
    for a in 1..d {
        let shift: Vec<f64> = (0..q).map(|_| 0.1 * (rng.random::<f64>() - 0.5) / q as f64).collect();
        let mean = shift.iter().sum::<f64>() / q as f64;
        for j in 0..q {
            w[(a, j)] = shift[j] - mean;
        }
    }
    let omega = LabelDistributionMatrix::new(&x * &w).unwrap();
    (InstanceMatrix::new(x).unwrap(), omega, w)
}

#[test]
fn init_state_is_ridge_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = InstanceMatrix::new(DMatrix::identity(3, 3)).unwrap();
    let omega = simplex_rows(3, 2, &mut rng);
    let graph = SimilarityGraph::empty(3, 1.0);
    let problem = Problem::new(&x, &omega, &graph, Hyperparams::default()).unwrap();
    let s = problem.init_state().unwrap();
    assert_abs_diff_eq!(s.w, omega.values() / (1.0 + 1e-3), epsilon = 1e-12);
    assert_eq!(s.z, s.w);
    assert!(s.p.iter().chain(s.q.iter()).chain(s.gamma.iter()).all(|&v| v == 0.0));
    assert_eq!(s.mu, Hyperparams::default().mu0);
}

#[test]
fn residual_hand_example() {
    let x = InstanceMatrix::new(dmatrix![1.0; 0.0]).unwrap();
    let omega = LabelDistributionMatrix::new(dmatrix![1.0, 0.0; 0.5, 0.5]).unwrap();
    let graph = SimilarityGraph::empty(2, 1.0);
    let problem = Problem::new(&x, &omega, &graph, Hyperparams::default()).unwrap();
    let mut s = zero_state(1, 2, 1.0);
    s.w = dmatrix![0.5, 0.5];
    s.p = dmatrix![0.1, -0.1];
    assert_abs_diff_eq!(problem.residual(&s).unwrap(), dmatrix![0.4, -0.4; 0.5, 0.5], epsilon = 1e-15);
}

#[test]
fn update_z_shrinks_singular_values() {
    let mut s = zero_state(2, 2, 1.0);
    s.w = dmatrix![3.0, 0.0; 0.0, 1.0];
    admm::update_z(&mut s, 2.0).unwrap();
    assert_abs_diff_eq!(s.z, dmatrix![1.0, 0.0; 0.0, 0.0], epsilon = 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = zero_state(4, 3, 2.0);
    s.w = normal(4, 3, &mut rng);
    s.gamma = normal(4, 3, &mut rng);
    admm::update_z(&mut s, 0.0).unwrap();
    assert_abs_diff_eq!(s.z, &s.w - &s.gamma / 2.0, epsilon = 1e-12);
}

#[test]
fn update_z_minimises_its_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = zero_state(5, 3, 0.7);
    s.w = normal(5, 3, &mut rng);
    s.gamma = normal(5, 3, &mut rng);
    let alpha = 0.4;
    admm::update_z(&mut s, alpha).unwrap();
    let obj = |z: &DMatrix<f64>| {
        alpha * prox::nuclear_norm(z).unwrap() + s.gamma.dot(&(z - &s.w)) + 0.5 * s.mu * (z - &s.w).norm_squared()
    };
    let best = obj(&s.z);
    for _ in 0..500 {
        let mut delta = normal(5, 3, &mut rng);
        delta *= 1e-3 / delta.norm();
        assert!(obj(&(&s.z + delta)) >= best - 1e-12);
    }
}

#[test]
fn update_w_keeps_a_stationary_point() {
    let (x, omega, w) = realizable(30, 3, 4);
    let graph = SimilarityGraph::empty(30, 1.0);
    let problem = Problem::new(&x, &omega, &graph, Hyperparams::default()).unwrap();
    let mut s = zero_state(4, 3, 1.0);
    s.w = w.clone();
    s.z = w.clone();
    let out = problem.update_w(&mut s).unwrap();
    assert!(!out.stalled);
    assert_abs_diff_eq!(s.w, w, epsilon = 1e-12);
}

#[test]
fn update_w_reaches_least_squares_without_coupling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = InstanceMatrix::new(normal(10, 3, &mut rng)).unwrap();
    let omega = simplex_rows(10, 2, &mut rng);
    let graph = SimilarityGraph::empty(10, 1.0);
    let hyper = Hyperparams { w_inner_steps: 2000, ..Default::default() };
    let problem = Problem::new(&x, &omega, &graph, hyper).unwrap();
    let mut s = zero_state(3, 2, 1e-14);
    for _ in 0..20 {
        problem.update_w(&mut s).unwrap();
    }
    let xv = x.values();
    let normal_eq = xv.tr_mul(xv) * &s.w - xv.tr_mul(omega.values());
    assert!(normal_eq.norm() < 1e-6, "{}", normal_eq.norm());
}

#[test]
fn update_w_never_increases_its_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let x = InstanceMatrix::new(normal(12, 4, &mut rng)).unwrap();
        let omega = simplex_rows(12, 3, &mut rng);
        let graph = ildl::build_knn_similarity(&x, 3, 1.0).unwrap();
        let hyper = Hyperparams { graph_weight: 1.0, ..Default::default() };
        let problem = Problem::new(&x, &omega, &graph, hyper).unwrap();
        let mut s = state(normal(4, 3, &mut rng), normal(4, 3, &mut rng), 0.2 * normal(3, 3, &mut rng), normal(4, 3, &mut rng), normal(4, 3, &mut rng), 0.5);
        let before = problem.w_objective(&s, &s.w);
        let out = problem.update_w(&mut s).unwrap();
        assert!(out.objective_after <= before);
        assert_abs_diff_eq!(out.objective_before, before, epsilon = 1e-9 * before.abs().max(1.0));
        assert_abs_diff_eq!(problem.w_objective(&s, &s.w), out.objective_after, epsilon = 1e-9 * before.abs().max(1.0));
    }
}

#[test]
fn update_p_without_penalty_returns_the_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = InstanceMatrix::new(DMatrix::identity(4, 4)).unwrap();
    let omega = simplex_rows(4, 3, &mut rng);
    let graph = SimilarityGraph::empty(4, 1.0);
    let hyper = Hyperparams { beta: 0.0, ..Default::default() };
    let problem = Problem::new(&x, &omega, &graph, hyper).unwrap();
    let mut s = zero_state(4, 3, 1.0);
    s.w = 0.1 * normal(4, 3, &mut rng);
    s.q = 0.1 * normal(3, 3, &mut rng);
    let expected = omega.values() - &s.w * (&s.q + DMatrix::identity(3, 3));
    problem.update_p(&mut s).unwrap();
    assert_abs_diff_eq!(s.p, expected, epsilon = 1e-10);
}

#[test]
fn update_p_and_q_vanish_on_a_zero_target() {
    let (x, omega, w) = realizable(20, 3, 8);
    let graph = SimilarityGraph::empty(20, 1.0);
    let problem = Problem::new(&x, &omega, &graph, Hyperparams::default()).unwrap();
    let mut s = zero_state(4, 3, 1.0);
    s.w = w;
    problem.update_p(&mut s).unwrap();
    assert!(s.p.norm() < 1e-10, "{}", s.p.norm());
    problem.update_q(&mut s).unwrap();
    assert!(s.q.norm() < 1e-10, "{}", s.q.norm());
}

/// Group soft-thresholding proximal gradient for
/// `1/2 ||T - A M||^2 + lambda ||M||_{2,1}`.
fn group_lasso_oracle(a: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64) -> f64 {
    let step = 1.0 / prox::singular_values(a).unwrap()[0].powi(2);
    let mut m = DMatrix::zeros(a.ncols(), t.ncols());
    for _ in 0..20_000 {
        let g = -a.tr_mul(&(t - a * &m));
        let mut v = &m - step * g;
        for i in 0..v.nrows() {
            let norm = v.row(i).norm();
            let scale = if norm > step * lambda { 1.0 - step * lambda / norm } else { 0.0 };
            v.row_mut(i).scale_mut(scale);
        }
        m = v;
    }
    0.5 * (t - a * &m).norm_squared() + lambda * prox::l21_norm(&m)
}

#[test]
fn repeated_p_steps_approach_the_group_lasso_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = InstanceMatrix::new(normal(15, 5, &mut rng)).unwrap();
    let omega = simplex_rows(15, 3, &mut rng);
    let graph = SimilarityGraph::empty(15, 1.0);
    let hyper = Hyperparams { beta: 0.5, ..Default::default() };
    let problem = Problem::new(&x, &omega, &graph, hyper).unwrap();
    let mut s = zero_state(5, 3, 1.0);
    s.w = 0.05 * normal(5, 3, &mut rng);
    let mut last = problem.p_objective(&s);
    for _ in 0..20 {
        problem.update_p(&mut s).unwrap();
        let now = problem.p_objective(&s);
        assert!(now <= last + 1e-9, "{last} -> {now}");
        last = now;
    }
    let target = omega.values() - x.values() * &s.w;
    let oracle = group_lasso_oracle(x.values(), &target, 0.5);
    assert!(last <= 1.01 * oracle, "{last} vs {oracle}");
}

#[test]
fn repeated_q_steps_approach_the_group_lasso_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = InstanceMatrix::new(normal(15, 5, &mut rng)).unwrap();
    let omega = simplex_rows(15, 3, &mut rng);
    let graph = SimilarityGraph::empty(15, 1.0);
    let hyper = Hyperparams { gamma: 0.3, ..Default::default() };
    let problem = Problem::new(&x, &omega, &graph, hyper).unwrap();
    let mut s = zero_state(5, 3, 1.0);
    s.w = 0.3 * normal(5, 3, &mut rng);
    let mut last = problem.q_objective(&s);
    for _ in 0..20 {
        problem.update_q(&mut s).unwrap();
        let now = problem.q_objective(&s);
        assert!(now <= last + 1e-9, "{last} -> {now}");
        last = now;
    }
    let b = x.values() * &s.w;
    let target = omega.values() - &b;
    let oracle = group_lasso_oracle(&b, &target, 0.3);
    assert!(last <= 1.01 * oracle, "{last} vs {oracle}");
}

#[test]
fn heavy_q_penalty_drives_q_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = InstanceMatrix::new(normal(15, 5, &mut rng)).unwrap();
    let omega = simplex_rows(15, 3, &mut rng);
    let graph = SimilarityGraph::empty(15, 1.0);
    let hyper = Hyperparams { gamma: 1e9, ..Default::default() };
    let problem = Problem::new(&x, &omega, &graph, hyper).unwrap();
    let mut s = zero_state(5, 3, 1.0);
    s.w = normal(5, 3, &mut rng);
    s.q = normal(3, 3, &mut rng);
    for _ in 0..5 {
        problem.update_q(&mut s).unwrap();
    }
    assert!(s.q.norm() < 1e-6, "{}", s.q.norm());
}

#[test]
fn multiplier_update_examples() {
    let hyper = Hyperparams::default();
    let mut s = zero_state(2, 2, 2.0);
    s.z = DMatrix::from_element(2, 2, 1.0);
    admm::update_multipliers(&mut s, &hyper);
    assert_eq!(s.gamma, DMatrix::from_element(2, 2, 2.0));
    assert_abs_diff_eq!(s.mu, 2.2, epsilon = 1e-15);

    let mut s = zero_state(2, 2, hyper.mu_max);
    admm::update_multipliers(&mut s, &hyper);
    assert_eq!(s.mu, hyper.mu_max);
    assert!(s.gamma.iter().all(|&v| v == 0.0));
}

#[test]
fn penalty_sequence_is_geometric_and_capped() {
    let hyper = Hyperparams { mu0: 0.1, mu_max: 1.0, ..Default::default() };
    let mut s = zero_state(1, 2, hyper.mu0);
    for t in 1..40 {
        admm::update_multipliers(&mut s, &hyper);
        let expected = (0.1 * 1.1f64.powi(t)).min(1.0);
        assert!((s.mu - expected).abs() <= 1e-12 * expected, "{t}: {} vs {expected}", s.mu);
    }
    assert_eq!(s.mu, 1.0);
}

#[test]
fn augmented_lagrangian_examples() {
    let x = InstanceMatrix::new(dmatrix![1.0; 2.0]).unwrap();
    let omega = LabelDistributionMatrix::new(dmatrix![1.0, 0.0; 0.0, 1.0]).unwrap();
    let graph = SimilarityGraph::empty(2, 1.0);
    let hyper = Hyperparams { alpha: 0.1, beta: 0.1, gamma: 0.1, ..Default::default() };
    let problem = Problem::new(&x, &omega, &graph, hyper).unwrap();

    let s = zero_state(1, 2, 3.0);
    assert_abs_diff_eq!(problem.augmented_lagrangian(&s).unwrap(), 1.0, epsilon = 1e-15);

    let mut s = zero_state(1, 2, 3.0);
    s.w = dmatrix![0.5, 0.0];
    s.z = s.w.clone();
    s.gamma = dmatrix![5.0, -5.0];
    let r = omega.values() - x.values() * &s.w;
    let expected = 0.5 * r.norm_squared() + 0.1 * 0.5;
    assert_abs_diff_eq!(problem.augmented_lagrangian(&s).unwrap(), expected, epsilon = 1e-12);

    // R = [[0.5, 0], [-1, 1]], ||Z||_* = sqrt(0.5), Z - W = [0, 0.5].
    s.z = dmatrix![0.5, 0.5];
    s.gamma = dmatrix![0.0, 2.0];
    s.mu = 2.0;
    let expected = 1.125 + 0.1 * 0.5f64.sqrt() + 1.0 + 0.25;
    assert_abs_diff_eq!(problem.augmented_lagrangian(&s).unwrap(), expected, epsilon = 1e-12);
}

#[test]
fn fit_recovers_noiseless_realizable_data() {
    let (x, omega, _) = realizable(60, 3, 12);
    let report = fit_auto(&x, &omega, &Hyperparams::default()).unwrap();
    let mean_kl = |a: &LabelDistributionMatrix, b: &LabelDistributionMatrix| {
        (0..a.n()).map(|i| metric(Metric::Kl, &a.row(i), &b.row(i)).unwrap()).sum::<f64>() / a.n() as f64
    };
    assert!(mean_kl(&omega, &report.recovered_d) < 1e-3);
    assert!(mean_kl(&omega, &predict(&report.model, &x).unwrap()) < 1e-2);
    assert_eq!(report.objective_history.len(), report.iterations + 1);
    if report.converged {
        assert!(report.consensus_residual < Hyperparams::default().tol);
    }
}

#[test]
fn zero_iterations_is_not_converged() {
    let (x, omega, _) = realizable(20, 3, 13);
    let hyper = Hyperparams { max_iter: 0, ..Default::default() };
    let report = fit_auto(&x, &omega, &hyper).unwrap();
    assert!(!report.converged);
    assert_eq!(report.iterations, 0);
    assert_eq!(report.objective_history.len(), 1);
}

#[test]
fn recover_d_examples() {
    let (x, omega, w) = realizable(20, 3, 14);
    let zero = Model::new(w.clone(), DMatrix::zeros(4, 3), DMatrix::zeros(3, 3)).unwrap();
    assert_abs_diff_eq!(recover_d(&zero, &x, &omega).unwrap().values(), omega.values(), epsilon = 1e-12);

    // Zero-sum rows keep D + X P on the simplex.
    let p = dmatrix![0.0, 0.0, 0.0; 0.02, -0.01, -0.01; -0.01, 0.02, -0.01; 0.0, 0.01, -0.01];
    let shifted = LabelDistributionMatrix::new(omega.values() + x.values() * &p).unwrap();
    let model = Model::new(w, p, DMatrix::zeros(3, 3)).unwrap();
    assert_abs_diff_eq!(recover_d(&model, &x, &shifted).unwrap().values(), omega.values(), epsilon = 1e-12);
}

#[test]
fn predict_examples() {
    let x = InstanceMatrix::new(dmatrix![1.0, 2.0; -3.0, 0.5]).unwrap();
    let uniform = Model::new(DMatrix::zeros(2, 4), DMatrix::zeros(2, 4), DMatrix::zeros(4, 4)).unwrap();
    assert!(predict(&uniform, &x).unwrap().values().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let single = Model::new(dmatrix![2.0, 0.0], DMatrix::zeros(1, 2), DMatrix::zeros(2, 2)).unwrap();
    let x1 = InstanceMatrix::new(dmatrix![1.0; 0.0]).unwrap();
    let out = predict(&single, &x1).unwrap();
    assert_eq!(out.row(0), vec![1.0, 0.0]);
    assert_eq!(out.row(1), vec![0.5, 0.5]);
    assert!(predict(&single, &x).is_err());
}

#[test]
fn permuting_rows_permutes_the_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = InstanceMatrix::new(normal(40, 4, &mut rng)).unwrap();
    let omega = simplex_rows(40, 3, &mut rng);
    let perm: Vec<usize> = (0..40).rev().collect();
    let a = fit_auto(&x, &omega, &Hyperparams::default()).unwrap();
    let b = fit_auto(&x.select_rows(&perm).unwrap(), &omega.select_rows(&perm).unwrap(), &Hyperparams::default()).unwrap();
    assert_abs_diff_eq!(a.model.w, b.model.w, epsilon = 1e-8);
    assert_abs_diff_eq!(a.model.p, b.model.p, epsilon = 1e-8);
    assert_abs_diff_eq!(a.model.q, b.model.q, epsilon = 1e-8);
    for (i, &j) in perm.iter().enumerate() {
        for c in 0..3 {
            assert_abs_diff_eq!(b.recovered_d.values()[(i, c)], a.recovered_d.values()[(j, c)], epsilon = 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn recovered_rows_lie_on_the_simplex(seed in any::<u64>(), n in 3usize..30, q in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = InstanceMatrix::new(normal(n, 3, &mut rng)).unwrap();
        let omega = simplex_rows(n, q, &mut rng);
        let model = Model::new(normal(3, q, &mut rng), normal(3, q, &mut rng), normal(q, q, &mut rng)).unwrap();
        let d = recover_d(&model, &x, &omega).unwrap();
        for row in d.values().row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
