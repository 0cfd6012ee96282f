//! Feature-space kNN similarity graph and the graph-alignment term that
//! asks the label-space similarity induced by `W` to match it.
//!
//! Both similarities use the Gaussian kernel `exp(-||a - b||^2 / sigma)`.
//! The label-space similarity is only evaluated on the edges of the
//! feature graph, so the term costs `O(nk)` per evaluation.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{IldlError, Result};
use crate::model::InstanceMatrix;

/// Symmetric sparse matrix with zero diagonal in compressed-row layout.
/// Every unordered pair is stored twice, once per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSimilarity {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSimilarity {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (directed) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs stored for row `i`, by increasing column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].binary_search(&j).ok().map(|k| self.values[span.start + k])
    }

    /// Iterates `(i, j, value)` over every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// Same pattern, values recomputed by `f(i, j)`.
    fn with_values(&self, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let values = (0..self.n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let span = self.row_ptr[i]..self.row_ptr[i + 1];
                let f = &f;
                self.col_idx[span].iter().map(move |&j| f(i, j)).collect::<Vec<_>>()
            })
            .collect();
        Self { n: self.n, row_ptr: self.row_ptr.clone(), col_idx: self.col_idx.clone(), values }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.entries() {
            m[(i, j)] = v;
        }
        m
    }
}

/// kNN graph over instances with Gaussian edge weights.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub edges: SparseSimilarity,
    /// Neighbours of each instance after symmetrisation, sorted.
    pub neighbor_lists: Vec<Vec<usize>>,
    pub sigma: f64,
}

impl SimilarityGraph {
    pub fn n(&self) -> usize {
        self.edges.n
    }

    /// Graph on `n` instances with no edges.
    pub fn empty(n: usize, sigma: f64) -> Self {
        Self {
            edges: SparseSimilarity {
                n,
                row_ptr: vec![0; n + 1],
                col_idx: vec![],
                values: vec![],
            },
            neighbor_lists: vec![vec![]; n],
            sigma,
        }
    }
}

fn gaussian(sq_dist: f64, sigma: f64) -> f64 {
    (-sq_dist / sigma).exp()
}

fn sq_dist_rows(m: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..m.ncols()).map(|c| (m[(i, c)] - m[(j, c)]).powi(2)).sum()
}

/// Builds the symmetric kNN graph: `(i, j)` is an edge when `j` is among the
/// `k` nearest neighbours of `i` or vice versa. Distance ties go to the lower
/// index.
pub fn build_knn_similarity(x: &InstanceMatrix, k: usize, sigma: f64) -> Result<SimilarityGraph> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(IldlError::BandwidthNonPositive(sigma));
    }
    let n = x.n();
    if k < 1 || k > n - 1 {
        return Err(IldlError::InvalidHyperparams(format!(
            "k must lie in [1, {}], got {k}",
            n - 1
        )));
    }
    let xv = x.values();
    let directed: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (sq_dist_rows(xv, i, j), j)).collect();
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
            };
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_dist);
                cand.truncate(k);
            }
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut neighbor_lists = vec![Vec::new(); n];
    for (i, nbrs) in directed.iter().enumerate() {
        for &j in nbrs {
            neighbor_lists[i].push(j);
            neighbor_lists[j].push(i);
        }
    }
    for list in &mut neighbor_lists {
        list.sort_unstable();
        list.dedup();
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    for list in &neighbor_lists {
        col_idx.extend_from_slice(list);
        row_ptr.push(col_idx.len());
    }
    let skeleton = SparseSimilarity { n, row_ptr, col_idx, values: vec![] };
    let edges = skeleton.with_values(|i, j| gaussian(sq_dist_rows(xv, i, j), sigma));
    Ok(SimilarityGraph { edges, neighbor_lists, sigma })
}

fn check_dims(w: &DMatrix<f64>, x: &InstanceMatrix, graph: &SimilarityGraph) -> Result<()> {
    if w.nrows() != x.d() {
        return Err(IldlError::DimensionMismatch(format!(
            "W has {} rows but X has {} features",
            w.nrows(),
            x.d()
        )));
    }
    if graph.n() != x.n() {
        return Err(IldlError::DimensionMismatch(format!(
            "graph has {} nodes but X has {} rows",
            graph.n(),
            x.n()
        )));
    }
    Ok(())
}

fn induced_from_embedding(y: &DMatrix<f64>, graph: &SimilarityGraph) -> SparseSimilarity {
    graph.edges.with_values(|i, j| gaussian(sq_dist_rows(y, i, j), graph.sigma))
}

/// Label-space similarity `exp(-||(x_i - x_j) W||^2 / sigma)` on the graph's edges.
pub fn induced_similarity(
    w: &DMatrix<f64>,
    x: &InstanceMatrix,
    graph: &SimilarityGraph,
) -> Result<SparseSimilarity> {
    check_dims(w, x, graph)?;
    Ok(induced_from_embedding(&(x.values() * w), graph))
}

/// `||S - S~||_F^2` over the stored entries (each unordered pair twice).
pub fn graph_term_value(graph: &SimilarityGraph, s_tilde: &SparseSimilarity) -> Result<f64> {
    if !graph.edges.same_pattern(s_tilde) {
        return Err(IldlError::PatternMismatch);
    }
    Ok(graph.edges.values.iter().zip(&s_tilde.values).map(|(s, t)| (s - t).powi(2)).sum())
}

/// Gradient of [`graph_term_value`] with respect to `W`.
pub fn graph_term_grad(
    w: &DMatrix<f64>,
    x: &InstanceMatrix,
    graph: &SimilarityGraph,
) -> Result<DMatrix<f64>> {
    check_dims(w, x, graph)?;
    let y = x.values() * w;
    Ok(grad_from_embedding(x.values(), &y, graph))
}

/// Value and gradient sharing one pass over the edges.
pub(crate) fn graph_term_value_and_grad(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    graph: &SimilarityGraph,
) -> (f64, DMatrix<f64>) {
    let s_tilde = induced_from_embedding(y, graph);
    let value = graph.edges.values.iter().zip(&s_tilde.values).map(|(s, t)| (s - t).powi(2)).sum();
    (value, grad_with_induced(x, y, graph, &s_tilde))
}

pub(crate) fn graph_term_value_for(y: &DMatrix<f64>, graph: &SimilarityGraph) -> f64 {
    let s_tilde = induced_from_embedding(y, graph);
    graph.edges.values.iter().zip(&s_tilde.values).map(|(s, t)| (s - t).powi(2)).sum()
}

fn grad_from_embedding(x: &DMatrix<f64>, y: &DMatrix<f64>, graph: &SimilarityGraph) -> DMatrix<f64> {
    let s_tilde = induced_from_embedding(y, graph);
    grad_with_induced(x, y, graph, &s_tilde)
}

// With c_ij = 2 (S~_ij - S_ij) S~_ij (-2 / sigma), the sum over ordered pairs
// of c_ij (x_i - x_j)^T (y_i - y_j) equals 2 X^T G where
// g_i = sum_j c_ij (y_i - y_j).
fn grad_with_induced(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    graph: &SimilarityGraph,
    s_tilde: &SparseSimilarity,
) -> DMatrix<f64> {
    let (n, q) = y.shape();
    let scale = -4.0 / graph.sigma;
    let mut g = DMatrix::zeros(n, q);
    let s = &graph.edges;
    for i in 0..n {
        for k in s.row_ptr[i]..s.row_ptr[i + 1] {
            let j = s.col_idx[k];
            let st = s_tilde.values[k];
            let c = scale * (st - s.values[k]) * st;
            for l in 0..q {
                g[(i, l)] += c * (y[(i, l)] - y[(j, l)]);
            }
        }
    }
    2.0 * x.transpose() * g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn xmat(rows: &[Vec<f64>]) -> InstanceMatrix {
        InstanceMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_instances_have_unit_weight() {
        let g = build_knn_similarity(&xmat(&[vec![1.0, 2.0], vec![1.0, 2.0]]), 1, 0.5).unwrap();
        assert_eq!(g.edges.get(0, 1), Some(1.0));
        assert_eq!(g.edges.get(1, 0), Some(1.0));
    }

    #[test]
    fn unit_distance_weight() {
        let g = build_knn_similarity(&xmat(&[vec![0.0], vec![1.0]]), 1, 1.0).unwrap();
        assert_abs_diff_eq!(g.edges.get(0, 1).unwrap(), 0.367879441171, epsilon = 1e-12);
    }

    #[test]
    fn collinear_points_form_a_path() {
        let x = xmat(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let g = build_knn_similarity(&x, 1, 1.0).unwrap();
        // Brute force: each point's nearest neighbour (ties to the lower index).
        let pts = [0.0f64, 1.0, 2.0, 3.0];
        let mut expected = std::collections::BTreeSet::new();
        for i in 0..4 {
            let nn = (0..4)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    (pts[i] - pts[a]).abs().total_cmp(&(pts[i] - pts[b]).abs()).then(a.cmp(&b))
                })
                .unwrap();
            expected.insert((i.min(nn), i.max(nn)));
        }
        let got: std::collections::BTreeSet<_> =
            g.edges.entries().filter(|(i, j, _)| i < j).map(|(i, j, _)| (i, j)).collect();
        assert_eq!(got, expected);
        assert_eq!(got, [(0, 1), (1, 2), (2, 3)].into_iter().collect());
    }

    #[test]
    fn graph_is_symmetric_with_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> =
            (0..30).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let k = 4;
        let g = build_knn_similarity(&xmat(&rows), k, 0.7).unwrap();
        for (i, j, v) in g.edges.entries() {
            assert_ne!(i, j);
            assert_eq!(g.edges.get(j, i), Some(v));
            assert!(v > 0.0 && v <= 1.0);
        }
        for list in &g.neighbor_lists {
            assert!(list.len() >= k && list.len() < 30);
        }
    }

    #[test]
    fn rejects_bad_bandwidth_and_k() {
        let x = xmat(&[vec![0.0], vec![1.0]]);
        assert!(matches!(build_knn_similarity(&x, 1, 0.0), Err(IldlError::BandwidthNonPositive(_))));
        assert!(build_knn_similarity(&x, 2, 1.0).is_err());
    }

    #[test]
    fn induced_similarity_examples() {
        let x = xmat(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let g = build_knn_similarity(&x, 2, 1.0).unwrap();
        let zero = induced_similarity(&DMatrix::zeros(2, 3), &x, &g).unwrap();
        assert!(zero.values().iter().all(|&v| v == 1.0));
        let ident = induced_similarity(&DMatrix::identity(2, 2), &x, &g).unwrap();
        for (a, b) in ident.values().iter().zip(g.edges.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        // (x1 - x2) W = [1] with W = [[1],[0]].
        let w = dmatrix![1.0; 0.0];
        let st = induced_similarity(&w, &x, &g).unwrap();
        assert_abs_diff_eq!(st.get(0, 1).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert!(induced_similarity(&DMatrix::zeros(3, 1), &x, &g).is_err());
    }

    #[test]
    fn graph_term_value_examples() {
        let x = xmat(&[vec![0.0], vec![1.0]]);
        let g = build_knn_similarity(&x, 1, 1.0).unwrap();
        assert_eq!(graph_term_value(&g, &g.edges).unwrap(), 0.0);
        // S = exp(-1), S~ = 1 on the single edge, counted in both directions.
        let st = induced_similarity(&dmatrix![0.0], &x, &g).unwrap();
        assert_eq!(st.get(0, 1), Some(1.0));
        let v = graph_term_value(&g, &st).unwrap();
        assert_abs_diff_eq!(v, 2.0 * (1.0 - (-1.0f64).exp()).powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.799153, epsilon = 1e-6);
        let empty = SimilarityGraph::empty(2, 1.0);
        assert_eq!(graph_term_value(&empty, &empty.edges).unwrap(), 0.0);
        assert!(matches!(graph_term_value(&empty, &g.edges), Err(IldlError::PatternMismatch)));
    }

    #[test]
    fn gradient_vanishes_at_stationary_points() {
        let x = xmat(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        let g = build_knn_similarity(&x, 2, 1.0).unwrap();
        assert_eq!(graph_term_grad(&DMatrix::zeros(2, 3), &x, &g).unwrap(), DMatrix::zeros(2, 3));
        // W = I reproduces S exactly.
        let grad = graph_term_grad(&DMatrix::identity(2, 2), &x, &g).unwrap();
        assert!(grad.norm() < 1e-15);
    }

    fn finite_difference(w: &DMatrix<f64>, x: &InstanceMatrix, g: &SimilarityGraph, h: f64) -> DMatrix<f64> {
        let f = |w: &DMatrix<f64>| graph_term_value(g, &induced_similarity(w, x, g).unwrap()).unwrap();
        DMatrix::from_fn(w.nrows(), w.ncols(), |a, b| {
            let mut plus = w.clone();
            plus[(a, b)] += h;
            let mut minus = w.clone();
            minus[(a, b)] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> =
                (0..6).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let x = xmat(&rows);
            let g = build_knn_similarity(&x, 2, 0.7).unwrap();
            let w = DMatrix::from_fn(3, 2, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
            let analytic = graph_term_grad(&w, &x, &g).unwrap();
            let numeric = finite_difference(&w, &x, &g, 1e-5);
            let rel = (&analytic - &numeric).norm() / numeric.norm().max(1e-12);
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn knn_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> =
            (0..20).map(|_| (0..2).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let perm: Vec<usize> = (0..20).rev().collect();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let g = build_knn_similarity(&xmat(&rows), 3, 1.0).unwrap();
        let gp = build_knn_similarity(&xmat(&permuted), 3, 1.0).unwrap();
        for (a, b, v) in gp.edges.entries() {
            assert_eq!(g.edges.get(perm[a], perm[b]), Some(v));
        }
        assert_eq!(g.edges.nnz(), gp.edges.nnz());
    }
}
