//! Graph Laplacians and spectral clustering.
//!
//! Nodes are embedded by the eigenvectors belonging to the `N` smallest
//! eigenvalues of the Laplacian and the embedding rows are grouped with
//! K-means. Graphs up to [`SpectralOptions::dense_limit`] nodes use a dense
//! symmetric eigendecomposition; larger graphs use Lanczos iteration with full
//! reorthogonalization on the shifted operator `σI − L`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::kmeans::{kmeans_with, KMeansOptions};
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

/// Cluster label per node, each in `1..=clusters`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<usize>,
    clusters: usize,
}

impl ClusterLabels {
    pub fn new(labels: Vec<usize>, clusters: usize) -> Self {
        debug_assert!(labels.iter().all(|&l| (1..=clusters).contains(&l)));
        ClusterLabels { labels, clusters }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// TSV dump `node<TAB>label`.
    pub fn to_tsv(&self, names: &[String]) -> String {
        names
            .iter()
            .zip(&self.labels)
            .map(|(n, l)| format!("{n}\t{l}\n"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// `L = D − A`.
    #[default]
    Unnormalized,
    /// `I − D^{-1/2} A D^{-1/2}` with rows of the embedding scaled to unit length.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub kind: LaplacianKind,
    /// Largest node count handled by the dense eigensolver.
    pub dense_limit: usize,
    pub tolerance: f64,
    /// Lanczos iteration cap as a multiple of the node count.
    pub max_iter_factor: usize,
    pub kmeans: KMeansOptions,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            kind: LaplacianKind::Unnormalized,
            dense_limit: 4096,
            tolerance: 1e-8,
            max_iter_factor: 10,
            kmeans: KMeansOptions::default(),
        }
    }
}

/// Dense symmetric Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix(pub DMatrix<f64>);

impl LaplacianMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// `L = D − A` with weighted degrees on the diagonal.
pub fn laplacian(graph: &WeightedGraph) -> LaplacianMatrix {
    let n = graph.num_nodes();
    let mut l = DMatrix::zeros(n, n);
    for a in 0..n {
        let mut degree = 0.0;
        for &(b, w) in graph.neighbors(a) {
            l[(a, b)] = -(w as f64);
            degree += w as f64;
        }
        l[(a, a)] = degree;
    }
    LaplacianMatrix(l)
}

/// `I − D^{-1/2} A D^{-1/2}`; isolated nodes keep a unit diagonal.
pub fn normalized_laplacian(graph: &WeightedGraph) -> LaplacianMatrix {
    let n = graph.num_nodes();
    let scale = inverse_sqrt_degrees(graph);
    let mut l = DMatrix::identity(n, n);
    for a in 0..n {
        for &(b, w) in graph.neighbors(a) {
            l[(a, b)] = -(w as f64) * scale[a] * scale[b];
        }
    }
    LaplacianMatrix(l)
}

fn inverse_sqrt_degrees(graph: &WeightedGraph) -> Vec<f64> {
    (0..graph.num_nodes())
        .map(|n| match graph.degree(n) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect()
}

/// Eigenvectors for the `k` smallest eigenvalues as columns, ascending.
pub fn spectral_embedding(
    graph: &WeightedGraph,
    k: usize,
    seed: u64,
    options: &SpectralOptions,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = graph.num_nodes();
    if n == 0 {
        return Err(Error::Empty("graph has no nodes".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("need 1 <= k <= {n} eigenvectors, got {k}")));
    }
    if n <= options.dense_limit {
        let lap = match options.kind {
            LaplacianKind::Unnormalized => laplacian(graph),
            LaplacianKind::Normalized => normalized_laplacian(graph),
        };
        Ok(dense_smallest(lap.0, k))
    } else {
        let op = SparseLaplacian::new(graph, options.kind);
        lanczos_smallest(&op, k, seed, options.tolerance, options.max_iter_factor * n)
    }
}

fn dense_smallest(matrix: DMatrix<f64>, k: usize) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    let eig = SymmetricEigen::new(matrix);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, k), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Spectral clustering into `clusters` groups with default options.
pub fn spectral_cluster(graph: &WeightedGraph, clusters: usize, seed: u64) -> Result<ClusterLabels> {
    spectral_cluster_with(graph, clusters, seed, &SpectralOptions::default())
}

pub fn spectral_cluster_with(
    graph: &WeightedGraph,
    clusters: usize,
    seed: u64,
    options: &SpectralOptions,
) -> Result<ClusterLabels> {
    let n = graph.num_nodes();
    if clusters == 0 || clusters > n {
        return Err(Error::Config(format!(
            "spectral clustering needs 1 <= N <= {n}, got {clusters}"
        )));
    }
    if clusters == 1 {
        return Ok(ClusterLabels::new(vec![1; n], 1));
    }
    let (_, mut embedding) = spectral_embedding(graph, clusters, seed, options)?;
    if options.kind == LaplacianKind::Normalized {
        for mut row in embedding.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    Ok(kmeans_with(embedding.view(), clusters, seed, options.kmeans)?.labels)
}

/// Matrix-free Laplacian for the iterative path.
pub(crate) struct SparseLaplacian {
    rows: Vec<Vec<(usize, f64)>>,
    diagonal: Vec<f64>,
}

impl SparseLaplacian {
    pub(crate) fn new(graph: &WeightedGraph, kind: LaplacianKind) -> Self {
        let n = graph.num_nodes();
        let scale = inverse_sqrt_degrees(graph);
        let mut rows = Vec::with_capacity(n);
        let mut diagonal = Vec::with_capacity(n);
        for a in 0..n {
            let row = graph
                .neighbors(a)
                .iter()
                .map(|&(b, w)| match kind {
                    LaplacianKind::Unnormalized => (b, -(w as f64)),
                    LaplacianKind::Normalized => (b, -(w as f64) * scale[a] * scale[b]),
                })
                .collect();
            rows.push(row);
            diagonal.push(match kind {
                LaplacianKind::Unnormalized => graph.degree(a) as f64,
                LaplacianKind::Normalized => 1.0,
            });
        }
        SparseLaplacian { rows, diagonal }
    }

    fn dim(&self) -> usize {
        self.diagonal.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (a, row) in self.rows.iter().enumerate() {
            let mut acc = self.diagonal[a] * x[a];
            for &(b, v) in row {
                acc += v * x[b];
            }
            y[a] = acc;
        }
    }

    /// Gershgorin bound on the largest eigenvalue.
    fn spectral_bound(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.diagonal)
            .map(|(row, d)| d + row.iter().map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, w);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
    }
}

fn random_unit(n: usize, basis: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        orthogonalize(&mut v, basis);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            return Some(v);
        }
    }
    None
}

/// Smallest `k` eigenpairs of a sparse Laplacian by Lanczos on `σI − L`.
pub(crate) fn lanczos_smallest(
    op: &SparseLaplacian,
    k: usize,
    seed: u64,
    tolerance: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = op.dim();
    let shift = op.spectral_bound().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut q = random_unit(n, &basis, &mut rng).ok_or(Error::Eigen {
        iterations: 0,
        residual: f64::NAN,
        converged: 0,
        wanted: k,
    })?;
    let mut w = vec![0.0; n];
    let mut worst = f64::INFINITY;
    let mut converged = 0;
    for iteration in 1..=max_iter.max(1) {
        op.apply(&q, &mut w);
        for (wi, qi) in w.iter_mut().zip(&q) {
            *wi = shift * qi - *wi;
        }
        let alpha = dot(&q, &w);
        basis.push(std::mem::take(&mut q));
        alphas.push(alpha);
        orthogonalize(&mut w, &basis);
        let beta = dot(&w, &w).sqrt();
        let full = basis.len() == n;
        let breakdown = beta <= 1e-10 * shift;

        if basis.len() >= k && (full || breakdown || iteration % 5 == 0) {
            let (ritz, vectors, residuals) = ritz_pairs(&alphas, &betas, if breakdown { 0.0 } else { beta });
            let top: Vec<usize> = (0..k).collect();
            worst = top.iter().map(|&i| residuals[i]).fold(0.0, f64::max);
            converged = top.iter().filter(|&&i| residuals[i] <= tolerance * shift).count();
            if converged == k || full {
                let values = top.iter().map(|&i| shift - ritz[i]).collect();
                let mut out = Array2::zeros((n, k));
                for (c, &i) in top.iter().enumerate() {
                    for (j, qj) in basis.iter().enumerate() {
                        let s = vectors[(j, i)];
                        for r in 0..n {
                            out[(r, c)] += s * qj[r];
                        }
                    }
                }
                return Ok((values, out));
            }
        }
        if breakdown {
            // Invariant subspace found; continue from a fresh orthogonal direction.
            betas.push(0.0);
            match random_unit(n, &basis, &mut rng) {
                Some(v) => q = v,
                None => break,
            }
        } else {
            betas.push(beta);
            q = w.iter().map(|x| x / beta).collect();
        }
    }
    Err(Error::Eigen {
        iterations: max_iter,
        residual: worst,
        converged,
        wanted: k,
    })
}

/// Ritz values (descending), their tridiagonal eigenvectors, and residual norms.
fn ritz_pairs(alphas: &[f64], betas: &[f64], last_beta: f64) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    let residuals = (0..m).map(|c| (last_beta * vectors[(m - 1, c)]).abs()).collect();
    (values, vectors, residuals)
}

/// Rayleigh quotient helper used by tests: `xᵀ L x`.
pub fn quadratic_form(lap: &LaplacianMatrix, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    (v.transpose() * &lap.0 * &v)[(0, 0)]
}
