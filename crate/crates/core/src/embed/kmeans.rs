//! Lloyd's K-means with k-means++ seeding and best-of-restarts selection.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::ClusterLabels;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: ClusterLabels,
    /// One row per cluster, row `c` belongs to label `c + 1`.
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

/// Cluster the rows of `x` into `clusters` groups.
pub fn kmeans(x: ArrayView2<'_, f64>, clusters: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(x, clusters, seed, KMeansOptions::default())
}

pub fn kmeans_with(
    x: ArrayView2<'_, f64>,
    clusters: usize,
    seed: u64,
    options: KMeansOptions,
) -> Result<KMeansResult> {
    let rows = x.nrows();
    if rows == 0 {
        return Err(Error::Empty("k-means input has no rows".into()));
    }
    if clusters == 0 || clusters > rows {
        return Err(Error::Config(format!(
            "k-means needs 1 <= clusters <= rows, got {clusters} clusters for {rows} rows"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("k-means input contains non-finite values".into()));
    }
    let runs: Vec<Run> = (0..options.restarts.max(1))
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(restart as u64);
            lloyd(x, clusters, &mut rng, options.max_iter)
        })
        .collect();
    // Earliest restart wins ties so the choice is independent of scheduling.
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("at least one restart");

    let (labels, order) = canonical_labels(&best.assignment, clusters);
    let mut centroids = Array2::zeros((clusters, x.ncols()));
    for (new, &old) in order.iter().enumerate() {
        centroids.row_mut(new).assign(&best.centroids.row(old));
    }
    Ok(KMeansResult {
        labels: ClusterLabels::new(labels, clusters),
        centroids,
        inertia: best.inertia,
    })
}

/// Relabel clusters 1.. in order of first appearance; unused clusters go last.
fn canonical_labels(assignment: &[usize], clusters: usize) -> (Vec<usize>, Vec<usize>) {
    let mut remap = vec![usize::MAX; clusters];
    let mut order = Vec::with_capacity(clusters);
    for &a in assignment {
        if remap[a] == usize::MAX {
            remap[a] = order.len();
            order.push(a);
        }
    }
    for (c, slot) in remap.iter_mut().enumerate() {
        if *slot == usize::MAX {
            *slot = order.len();
            order.push(c);
        }
    }
    (assignment.iter().map(|&a| remap[a] + 1).collect(), order)
}

pub(crate) struct Run {
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    #[cfg_attr(not(test), allow(dead_code))]
    pub trace: Vec<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(x: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let rows = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..rows);
    centroids.row_mut(0).assign(&x.row(first));
    let mut nearest: Vec<f64> = (0..rows).map(|r| sq_dist(x.row(r), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = rows - 1;
            for (r, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = r;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // Fewer distinct points than clusters; duplicate centroids are allowed.
            rng.random_range(0..rows)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (r, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(r), x.row(pick)));
        }
    }
    centroids
}

fn assign(x: ArrayView2<'_, f64>, centroids: &Array2<f64>, out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (r, slot) in out.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..centroids.nrows() {
            let d = sq_dist(x.row(r), centroids.row(c));
            if d < best.0 {
                best = (d, c);
            }
        }
        *slot = best.1;
        inertia += best.0;
    }
    inertia
}

pub(crate) fn lloyd(x: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> Run {
    let rows = x.nrows();
    let mut centroids = plus_plus_init(x, k, rng);
    let mut assignment = vec![usize::MAX; rows];
    let mut next = vec![0; rows];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let inertia = assign(x, &centroids, &mut next);
        trace.push(inertia);
        if next == assignment {
            break;
        }
        std::mem::swap(&mut assignment, &mut next);
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (r, &c) in assignment.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &x.row(r));
            counts[c] += 1;
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
    }
    let inertia = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| sq_dist(x.row(r), centroids.row(c)))
        .sum();
    Run {
        assignment,
        centroids,
        inertia,
        trace,
    }
}
