//! Two-layer graph convolutional network trained on cluster labels.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NodeEmbeddings;
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::spectral::ClusterLabels;

/// Sparse `D̃^{-1/2} (A + I) D̃^{-1/2}`, symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn new(graph: &WeightedGraph) -> Self {
        let n = graph.num_nodes();
        let scale: Vec<f64> = (0..n)
            .map(|v| 1.0 / (graph.degree(v) as f64 + 1.0).sqrt())
            .collect();
        let rows = (0..n)
            .map(|a| {
                let mut row: Vec<(usize, f64)> = graph
                    .neighbors(a)
                    .iter()
                    .map(|&(b, w)| (b, w as f64 * scale[a] * scale[b]))
                    .collect();
                row.push((a, scale[a] * scale[a]));
                row.sort_by_key(|&(b, _)| b);
                row
            })
            .collect();
        NormalizedAdjacency { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// `Â · x`.
    pub fn propagate(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), x.ncols()));
        for (a, row) in self.rows.iter().enumerate() {
            let mut target = out.row_mut(a);
            for &(b, v) in row {
                target.scaled_add(v, &x.row(b));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.rows.len();
        let mut out = Array2::zeros((n, n));
        for (a, row) in self.rows.iter().enumerate() {
            for &(b, v) in row {
                out[(a, b)] = v;
            }
        }
        out
    }
}

/// Learnable node features plus the two layer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    /// `|V| × E` input feature table.
    pub features: Array2<f64>,
    /// `E × E`.
    pub w1: Array2<f64>,
    /// `E × C`.
    pub w2: Array2<f64>,
}

impl GcnModel {
    /// Standard-normal features and Glorot-uniform weights.
    pub fn init(nodes: usize, embedding_size: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = Array2::from_shape_fn((nodes, embedding_size), |_| StandardNormal.sample(&mut rng));
        let mut glorot = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
        };
        let w1 = glorot(embedding_size, embedding_size);
        let w2 = glorot(embedding_size, classes);
        GcnModel { features, w1, w2 }
    }

    pub fn classes(&self) -> usize {
        self.w2.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct GcnOutput {
    /// `relu(Â F W₁)`.
    pub hidden: NodeEmbeddings,
    /// `Â · hidden · W₂`.
    pub logits: Array2<f64>,
}

struct Trace {
    h0: Array2<f64>,
    z1: Array2<f64>,
    hidden: Array2<f64>,
    p: Array2<f64>,
    logits: Array2<f64>,
}

fn forward_trace(model: &GcnModel, adj: &NormalizedAdjacency) -> Trace {
    let h0 = adj.propagate(&model.features);
    let z1 = h0.dot(&model.w1);
    let hidden = z1.mapv(|v| v.max(0.0));
    let p = adj.propagate(&hidden);
    let logits = p.dot(&model.w2);
    Trace {
        h0,
        z1,
        hidden,
        p,
        logits,
    }
}

pub fn gcn_forward(model: &GcnModel, adj: &NormalizedAdjacency) -> Result<GcnOutput> {
    if model.features.nrows() != adj.dim() || model.w1.nrows() != model.features.ncols() {
        return Err(Error::Shape(format!(
            "features {:?}, w1 {:?}, adjacency {}",
            model.features.dim(),
            model.w1.dim(),
            adj.dim()
        )));
    }
    let t = forward_trace(model, adj);
    Ok(GcnOutput {
        hidden: NodeEmbeddings(t.hidden),
        logits: t.logits,
    })
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients {
    pub features: Array2<f64>,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

/// Cross-entropy summed over nodes, `−Σ_v log ŷ_v[label_v]`.
pub fn gcn_loss(model: &GcnModel, adj: &NormalizedAdjacency, labels: &ClusterLabels) -> f64 {
    let t = forward_trace(model, adj);
    cross_entropy(&softmax_rows(&t.logits), labels)
}

fn cross_entropy(probs: &Array2<f64>, labels: &ClusterLabels) -> f64 {
    labels
        .labels()
        .iter()
        .enumerate()
        .map(|(v, &l)| -probs[(v, l - 1)].ln())
        .sum()
}

/// Loss and exact gradients by backpropagation. `Â` is symmetric, so its
/// transpose in the backward pass is itself.
pub fn gcn_gradients(
    model: &GcnModel,
    adj: &NormalizedAdjacency,
    labels: &ClusterLabels,
) -> (f64, GcnGradients) {
    let t = forward_trace(model, adj);
    let mut d_logits = softmax_rows(&t.logits);
    let loss = cross_entropy(&d_logits, labels);
    for (v, &l) in labels.labels().iter().enumerate() {
        d_logits[(v, l - 1)] -= 1.0;
    }
    let w2 = t.p.t().dot(&d_logits);
    let d_p = d_logits.dot(&model.w2.t());
    let mut d_z1 = adj.propagate(&d_p);
    ndarray::Zip::from(&mut d_z1)
        .and(&t.z1)
        .for_each(|g, &z| if z <= 0.0 { *g = 0.0 });
    let w1 = t.h0.t().dot(&d_z1);
    let d_h0 = d_z1.dot(&model.w1.t());
    let features = adj.propagate(&d_h0);
    (loss, GcnGradients { features, w1, w2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnConfig {
    pub embedding_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            embedding_size: 64,
            lr: 0.01,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GcnTraining {
    pub embeddings: NodeEmbeddings,
    /// Loss before each update, then the final loss.
    pub losses: Vec<f64>,
    pub model: GcnModel,
}

/// Full-batch gradient descent on the summed cross-entropy; returns the
/// hidden-layer output of the trained network as node embeddings.
pub fn gcn_train(graph: &WeightedGraph, labels: &ClusterLabels, config: &GcnConfig) -> Result<GcnTraining> {
    if labels.len() != graph.num_nodes() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            graph.num_nodes()
        )));
    }
    let adj = NormalizedAdjacency::new(graph);
    let mut model = GcnModel::init(graph.num_nodes(), config.embedding_size, labels.clusters(), config.seed);
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let (loss, grads) = gcn_gradients(&model, &adj, labels);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                step: epoch,
                loss,
            });
        }
        losses.push(loss);
        model.features.scaled_add(-config.lr, &grads.features);
        model.w1.scaled_add(-config.lr, &grads.w1);
        model.w2.scaled_add(-config.lr, &grads.w2);
    }
    let final_loss = gcn_loss(&model, &adj, labels);
    if !final_loss.is_finite() {
        return Err(Error::NonFinite {
            epoch: config.epochs,
            step: config.epochs,
            loss: final_loss,
        });
    }
    losses.push(final_loss);
    let embeddings = gcn_forward(&model, &adj)?.hidden;
    Ok(GcnTraining {
        embeddings,
        losses,
        model,
    })
}
