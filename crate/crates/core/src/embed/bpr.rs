//! BPR matrix factorization over the user-item interactions.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NodeEmbeddings;
use crate::corpus::SplitDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MfModel {
    /// `m × E`.
    pub users: Array2<f64>,
    /// `n × E`.
    pub items: Array2<f64>,
}

impl MfModel {
    pub fn init(users: usize, items: usize, dim: usize, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("positive std");
        MfModel {
            users: Array2::from_shape_fn((users, dim), |_| normal.sample(&mut rng)),
            items: Array2::from_shape_fn((items, dim), |_| normal.sample(&mut rng)),
        }
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        self.users.row(user).dot(&self.items.row(item))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BprMode {
    /// `−Σ log σ(u·i⁺ − u·i⁻)` over every sampled negative.
    #[default]
    Standard,
    /// Each negative's term weighted by a softmax of `u·i⁻` over the drawn pool.
    SoftmaxWeighted,
}

/// One positive pair with its sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BprSample {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss of a single sample and its derivatives with respect to the
/// positive score and each negative score.
fn score_terms(model: &MfModel, s: &BprSample, mode: BprMode) -> (f64, f64, Vec<f64>) {
    let pos = model.score(s.user, s.positive);
    let neg: Vec<f64> = s.negatives.iter().map(|&j| model.score(s.user, j)).collect();
    let diffs: Vec<f64> = neg.iter().map(|x| pos - x).collect();
    match mode {
        BprMode::Standard => {
            let loss = diffs.iter().map(|&d| -log_sigmoid(d)).sum();
            let g: Vec<f64> = diffs.iter().map(|&d| 1.0 - sigmoid(d)).collect();
            (loss, -g.iter().sum::<f64>(), g)
        }
        BprMode::SoftmaxWeighted => {
            let w = softmax(&neg);
            let ell: Vec<f64> = diffs.iter().map(|&d| log_sigmoid(d)).collect();
            let mean: f64 = w.iter().zip(&ell).map(|(a, b)| a * b).sum();
            let loss = -mean;
            let d_pos = -w
                .iter()
                .zip(&diffs)
                .map(|(wj, &d)| wj * (1.0 - sigmoid(d)))
                .sum::<f64>();
            let d_neg = (0..w.len())
                .map(|j| w[j] * (1.0 - sigmoid(diffs[j])) - w[j] * (ell[j] - mean))
                .collect();
            (loss, d_pos, d_neg)
        }
    }
}

pub fn sample_loss(model: &MfModel, sample: &BprSample, mode: BprMode) -> f64 {
    score_terms(model, sample, mode).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfGradients {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

/// Summed loss over `samples` and the exact gradient of that sum.
pub fn bpr_gradients(model: &MfModel, samples: &[BprSample], mode: BprMode) -> (f64, MfGradients) {
    let mut grads = MfGradients {
        users: Array2::zeros(model.users.dim()),
        items: Array2::zeros(model.items.dim()),
    };
    let mut total = 0.0;
    for s in samples {
        let (loss, d_pos, d_neg) = score_terms(model, s, mode);
        total += loss;
        let u = model.users.row(s.user).to_owned();
        let mut du: Array1<f64> = &model.items.row(s.positive) * d_pos;
        grads.items.row_mut(s.positive).scaled_add(d_pos, &u);
        for (&j, &g) in s.negatives.iter().zip(&d_neg) {
            du.scaled_add(g, &model.items.row(j));
            grads.items.row_mut(j).scaled_add(g, &u);
        }
        grads.users.row_mut(s.user).scaled_add(1.0, &du);
    }
    (total, grads)
}

pub fn bpr_loss(model: &MfModel, samples: &[BprSample], mode: BprMode) -> f64 {
    samples.iter().map(|s| sample_loss(model, s, mode)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BprConfig {
    pub embedding_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub negatives_per_pos: usize,
    pub mode: BprMode,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            embedding_size: 64,
            lr: 0.05,
            epochs: 50,
            negatives_per_pos: 1,
            mode: BprMode::Standard,
            init_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BprTraining {
    pub user_embeddings: NodeEmbeddings,
    pub item_embeddings: NodeEmbeddings,
    /// Mean sample loss per epoch.
    pub losses: Vec<f64>,
    pub model: MfModel,
}

/// Uniform draw from items the user never interacted with; `None` when
/// the user touched the whole catalog.
fn draw_negative(seen: &BTreeSet<usize>, num_items: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
    let unseen = num_items - seen.len();
    if unseen == 0 {
        return None;
    }
    // Pick the k-th unseen item directly; no rejection loop needed.
    let mut k = rng.random_range(0..unseen);
    let mut candidate = 0;
    for &s in seen {
        if s - candidate > k {
            break;
        }
        k -= s - candidate;
        candidate = s + 1;
    }
    Some(candidate + k)
}

/// Stochastic gradient descent over every training interaction per epoch.
pub fn mf_bpr_train(train: &SplitDataset, config: &BprConfig) -> Result<BprTraining> {
    let m = train.num_users();
    let n = train.num_items;
    let mut model = MfModel::init(m, n, config.embedding_size, config.init_std, config.seed);
    let seen: Vec<BTreeSet<usize>> = train.train.iter().map(|h| h.iter().copied().collect()).collect();
    let mut pairs: Vec<(usize, usize)> = train
        .train
        .iter()
        .enumerate()
        .flat_map(|(u, h)| h.iter().map(move |&i| (u, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_b9e1);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (step, &(user, positive)) in pairs.iter().enumerate() {
            let negatives: Vec<usize> = (0..config.negatives_per_pos.max(1))
                .filter_map(|_| draw_negative(&seen[user], n, &mut rng))
                .collect();
            if negatives.is_empty() {
                continue;
            }
            let sample = BprSample {
                user,
                positive,
                negatives,
            };
            let (loss, d_pos, d_neg) = score_terms(&model, &sample, config.mode);
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch, step, loss });
            }
            total += loss;
            count += 1;
            let u = model.users.row(user).to_owned();
            let mut du: Array1<f64> = &model.items.row(positive) * d_pos;
            for (&j, &g) in sample.negatives.iter().zip(&d_neg) {
                du.scaled_add(g, &model.items.row(j));
            }
            model.items.row_mut(positive).scaled_add(-config.lr * d_pos, &u);
            for (&j, &g) in sample.negatives.iter().zip(&d_neg) {
                model.items.row_mut(j).scaled_add(-config.lr * g, &u);
            }
            model.users.row_mut(user).scaled_add(-config.lr, &du);
        }
        losses.push(if count > 0 { total / count as f64 } else { 0.0 });
    }
    Ok(BprTraining {
        user_embeddings: NodeEmbeddings(model.users.clone()),
        item_embeddings: NodeEmbeddings(model.items.clone()),
        losses,
        model,
    })
}
