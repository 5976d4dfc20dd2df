use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transformer::Seq2SeqModel;
use super::vocab::{target_tokens, TokenId};
use crate::corpus::SplitDataset;
use crate::error::{Error, Result};
use crate::indexer::IndexDictionary;
use crate::tensor::{Grads, Tape};

/// `(prompt, target)`; the target ends with EOS.
pub type TrainingPair = (Vec<TokenId>, Vec<TokenId>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Examples per gradient task. Fixed so results do not depend on the thread count.
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.5,
            batch: 64,
            epochs: 8,
            seed: 0,
            optimizer: Optimizer::Sgd,
            chunk: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-token training loss of each epoch.
    pub losses: Vec<f64>,
    pub steps: usize,
    pub examples: usize,
}

impl TrainReport {
    /// `epoch,loss` CSV with 1-based epochs.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{l:?}\n", e + 1));
        }
        out
    }
}

/// One pair per training interaction: the user's prompt and the item ID.
pub fn training_pairs(
    split: &SplitDataset,
    users: &IndexDictionary,
    items: &IndexDictionary,
    model: &Seq2SeqModel,
    template: &str,
) -> Vec<TrainingPair> {
    let mut pairs = Vec::new();
    for (u, history) in split.train.iter().enumerate() {
        if history.is_empty() {
            continue;
        }
        let prompt = model.prompt(template, &users.ids[u]);
        for &i in history {
            pairs.push((prompt.clone(), target_tokens(&items.ids[i])));
        }
    }
    pairs
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply(model: &mut Seq2SeqModel, grads: &Grads, lr: f64, adam: &mut Option<Adam>) {
    let params = model.params_mut();
    match adam {
        None => {
            for (i, g) in grads.0.iter().enumerate() {
                if let Some(g) = g {
                    params.get_mut(i).scaled_add(-lr, g);
                }
            }
        }
        Some(state) => {
            state.t += 1;
            let c1 = 1.0 - BETA1.powi(state.t);
            let c2 = 1.0 - BETA2.powi(state.t);
            for (i, g) in grads.0.iter().enumerate() {
                let Some(g) = g else { continue };
                let p = params.get_mut(i);
                let m = &mut state.m[i];
                let v = &mut state.v[i];
                ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                });
            }
        }
    }
}

/// Teacher-forced training with mean per-token cross-entropy per batch.
///
/// Batches are split into fixed chunks whose gradients are computed in
/// parallel and summed in order, so the loss curve is identical for any
/// thread count.
pub fn train(model: &mut Seq2SeqModel, pairs: &[TrainingPair], config: &TrainConfig) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no training pairs".into()));
    }
    if config.batch == 0 || config.chunk == 0 {
        return Err(Error::Config("batch and chunk sizes must be positive".into()));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", config.lr)));
    }
    let mut adam = (config.optimizer == Optimizer::Adam).then(|| Adam {
        m: model.params().values().iter().map(|v| Array2::zeros(v.dim())).collect(),
        v: model.params().values().iter().map(|v| Array2::zeros(v.dim())).collect(),
        t: 0,
    });
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for (b, batch) in order.chunks(config.batch).enumerate() {
            let denom: usize = batch.iter().map(|&i| pairs[i].1.len()).sum();
            let base = (epoch * pairs.len() + b * config.batch) as u64;
            let frozen = &*model;
            let parts: Vec<Result<(f64, Grads)>> = batch
                .par_chunks(config.chunk)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut tape = Tape::new(frozen.params());
                    let mut nodes = Vec::with_capacity(chunk.len());
                    for (k, &i) in chunk.iter().enumerate() {
                        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd20f_0a7e);
                        rng.set_stream(base + (c * config.chunk + k) as u64);
                        let (p, t) = &pairs[i];
                        nodes.push(frozen.example_loss(&mut tape, p, t, denom as f64, &mut Some(&mut rng))?);
                    }
                    let total = tape.sum(&nodes);
                    Ok((tape.scalar(total), tape.backward(total)))
                })
                .collect();
            let mut loss = 0.0;
            let mut grads = Grads::zeros_like(model.params());
            for part in parts {
                let (l, g) = part?;
                loss += l;
                grads.add_assign(&g);
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch, step: steps, loss });
            }
            apply(model, &grads, config.lr, &mut adam);
            steps += 1;
            epoch_loss += loss * denom as f64;
            epoch_tokens += denom;
        }
        losses.push(epoch_loss / epoch_tokens as f64);
    }
    if !model.params().is_finite() {
        return Err(Error::NonFinite {
            epoch: config.epochs,
            step: steps,
            loss: f64::NAN,
        });
    }
    Ok(TrainReport {
        losses,
        steps,
        examples: pairs.len(),
    })
}
