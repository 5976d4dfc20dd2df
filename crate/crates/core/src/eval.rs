//! Leave-one-out ranking metrics over the whole catalogue.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SplitDataset;
use crate::decode::{self, BeamConfig, DecodeStats, IdTrie, Recommendation, SequenceScorer};
use crate::error::{Error, Result};
use crate::model::TokenId;

/// 1 if `truth` is among the first `k` entries.
pub fn hit_ratio_at_k(recs: &[usize], truth: usize, k: usize) -> f64 {
    if recs.iter().take(k).any(|&r| r == truth) {
        1.0
    } else {
        0.0
    }
}

/// `1 / log2(rank + 1)` for a hit at 1-based `rank ≤ k`, else 0.
pub fn ndcg_at_k(recs: &[usize], truth: usize, k: usize) -> f64 {
    match recs.iter().take(k).position(|&r| r == truth) {
        Some(pos) => 1.0 / ((pos + 2) as f64).log2(),
        None => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub beam: usize,
    pub ks: Vec<usize>,
    pub filter_train: bool,
    pub length_penalty: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beam: 20,
            ks: vec![5, 10],
            filter_train: true,
            length_penalty: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub users_evaluated: usize,
    pub filter_train: bool,
    pub beam: usize,
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "users_evaluated={}", self.users_evaluated);
        let _ = writeln!(out, "filter_train={}", self.filter_train);
        let _ = writeln!(out, "beam={}", self.beam);
        for (k, v) in &self.hr {
            let _ = writeln!(out, "hr@{k}={v:.6}");
        }
        for (k, v) in &self.ndcg {
            let _ = writeln!(out, "ndcg@{k}={v:.6}");
        }
        out
    }

    /// NDCG ≤ HR at each cutoff and both non-decreasing in K.
    pub fn is_consistent(&self) -> bool {
        let pairs_ok = self.hr.iter().all(|(k, h)| self.ndcg.get(k).is_some_and(|n| *n <= *h + 1e-12));
        let mono = |m: &BTreeMap<usize, f64>| m.values().collect::<Vec<_>>().windows(2).all(|w| w[0] <= w[1]);
        pairs_ok && mono(&self.hr) && mono(&self.ndcg)
    }
}

/// Run-level bookkeeping kept apart from the metrics so those stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub epochs: usize,
    pub param_count: u64,
    pub param_count_t5: u64,
    pub wall_time_secs: f64,
}

impl EfficiencyReport {
    pub fn to_text(&self) -> String {
        format!(
            "epochs={}\nparam_count={}\nparam_count_t5={}\nwall_time_secs={:.3}\n",
            self.epochs, self.param_count, self.param_count_t5, self.wall_time_secs
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// `(user, ranked recommendations)` for every evaluated user, ascending user order.
    pub recommendations: Vec<(usize, Vec<Recommendation>)>,
    pub stats: DecodeStats,
}

/// Decode every user with a test item and average the metrics.
///
/// `prompts[u]` is user `u`'s encoder input. Users are decoded in parallel;
/// the reduction runs in user order.
pub fn evaluate<S>(
    scorer: &S,
    prompts: &[Vec<TokenId>],
    trie: &IdTrie,
    split: &SplitDataset,
    config: &EvalConfig,
) -> Result<Evaluation>
where
    S: SequenceScorer + Sync,
    S::State: Send,
{
    if config.ks.is_empty() || config.ks.contains(&0) {
        return Err(Error::Config("evaluation cutoffs must be positive".into()));
    }
    if prompts.len() != split.num_users() {
        return Err(Error::Shape(format!(
            "{} prompts for {} users",
            prompts.len(),
            split.num_users()
        )));
    }
    let topk = config.max_k();
    let beam = BeamConfig {
        beam: config.beam.max(topk),
        topk,
        length_penalty: config.length_penalty,
    };
    let users: Vec<usize> = split.test_users().map(|(u, _)| u).collect();
    let per_user: Vec<Result<(usize, Vec<Recommendation>, DecodeStats)>> = users
        .par_iter()
        .map(|&u| {
            let state = scorer.prepare(&prompts[u])?;
            let mut stats = DecodeStats::default();
            let exclude: HashSet<usize> = if config.filter_train {
                split.train[u].iter().copied().collect()
            } else {
                HashSet::new()
            };
            let recs = decode::recommend(scorer, &state, trie, &beam, &exclude, &mut stats)?;
            Ok((u, recs, stats))
        })
        .collect();

    let mut hr: BTreeMap<usize, f64> = config.ks.iter().map(|&k| (k, 0.0)).collect();
    let mut ndcg = hr.clone();
    let mut stats = DecodeStats::default();
    let mut recommendations = Vec::with_capacity(users.len());
    for res in per_user {
        let (u, recs, s) = res?;
        let truth = split.test[u].expect("test users have a test item");
        let ranked: Vec<usize> = recs.iter().map(|r| r.item).collect();
        for &k in &config.ks {
            *hr.get_mut(&k).expect("initialized") += hit_ratio_at_k(&ranked, truth, k);
            *ndcg.get_mut(&k).expect("initialized") += ndcg_at_k(&ranked, truth, k);
        }
        stats.merge(&s);
        recommendations.push((u, recs));
    }
    let n = users.len();
    if n > 0 {
        for v in hr.values_mut().chain(ndcg.values_mut()) {
            *v /= n as f64;
        }
    }
    Ok(Evaluation {
        report: MetricsReport {
            hr,
            ndcg,
            users_evaluated: n,
            filter_train: config.filter_train,
            beam: beam.beam,
        },
        recommendations,
        stats,
    })
}
