//! Synthetic interaction logs for tests, fixtures and demos.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{InteractionLog, InteractionRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    /// Interactions per user, all inside the user's block.
    pub per_user: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            users: 200,
            items: 100,
            blocks: 4,
            per_user: 15,
        }
    }
}

/// Block of user `u` (or item `i`) under contiguous equal-size blocks.
pub fn block_of(index: usize, count: usize, blocks: usize) -> usize {
    index * blocks / count
}

/// Users and items split into contiguous blocks; each user interacts with
/// `per_user` distinct random items of its own block, in random order.
/// Handles are `u0..` and `i0..`; every item appears at least once when the
/// blocks are large enough to be covered.
pub fn planted_blocks(spec: BlockSpec, seed: u64) -> Result<InteractionLog> {
    if spec.blocks == 0 || spec.users < spec.blocks || spec.items < spec.blocks {
        return Err(Error::Config("need at least one user and one item per block".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block_items: Vec<Vec<usize>> = (0..spec.blocks)
        .map(|b| (0..spec.items).filter(|&i| block_of(i, spec.items, spec.blocks) == b).collect())
        .collect();
    let smallest = block_items.iter().map(Vec::len).min().unwrap_or(0);
    if spec.per_user == 0 || spec.per_user > smallest {
        return Err(Error::Config(format!(
            "per_user must be in [1, {smallest}] (smallest block size)"
        )));
    }
    let mut records = Vec::with_capacity(spec.users * spec.per_user);
    let mut ts = 0i64;
    for u in 0..spec.users {
        let pool = &block_items[block_of(u, spec.users, spec.blocks)];
        for k in sample(&mut rng, pool.len(), spec.per_user) {
            ts += 1;
            records.push(InteractionRecord {
                user: u,
                item: pool[k],
                timestamp: ts,
            });
        }
    }
    let users = (0..spec.users).map(|u| format!("u{u}")).collect();
    let items = (0..spec.items).map(|i| format!("i{i}")).collect();
    InteractionLog::new(users, items, records)
}

/// Uniformly random log where every user and item appears at least once.
pub fn random_log(users: usize, items: usize, interactions: usize, seed: u64) -> Result<InteractionLog> {
    if interactions < users.max(items) {
        return Err(Error::Config("too few interactions to cover every user and item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(interactions);
    for k in 0..interactions {
        let (user, item) = if k < users.max(items) {
            (k % users, k % items)
        } else {
            (rng.random_range(0..users), rng.random_range(0..items))
        };
        records.push(InteractionRecord {
            user,
            item,
            timestamp: rng.random_range(0..1_000_000),
        });
    }
    InteractionLog::new(
        (0..users).map(|u| format!("u{u}")).collect(),
        (0..items).map(|i| format!("i{i}")).collect(),
        records,
    )
}
