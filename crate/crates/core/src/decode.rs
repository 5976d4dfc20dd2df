//! Prefix tree over item IDs and beam search restricted to it, so every
//! generated sequence is a real catalogue item.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::indexer::{render_id, IndexDictionary, Token};
use crate::model::vocab::{number_token, TokenId};
use crate::model::{transformer::Encoded, Seq2SeqModel};

pub type Cursor = usize;

pub const ROOT: Cursor = 0;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TrieNode {
    children: BTreeMap<Token, Cursor>,
    item: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdTrie {
    nodes: Vec<TrieNode>,
    ids: Vec<Vec<Token>>,
}

impl IdTrie {
    pub fn build(index: &IndexDictionary) -> Result<Self> {
        Self::from_ids(&index.ids, &index.handles)
    }

    /// `names[i]` labels item `i` in error messages.
    pub fn from_ids(ids: &[Vec<Token>], names: &[String]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyTrie);
        }
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
        let mut nodes = vec![TrieNode::default()];
        for (item, seq) in ids.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::Empty(format!("item `{}` has an empty id", name(item))));
            }
            let mut cur = ROOT;
            for &tok in seq {
                if let Some(other) = nodes[cur].item {
                    return Err(Error::PrefixConflict {
                        shorter: name(other),
                        longer: name(item),
                    });
                }
                cur = match nodes[cur].children.get(&tok) {
                    Some(&next) => next,
                    None => {
                        nodes.push(TrieNode::default());
                        let next = nodes.len() - 1;
                        nodes[cur].children.insert(tok, next);
                        next
                    }
                };
            }
            if let Some(other) = nodes[cur].item {
                return Err(Error::DuplicateId {
                    id: render_id(seq).unwrap_or_else(|_| format!("{seq:?}")),
                    first: name(other),
                    second: name(item),
                });
            }
            if !nodes[cur].children.is_empty() {
                let mut below = cur;
                while nodes[below].item.is_none() {
                    below = *nodes[below].children.values().next().expect("inner nodes have children");
                }
                return Err(Error::PrefixConflict {
                    shorter: name(item),
                    longer: name(nodes[below].item.expect("loop stops at a terminal")),
                });
            }
            nodes[cur].item = Some(item);
        }
        Ok(IdTrie {
            nodes,
            ids: ids.to_vec(),
        })
    }

    pub fn num_items(&self) -> usize {
        self.ids.len()
    }

    pub fn nodes_below_root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn num_terminals(&self) -> usize {
        self.nodes.iter().filter(|n| n.item.is_some()).count()
    }

    /// Child tokens of `cursor` in ascending order.
    pub fn allowed_tokens(&self, cursor: Cursor) -> Vec<Token> {
        self.nodes[cursor].children.keys().copied().collect()
    }

    pub fn child(&self, cursor: Cursor, token: Token) -> Option<Cursor> {
        self.nodes[cursor].children.get(&token).copied()
    }

    pub fn item(&self, cursor: Cursor) -> Option<usize> {
        self.nodes[cursor].item
    }

    pub fn walk(&self, seq: &[Token]) -> Option<Cursor> {
        seq.iter().try_fold(ROOT, |cur, &t| self.child(cur, t))
    }

    pub fn id(&self, item: usize) -> &[Token] {
        &self.ids[item]
    }

    /// Largest number of children of any node.
    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn max_depth(&self) -> usize {
        self.ids.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Anything that can score next ID tokens after a prefix.
pub trait SequenceScorer {
    type State;

    fn prepare(&self, prompt: &[TokenId]) -> Result<Self::State>;

    /// Unnormalized logits of `candidates` as the token after `prefix`.
    fn logits(&self, state: &Self::State, prefix: &[Token], candidates: &[Token]) -> Result<Vec<f64>>;
}

impl SequenceScorer for Seq2SeqModel {
    type State = Encoded;

    fn prepare(&self, prompt: &[TokenId]) -> Result<Encoded> {
        self.encode(prompt)
    }

    fn logits(&self, state: &Encoded, prefix: &[Token], candidates: &[Token]) -> Result<Vec<f64>> {
        let prefix: Vec<TokenId> = prefix.iter().map(|&t| number_token(t)).collect();
        let hidden = self.next_hidden(state, &prefix)?;
        let cands: Vec<TokenId> = candidates.iter().map(|&t| number_token(t)).collect();
        Ok(self.candidate_logits(&hidden, &cands))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub topk: usize,
    /// Exponent `α` in `logprob / len^α` for the final ranking; 0 disables it.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam: 20,
            topk: 10,
            length_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub item: usize,
    pub logprob: f64,
}

/// Work counters for one or more searches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    pub searches: usize,
    pub steps: usize,
    /// Beam expansions, one scorer call each.
    pub expansions: usize,
    pub scored_tokens: usize,
    pub max_scored_per_expansion: usize,
}

impl DecodeStats {
    pub fn merge(&mut self, other: &DecodeStats) {
        self.searches += other.searches;
        self.steps += other.steps;
        self.expansions += other.expansions;
        self.scored_tokens += other.scored_tokens;
        self.max_scored_per_expansion = self.max_scored_per_expansion.max(other.max_scored_per_expansion);
    }

    /// Tokens an unconstrained search with the same expansions would score.
    pub fn full_vocab_tokens(&self, vocab_size: usize) -> usize {
        self.expansions * vocab_size
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

struct Beam {
    seq: Vec<Token>,
    logprob: f64,
    cursor: Cursor,
}

fn by_score(a: (f64, &[Token]), b: (f64, &[Token])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search over the trie. Each step's distribution is the model's
/// softmax renormalized over the cursor's children, so only allowed tokens
/// are ever scored.
pub fn constrained_beam_search<S: SequenceScorer>(
    scorer: &S,
    state: &S::State,
    trie: &IdTrie,
    config: &BeamConfig,
    stats: &mut DecodeStats,
) -> Result<Vec<Recommendation>> {
    if config.topk == 0 || config.beam < config.topk {
        return Err(Error::Config(format!(
            "beam search needs beam >= topk >= 1, got beam {} and topk {}",
            config.beam, config.topk
        )));
    }
    stats.searches += 1;
    let mut beams = vec![Beam {
        seq: Vec::new(),
        logprob: 0.0,
        cursor: ROOT,
    }];
    let mut finished: Vec<(Vec<Token>, f64, usize)> = Vec::new();
    while finished.len() < config.beam && !beams.is_empty() {
        stats.steps += 1;
        let mut candidates: Vec<(f64, Vec<Token>, Cursor)> = Vec::new();
        for beam in &beams {
            let allowed = trie.allowed_tokens(beam.cursor);
            let logits = scorer.logits(state, &beam.seq, &allowed)?;
            if logits.len() != allowed.len() {
                return Err(Error::Shape(format!(
                    "scorer returned {} logits for {} candidates",
                    logits.len(),
                    allowed.len()
                )));
            }
            stats.expansions += 1;
            stats.scored_tokens += allowed.len();
            stats.max_scored_per_expansion = stats.max_scored_per_expansion.max(allowed.len());
            for (&tok, lp) in allowed.iter().zip(log_softmax(&logits)) {
                let mut seq = beam.seq.clone();
                seq.push(tok);
                let cursor = trie.child(beam.cursor, tok).expect("allowed tokens are children");
                candidates.push((beam.logprob + lp, seq, cursor));
            }
        }
        candidates.sort_by(|a, b| by_score((a.0, &a.1), (b.0, &b.1)));
        candidates.truncate(config.beam - finished.len());
        beams = Vec::with_capacity(candidates.len());
        for (logprob, seq, cursor) in candidates {
            match trie.item(cursor) {
                Some(item) => finished.push((seq, logprob, item)),
                None => beams.push(Beam { seq, logprob, cursor }),
            }
        }
    }
    let rank = |(seq, lp, _): &(Vec<Token>, f64, usize)| {
        if config.length_penalty == 0.0 {
            *lp
        } else {
            lp / (seq.len() as f64).powf(config.length_penalty)
        }
    };
    finished.sort_by(|a, b| by_score((rank(a), &a.0), (rank(b), &b.0)));
    Ok(finished
        .into_iter()
        .take(config.topk)
        .map(|(_, logprob, item)| Recommendation { item, logprob })
        .collect())
}

/// Search with already-seen items removed from the output. The search
/// over-generates by the number of excluded catalogue items (and widens the
/// beam to match) before filtering.
pub fn recommend<S: SequenceScorer>(
    scorer: &S,
    state: &S::State,
    trie: &IdTrie,
    config: &BeamConfig,
    exclude: &HashSet<usize>,
    stats: &mut DecodeStats,
) -> Result<Vec<Recommendation>> {
    let excluded = exclude.iter().filter(|&&i| i < trie.num_items()).count();
    let topk = config.topk + excluded;
    let widened = BeamConfig {
        beam: config.beam.max(topk),
        topk,
        ..*config
    };
    let mut recs = constrained_beam_search(scorer, state, trie, &widened, stats)?;
    recs.retain(|r| !exclude.contains(&r.item));
    recs.truncate(config.topk);
    Ok(recs)
}

/// Sum of renormalized step log-probabilities of `seq`, recomputed from scratch.
pub fn sequence_logprob<S: SequenceScorer>(scorer: &S, state: &S::State, trie: &IdTrie, seq: &[Token]) -> Result<f64> {
    let mut cursor = ROOT;
    let mut total = 0.0;
    for (pos, &tok) in seq.iter().enumerate() {
        let allowed = trie.allowed_tokens(cursor);
        let at = allowed
            .iter()
            .position(|&t| t == tok)
            .ok_or_else(|| Error::Config(format!("token {tok} is not allowed at position {pos}")))?;
        let lp = log_softmax(&scorer.logits(state, &seq[..pos], &allowed)?);
        total += lp[at];
        cursor = trie.child(cursor, tok).expect("checked above");
    }
    Ok(total)
}

/// A user handle with its ranked `(item handle, logprob)` list.
pub type UserRecommendations = (String, Vec<(String, f64)>);

/// Recommendation dump: `user<TAB>rank<TAB>item<TAB>logprob`.
pub fn recommendations_tsv(rows: &[UserRecommendations]) -> String {
    let mut out = String::new();
    for (user, recs) in rows {
        for (rank, (item, lp)) in recs.iter().enumerate() {
            let _ = writeln!(out, "{user}\t{}\t{item}\t{lp:.9}", rank + 1);
        }
    }
    out
}
