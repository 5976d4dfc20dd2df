//! Hierarchical collaborative IDs for users and items.
//!
//! Entities are clustered once; every cluster holding more than `M` entries
//! is clustered again and the sub-label appended as the next token, until all
//! leaf clusters are small enough or `K` levels exist. Entities that still
//! share a token sequence get a 1-based ordinal appended.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionLog, SplitDataset};
use crate::embed::{self, BprConfig, BprMode, GcnConfig, NodeEmbeddings};
use crate::error::{Error, Result};
use crate::graph::{self, CoInteraction, WeightedGraph};
use crate::spectral::{self, LaplacianKind, SpectralOptions};

/// One ID token, always in `1..=999`.
pub type Token = u16;

pub const MAX_TOKEN: Token = 999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMethod {
    /// Spectral clustering of the interaction graphs.
    Sci,
    /// K-means over trained graph embeddings.
    Gci,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexTarget {
    /// Users only, from the user graph.
    U,
    /// Items only, from the item graph.
    I,
    /// Users and items, each from its own graph.
    Ui,
    /// Users and items together, from the joint user-item graph.
    Coui,
}

impl IndexMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexMethod::Sci => "sci",
            IndexMethod::Gci => "gci",
        }
    }
}

impl IndexTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexTarget::U => "u",
            IndexTarget::I => "i",
            IndexTarget::Ui => "ui",
            IndexTarget::Coui => "coui",
        }
    }

    fn indexes_users(self) -> bool {
        !matches!(self, IndexTarget::I)
    }

    fn indexes_items(self) -> bool {
        !matches!(self, IndexTarget::U)
    }
}

impl std::str::FromStr for IndexMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sci" => Ok(IndexMethod::Sci),
            "gci" => Ok(IndexMethod::Gci),
            _ => Err(Error::Config(format!("unknown indexing method `{s}` (sci, gci)"))),
        }
    }
}

impl std::str::FromStr for IndexTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u" => Ok(IndexTarget::U),
            "i" => Ok(IndexTarget::I),
            "ui" => Ok(IndexTarget::Ui),
            "coui" => Ok(IndexTarget::Coui),
            _ => Err(Error::Config(format!("unknown indexing target `{s}` (u, i, ui, coui)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdScheme {
    Hierarchical,
    /// Fixed-length base-999 counter for a side that was not clustered.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub method: IndexMethod,
    pub target: IndexTarget,
    /// Clusters per level (N).
    pub clusters: usize,
    /// Largest leaf cluster left unsplit (M).
    pub max_cluster_size: usize,
    /// Maximum number of clustering levels (K).
    pub max_levels: usize,
    /// Embedding size for graph collaborative indexing (E).
    pub embedding_size: usize,
    pub seed: u64,
    pub laplacian: LaplacianKind,
    pub co_interaction: CoInteraction,
    pub gcn_lr: f64,
    pub gcn_epochs: usize,
    pub bpr_lr: f64,
    pub bpr_epochs: usize,
    pub bpr_negatives: usize,
    pub bpr_mode: BprMode,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            method: IndexMethod::Sci,
            target: IndexTarget::Coui,
            clusters: 50,
            max_cluster_size: 100,
            max_levels: 10,
            embedding_size: 64,
            seed: 0,
            laplacian: LaplacianKind::Unnormalized,
            co_interaction: CoInteraction::DistinctItems,
            gcn_lr: GcnConfig::default().lr,
            gcn_epochs: GcnConfig::default().epochs,
            bpr_lr: BprConfig::default().lr,
            bpr_epochs: BprConfig::default().epochs,
            bpr_negatives: 1,
            bpr_mode: BprMode::Standard,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        let max = MAX_TOKEN as usize;
        if self.clusters < 2 || self.clusters > max {
            return Err(Error::Config(format!("clusters must be in [2, {max}], got {}", self.clusters)));
        }
        if self.max_cluster_size < 1 || self.max_cluster_size > max {
            return Err(Error::Config(format!(
                "max_cluster_size must be in [1, {max}], got {}",
                self.max_cluster_size
            )));
        }
        if self.max_levels < 1 {
            return Err(Error::Config("max_levels must be at least 1".into()));
        }
        if self.method == IndexMethod::Gci && self.embedding_size == 0 {
            return Err(Error::Config("embedding_size must be positive".into()));
        }
        Ok(())
    }

    fn hierarchy(&self) -> HierarchyParams {
        HierarchyParams {
            clusters: self.clusters,
            max_cluster_size: self.max_cluster_size,
            max_levels: self.max_levels,
        }
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("method".into(), self.method.as_str().into());
        m.insert("target".into(), self.target.as_str().into());
        m.insert("n".into(), self.clusters.to_string());
        m.insert("m".into(), self.max_cluster_size.to_string());
        m.insert("k".into(), self.max_levels.to_string());
        m.insert("e".into(), self.embedding_size.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m
    }
}

/// `[13, 25, 46]` → `"13 25 46"`.
pub fn render_id(seq: &[Token]) -> Result<String> {
    let mut out = String::new();
    for (i, &t) in seq.iter().enumerate() {
        if !(1..=MAX_TOKEN).contains(&t) {
            return Err(Error::TokenRange(t as u64));
        }
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{t}");
    }
    Ok(out)
}

/// Inverse of [`render_id`]; rejects empty IDs and out-of-range tokens.
pub fn parse_id(text: &str) -> Result<Vec<Token>> {
    let mut seq = Vec::new();
    for piece in text.split_whitespace() {
        let v: u64 = piece
            .parse()
            .map_err(|_| Error::Config(format!("`{piece}` is not an id token")))?;
        if !(1..=MAX_TOKEN as u64).contains(&v) {
            return Err(Error::TokenRange(v));
        }
        seq.push(v as Token);
    }
    if seq.is_empty() {
        return Err(Error::Config("empty id".into()));
    }
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchyParams {
    pub clusters: usize,
    pub max_cluster_size: usize,
    pub max_levels: usize,
}

/// Output of [`hierarchical_ids`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    /// Final, unique IDs.
    pub ids: Vec<Vec<Token>>,
    /// IDs before ordinal deduplication.
    pub pre_dedup: Vec<Vec<Token>>,
    /// `(entity, label)` pairs assigned at each level, in assignment order.
    pub level_labels: Vec<Vec<(usize, Token)>>,
    /// Some leaf cluster still exceeded the size bound when the level limit hit.
    pub depth_limited: bool,
}

/// Build hierarchical IDs for entities `0..count`.
///
/// `cluster_fn` receives a subset of entity indices (ascending) and returns
/// one label in `1..=clusters` per entry.
pub fn hierarchical_ids<F>(count: usize, params: HierarchyParams, mut cluster_fn: F) -> Result<Hierarchy>
where
    F: FnMut(&[usize]) -> Result<Vec<usize>>,
{
    if count == 0 {
        return Ok(Hierarchy {
            ids: Vec::new(),
            pre_dedup: Vec::new(),
            level_labels: Vec::new(),
            depth_limited: false,
        });
    }
    let mut ids: Vec<Vec<Token>> = vec![Vec::new(); count];
    let mut level_labels = Vec::new();

    let mut cluster = |members: &[usize], ids: &mut Vec<Vec<Token>>, level: &mut Vec<(usize, Token)>| {
        let labels = cluster_fn(members)?;
        if labels.len() != members.len() {
            return Err(Error::Shape(format!(
                "clustering returned {} labels for {} entities",
                labels.len(),
                members.len()
            )));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&e, &l) in members.iter().zip(&labels) {
            if l == 0 || l > params.clusters {
                return Err(Error::ClusterLabel {
                    label: l,
                    clusters: params.clusters,
                });
            }
            ids[e].push(l as Token);
            level.push((e, l as Token));
            groups.entry(l).or_default().push(e);
        }
        Ok::<_, Error>(groups.into_values().collect::<Vec<_>>())
    };

    let all: Vec<usize> = (0..count).collect();
    let mut level = Vec::with_capacity(count);
    let mut frontier = cluster(&all, &mut ids, &mut level)?;
    level_labels.push(level);

    let mut depth = 1;
    while depth < params.max_levels {
        if frontier.iter().all(|g| g.len() <= params.max_cluster_size) {
            break;
        }
        let mut next = Vec::new();
        let mut level = Vec::new();
        for group in frontier.iter().filter(|g| g.len() > params.max_cluster_size) {
            next.extend(cluster(group, &mut ids, &mut level)?);
        }
        level_labels.push(level);
        frontier = next;
        depth += 1;
    }
    let depth_limited = frontier.iter().any(|g| g.len() > params.max_cluster_size);

    let pre_dedup = ids.clone();
    let mut shared: HashMap<&[Token], Vec<usize>> = HashMap::new();
    for (e, seq) in pre_dedup.iter().enumerate() {
        shared.entry(seq.as_slice()).or_default().push(e);
    }
    for members in shared.values().filter(|m| m.len() > 1) {
        if members.len() > MAX_TOKEN as usize {
            return Err(Error::IndexOverflow {
                size: members.len(),
                levels: params.max_levels,
            });
        }
        for (ordinal, &e) in members.iter().enumerate() {
            ids[e].push(ordinal as Token + 1);
        }
    }
    Ok(Hierarchy {
        ids,
        pre_dedup,
        level_labels,
        depth_limited,
    })
}

/// Fixed-length base-999 IDs: entity `v` gets its digits, each shifted by one.
pub fn sequential_ids(count: usize) -> Vec<Vec<Token>> {
    let base = MAX_TOKEN as usize;
    let mut len = 1;
    let mut capacity = base;
    while capacity < count {
        capacity = capacity.saturating_mul(base);
        len += 1;
    }
    (0..count)
        .map(|mut v| {
            let mut digits = vec![0; len];
            for slot in digits.iter_mut().rev() {
                *slot = (v % base) as Token + 1;
                v /= base;
            }
            digits
        })
        .collect()
}

/// Entity → ID mapping for one side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexDictionary {
    pub side: Side,
    pub scheme: IdScheme,
    pub handles: Vec<String>,
    pub ids: Vec<Vec<Token>>,
    pub depth_limited: bool,
    /// Free-form `key=value` provenance written as `#` header lines.
    pub metadata: BTreeMap<String, String>,
}

impl IndexDictionary {
    pub fn sequential(side: Side, handles: Vec<String>) -> Self {
        let ids = sequential_ids(handles.len());
        IndexDictionary {
            side,
            scheme: IdScheme::Sequential,
            handles,
            ids,
            depth_limited: false,
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, handle: &str) -> Option<usize> {
        self.handles.iter().position(|h| h == handle)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let side = match self.side {
            Side::User => "user",
            Side::Item => "item",
        };
        let scheme = match self.scheme {
            IdScheme::Hierarchical => "hierarchical",
            IdScheme::Sequential => "sequential",
        };
        let _ = writeln!(out, "# side={side}");
        let _ = writeln!(out, "# scheme={scheme}");
        let _ = writeln!(out, "# depth_limited={}", self.depth_limited);
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        for (h, id) in self.handles.iter().zip(&self.ids) {
            let _ = writeln!(out, "{h}\t{}", render_id(id)?);
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut side = None;
        let mut scheme = IdScheme::Hierarchical;
        let mut depth_limited = false;
        let mut metadata = BTreeMap::new();
        let mut handles: Vec<String> = Vec::new();
        let mut ids = Vec::new();
        let mut seen: HashMap<Vec<Token>, usize> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let Some((k, v)) = meta.trim().split_once('=') else {
                    continue;
                };
                match k.trim() {
                    "side" => {
                        side = Some(match v.trim() {
                            "user" => Side::User,
                            "item" => Side::Item,
                            other => return Err(Error::parse(line_no, format!("unknown side `{other}`"))),
                        })
                    }
                    "scheme" => {
                        scheme = match v.trim() {
                            "hierarchical" => IdScheme::Hierarchical,
                            "sequential" => IdScheme::Sequential,
                            other => return Err(Error::parse(line_no, format!("unknown scheme `{other}`"))),
                        }
                    }
                    "depth_limited" => {
                        depth_limited = v
                            .trim()
                            .parse()
                            .map_err(|_| Error::parse(line_no, "depth_limited must be true/false"))?
                    }
                    key => {
                        metadata.insert(key.to_string(), v.trim().to_string());
                    }
                }
                continue;
            }
            let (handle, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no, "expected `entity<TAB>tokens`"))?;
            if handle.is_empty() {
                return Err(Error::parse(line_no, "empty entity handle"));
            }
            let id = parse_id(id).map_err(|e| Error::parse(line_no, e.to_string()))?;
            if let Some(&first) = seen.get(&id) {
                return Err(Error::DuplicateId {
                    id: render_id(&id)?,
                    first: handles[first].clone(),
                    second: handle.to_string(),
                });
            }
            seen.insert(id.clone(), handles.len());
            handles.push(handle.to_string());
            ids.push(id);
        }
        let side = side.ok_or_else(|| Error::parse(1, "missing `# side=` header"))?;
        Ok(IndexDictionary {
            side,
            scheme,
            handles,
            ids,
            depth_limited,
            metadata,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// User and item dictionaries produced together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPair {
    pub users: IndexDictionary,
    pub items: IndexDictionary,
}

fn sci_ids(graph: &WeightedGraph, config: &IndexConfig) -> Result<Hierarchy> {
    let options = SpectralOptions {
        kind: config.laplacian,
        ..SpectralOptions::default()
    };
    let mut call = 0u64;
    hierarchical_ids(graph.num_nodes(), config.hierarchy(), |members| {
        let seed = config.seed.wrapping_add(call);
        call += 1;
        let clusters = config.clusters.min(members.len());
        let labels = if members.len() == graph.num_nodes() {
            spectral::spectral_cluster_with(graph, clusters, seed, &options)?
        } else {
            spectral::spectral_cluster_with(&graph.induced_subgraph(members), clusters, seed, &options)?
        };
        Ok(labels.labels().to_vec())
    })
}

fn gci_ids(embeddings: &NodeEmbeddings, config: &IndexConfig) -> Result<Hierarchy> {
    let z = embed::zscore(embeddings);
    let mut call = 0u64;
    hierarchical_ids(z.rows(), config.hierarchy(), |members| {
        let seed = config.seed.wrapping_add(call);
        call += 1;
        let rows = z.0.select(ndarray::Axis(0), members);
        let clusters = config.clusters.min(members.len());
        Ok(embed::kmeans(rows.view(), clusters, seed)?.labels.labels().to_vec())
    })
}

fn gcn_embeddings(graph: &WeightedGraph, config: &IndexConfig) -> Result<NodeEmbeddings> {
    let clusters = config.clusters.min(graph.num_nodes());
    let labels = spectral::spectral_cluster_with(
        graph,
        clusters,
        config.seed,
        &SpectralOptions {
            kind: config.laplacian,
            ..SpectralOptions::default()
        },
    )?;
    let gcn = GcnConfig {
        embedding_size: config.embedding_size,
        lr: config.gcn_lr,
        epochs: config.gcn_epochs,
        seed: config.seed,
    };
    Ok(embed::gcn_train(graph, &labels, &gcn)?.embeddings)
}

fn single_side(graph: &WeightedGraph, config: &IndexConfig) -> Result<Hierarchy> {
    match config.method {
        IndexMethod::Sci => sci_ids(graph, config),
        IndexMethod::Gci => gci_ids(&gcn_embeddings(graph, config)?, config),
    }
}

fn dictionary(side: Side, handles: &[String], h: Hierarchy, config: &IndexConfig) -> IndexDictionary {
    IndexDictionary {
        side,
        scheme: IdScheme::Hierarchical,
        handles: handles.to_vec(),
        ids: h.ids,
        depth_limited: h.depth_limited,
        metadata: config.metadata(),
    }
}

/// Build both dictionaries; a side the target does not cover gets sequential IDs.
pub fn build_index(log: &InteractionLog, split: &SplitDataset, config: &IndexConfig) -> Result<IndexPair> {
    config.validate()?;
    let mut users = None;
    let mut items = None;
    if config.target == IndexTarget::Coui {
        let m = log.num_users();
        let joint = match config.method {
            IndexMethod::Sci => sci_ids(&graph::build_user_item_graph(split, config.co_interaction), config)?,
            IndexMethod::Gci => {
                let bpr = BprConfig {
                    embedding_size: config.embedding_size,
                    lr: config.bpr_lr,
                    epochs: config.bpr_epochs,
                    negatives_per_pos: config.bpr_negatives,
                    mode: config.bpr_mode,
                    seed: config.seed,
                    ..BprConfig::default()
                };
                let run = embed::mf_bpr_train(split, &bpr)?;
                gci_ids(&run.user_embeddings.stack(&run.item_embeddings)?, config)?
            }
        };
        let depth_limited = joint.depth_limited;
        let mut ids = joint.ids;
        let item_ids = ids.split_off(m);
        let side = |side, handles: &[String], ids| IndexDictionary {
            side,
            scheme: IdScheme::Hierarchical,
            handles: handles.to_vec(),
            ids,
            depth_limited,
            metadata: config.metadata(),
        };
        users = Some(side(Side::User, log.users(), ids));
        items = Some(side(Side::Item, log.items(), item_ids));
    } else {
        if config.target.indexes_users() {
            let g = graph::build_user_graph(split, config.co_interaction);
            users = Some(dictionary(Side::User, log.users(), single_side(&g, config)?, config));
        }
        if config.target.indexes_items() {
            let g = graph::build_item_graph(split);
            items = Some(dictionary(Side::Item, log.items(), single_side(&g, config)?, config));
        }
    }
    let fallback = |side, handles: &[String]| {
        let mut d = IndexDictionary::sequential(side, handles.to_vec());
        d.metadata = config.metadata();
        d
    };
    Ok(IndexPair {
        users: users.unwrap_or_else(|| fallback(Side::User, log.users())),
        items: items.unwrap_or_else(|| fallback(Side::Item, log.items())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn params(clusters: usize, max_cluster_size: usize, max_levels: usize) -> HierarchyParams {
        HierarchyParams {
            clusters,
            max_cluster_size,
            max_levels,
        }
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_id(&[13, 25, 46]).unwrap(), "13 25 46");
        assert_eq!(render_id(&[7]).unwrap(), "7");
        assert!(matches!(render_id(&[1000]), Err(Error::TokenRange(1000))));
        assert!(matches!(render_id(&[0]), Err(Error::TokenRange(0))));
        assert_eq!(parse_id("13 25 46").unwrap(), vec![13, 25, 46]);
        assert!(parse_id("").is_err());
        assert!(parse_id("1000").is_err());
        assert!(parse_id("a").is_err());
    }

    #[test]
    fn single_small_cluster_gets_ordinals() {
        let h = hierarchical_ids(5, params(3, 10, 10), |m| Ok(vec![2; m.len()])).unwrap();
        assert_eq!(
            h.ids,
            vec![vec![2, 1], vec![2, 2], vec![2, 3], vec![2, 4], vec![2, 5]]
        );
        assert!(h.pre_dedup.iter().all(|id| id == &vec![2]));
        assert!(!h.depth_limited);
    }

    #[test]
    fn distinct_labels_need_no_dedup() {
        let h = hierarchical_ids(3, params(3, 10, 10), |m| Ok((1..=m.len()).collect())).unwrap();
        assert_eq!(h.ids, vec![vec![1], vec![2], vec![3]]);
    }

    /// Uniform round-robin clustering over 45 entities traced by hand:
    /// level 1 gives three clusters of 15 (> M = 10), each split into 5/5/5.
    #[test]
    fn uniform_forty_five() {
        let uniform = |m: &[usize]| Ok((0..m.len()).map(|i| i % 3 + 1).collect());
        let h = hierarchical_ids(45, params(3, 10, 10), uniform).unwrap();
        assert_eq!(h.level_labels.len(), 2);
        let mut groups: HashMap<Vec<Token>, usize> = HashMap::new();
        for id in &h.pre_dedup {
            assert_eq!(id.len(), 2);
            *groups.entry(id.clone()).or_default() += 1;
        }
        assert_eq!(groups.len(), 9);
        assert!(groups.values().all(|&c| c == 5));
        let unique: HashSet<_> = h.ids.iter().collect();
        assert_eq!(unique.len(), 45);
        // entity 0: level-1 label 1, first in its subgroup → [1, 1, 1]
        assert_eq!(h.ids[0], vec![1, 1, 1]);
    }

    #[test]
    fn depth_limit_is_flagged() {
        let h = hierarchical_ids(20, params(3, 2, 2), |m| Ok(vec![1; m.len()])).unwrap();
        assert!(h.depth_limited);
        assert!(h.pre_dedup.iter().all(|id| id == &vec![1, 1]));
        assert_eq!(h.ids[19], vec![1, 1, 20]);
    }

    #[test]
    fn oversized_final_cluster_overflows() {
        let err = hierarchical_ids(1000, params(3, 10, 1), |m| Ok(vec![1; m.len()])).unwrap_err();
        assert!(matches!(err, Error::IndexOverflow { size: 1000, .. }));
    }

    #[test]
    fn bad_labels_are_rejected() {
        assert!(hierarchical_ids(3, params(2, 10, 3), |m| Ok(vec![3; m.len()])).is_err());
        assert!(hierarchical_ids(3, params(2, 10, 3), |m| Ok(vec![0; m.len()])).is_err());
        assert!(hierarchical_ids(3, params(2, 10, 3), |_| Ok(vec![1])).is_err());
    }

    #[test]
    fn sequential_ids_are_fixed_length_and_unique() {
        assert_eq!(sequential_ids(3), vec![vec![1], vec![2], vec![3]]);
        let ids = sequential_ids(1500);
        assert!(ids.iter().all(|id| id.len() == 2));
        assert_eq!(ids[0], vec![1, 1]);
        assert_eq!(ids[1234], vec![2, 236]);
        let unique: HashSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), 1500);
        assert!(ids.iter().flatten().all(|&t| (1..=MAX_TOKEN).contains(&t)));
    }

    #[test]
    fn dictionary_file_round_trip() {
        let mut d = IndexDictionary::sequential(Side::Item, vec!["a".into(), "b c".into()]);
        d.metadata.insert("method".into(), "sci".into());
        let back = IndexDictionary::parse(&d.to_text().unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn dictionary_parse_errors() {
        assert!(IndexDictionary::parse("a\t1\n").is_err());
        assert!(IndexDictionary::parse("# side=item\na\t1\nb\t1\n").is_err());
        assert!(IndexDictionary::parse("# side=item\na 1\n").is_err());
        assert!(IndexDictionary::parse("# side=item\na\t0\n").is_err());
        assert!(IndexDictionary::parse("# side=martian\n").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(IndexConfig::default().validate().is_ok());
        for bad in [
            IndexConfig { clusters: 1, ..IndexConfig::default() },
            IndexConfig { clusters: 1000, ..IndexConfig::default() },
            IndexConfig { max_cluster_size: 0, ..IndexConfig::default() },
            IndexConfig { max_cluster_size: 1000, ..IndexConfig::default() },
            IndexConfig { max_levels: 0, ..IndexConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!("coui".parse::<IndexTarget>().is_ok());
        assert!("xx".parse::<IndexTarget>().is_err());
        assert!("GCI".parse::<IndexMethod>().is_ok());
    }

    proptest::proptest! {
        #[test]
        fn hierarchy_invariants(
            count in 1usize..400,
            clusters in 2usize..12,
            m in 1usize..30,
            levels in 1usize..6,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let h = match hierarchical_ids(count, params(clusters, m, levels), |s| {
                Ok(s.iter().map(|_| rng.random_range(1..=clusters)).collect())
            }) {
                Ok(h) => h,
                Err(Error::IndexOverflow { size, .. }) => {
                    proptest::prop_assert!(size > MAX_TOKEN as usize);
                    return Ok(());
                }
                Err(e) => return Err(proptest::test_runner::TestCaseError::fail(e.to_string())),
            };
            let unique: HashSet<_> = h.ids.iter().collect();
            proptest::prop_assert_eq!(unique.len(), count);
            proptest::prop_assert!(h.ids.iter().flatten().all(|&t| (1..=MAX_TOKEN).contains(&t)));
            let mut groups = std::collections::HashMap::new();
            for p in &h.pre_dedup {
                *groups.entry(p.clone()).or_insert(0usize) += 1;
                proptest::prop_assert!(p.len() <= levels);
            }
            proptest::prop_assert!(h.depth_limited || groups.values().all(|&g| g <= m));
            // After sorting, any prefix pair would also show up as an adjacent pair.
            let mut sorted = h.ids.clone();
            sorted.sort();
            for (a, b) in sorted.iter().zip(&sorted[1..]) {
                proptest::prop_assert!(!b.starts_with(a));
            }
            let text = IndexDictionary {
                side: Side::Item,
                scheme: IdScheme::Hierarchical,
                handles: (0..count).map(|i| format!("e{i}")).collect(),
                ids: h.ids.clone(),
                depth_limited: h.depth_limited,
                metadata: Default::default(),
            }
            .to_text()
            .unwrap();
            proptest::prop_assert_eq!(IndexDictionary::parse(&text).unwrap().ids, h.ids);
        }

        #[test]
        fn sequential_ids_are_distinct_and_equal_length(count in 1usize..5000) {
            let ids = sequential_ids(count);
            let unique: HashSet<_> = ids.iter().collect();
            proptest::prop_assert_eq!(unique.len(), count);
            proptest::prop_assert!(ids.iter().all(|id| id.len() == ids[0].len()));
            proptest::prop_assert!(ids.iter().flatten().all(|&t| (1..=MAX_TOKEN).contains(&t)));
        }
    }
}
