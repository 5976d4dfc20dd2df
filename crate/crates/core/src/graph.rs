//! User-only, item-only and joint user-item interaction graphs.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionLog, SplitDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    User,
    Item,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Node {
    pub kind: NodeKind,
    /// Index into the user or item vocabulary.
    pub index: usize,
}

/// How user-user edges count shared interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoInteraction {
    /// Number of distinct items both users touched.
    #[default]
    DistinctItems,
    /// Sum over shared items of the smaller record count.
    Records,
}

/// Undirected graph with positive integer edge weights and no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedGraph {
    nodes: Vec<Node>,
    /// Sorted `(neighbor, weight)` lists, stored symmetrically.
    adjacency: Vec<Vec<(usize, u64)>>,
}

impl WeightedGraph {
    /// Build from unordered edges; repeated pairs are summed and self-loops dropped.
    pub fn from_edges(nodes: Vec<Node>, edges: impl IntoIterator<Item = (usize, usize, u64)>) -> Self {
        let mut acc: HashMap<(usize, usize), u64> = HashMap::new();
        for (a, b, w) in edges {
            if a == b || w == 0 {
                continue;
            }
            let key = if a < b { (a, b) } else { (b, a) };
            *acc.entry(key).or_insert(0) += w;
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (&(a, b), &w) in &acc {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        WeightedGraph { nodes, adjacency }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, u64)] {
        &self.adjacency[node]
    }

    pub fn weight(&self, a: usize, b: usize) -> u64 {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(n, _)| n)
            .map(|i| self.adjacency[a][i].1)
            .unwrap_or(0)
    }

    pub fn degree(&self, node: usize) -> u64 {
        self.adjacency[node].iter().map(|&(_, w)| w).sum()
    }

    /// Each undirected edge once, as `(a, b, weight)` with `a < b`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, list)| {
            list.iter()
                .filter(move |&&(b, _)| a < b)
                .map(move |&(b, w)| (a, b, w))
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges().count()
    }

    /// Subgraph on `keep` (in the given order), renumbered `0..keep.len()`.
    pub fn induced_subgraph(&self, keep: &[usize]) -> WeightedGraph {
        let mut position = HashMap::with_capacity(keep.len());
        for (new, &old) in keep.iter().enumerate() {
            position.insert(old, new);
        }
        let nodes = keep.iter().map(|&n| self.nodes[n]).collect();
        let adjacency = keep
            .iter()
            .map(|&old| {
                let mut list: Vec<(usize, u64)> = self.adjacency[old]
                    .iter()
                    .filter_map(|&(nb, w)| position.get(&nb).map(|&p| (p, w)))
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();
        WeightedGraph { nodes, adjacency }
    }

    /// Subgraph holding only the nodes of one kind.
    pub fn restrict(&self, kind: NodeKind) -> WeightedGraph {
        let keep: Vec<usize> = (0..self.num_nodes())
            .filter(|&n| self.nodes[n].kind == kind)
            .collect();
        self.induced_subgraph(&keep)
    }

    /// Connected components as a label per node, numbered by first node.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.num_nodes()];
        let mut next = 0;
        for start in 0..self.num_nodes() {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(n) = stack.pop() {
                for &(nb, _) in &self.adjacency[n] {
                    if label[nb] == usize::MAX {
                        label[nb] = next;
                        stack.push(nb);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// TSV dump `node_a<TAB>node_b<TAB>weight` with `u:`/`i:` node tags.
    pub fn to_tsv(&self, log: &InteractionLog) -> String {
        let mut out = String::from("# node_a\tnode_b\tweight\t(tags: u:=user i:=item)\n");
        let name = |n: &Node| match n.kind {
            NodeKind::User => format!("u:{}", log.users()[n.index]),
            NodeKind::Item => format!("i:{}", log.items()[n.index]),
        };
        for (a, b, w) in self.edges() {
            let _ = writeln!(out, "{}\t{}\t{w}", name(&self.nodes[a]), name(&self.nodes[b]));
        }
        out
    }
}

/// One parsed line of a graph dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpEdge {
    pub a: (NodeKind, String),
    pub b: (NodeKind, String),
    pub weight: u64,
}

/// Parse the output of [`WeightedGraph::to_tsv`].
pub fn parse_graph_dump(text: &str) -> Result<Vec<DumpEdge>> {
    fn node(field: &str, line: usize) -> Result<(NodeKind, String)> {
        let (kind, name) = if let Some(rest) = field.strip_prefix("u:") {
            (NodeKind::User, rest)
        } else if let Some(rest) = field.strip_prefix("i:") {
            (NodeKind::Item, rest)
        } else {
            return Err(Error::parse(line, format!("node `{field}` lacks a u:/i: tag")));
        };
        if name.is_empty() {
            return Err(Error::parse(line, "empty node name"));
        }
        Ok((kind, name.to_string()))
    }
    let mut edges = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(line_no, "expected node_a, node_b, weight"));
        }
        let weight: u64 = fields[2]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad weight: {e}")))?;
        if weight == 0 {
            return Err(Error::parse(line_no, "edge weight must be positive"));
        }
        let a = node(fields[0], line_no)?;
        let b = node(fields[1], line_no)?;
        if a == b {
            return Err(Error::parse(line_no, "self-loop"));
        }
        edges.push(DumpEdge { a, b, weight });
    }
    Ok(edges)
}

fn user_nodes(n: usize) -> impl Iterator<Item = Node> {
    (0..n).map(|index| Node {
        kind: NodeKind::User,
        index,
    })
}

fn item_nodes(n: usize) -> impl Iterator<Item = Node> {
    (0..n).map(|index| Node {
        kind: NodeKind::Item,
        index,
    })
}

/// Per-item list of `(user, record count)` from the train split, users ascending.
fn item_audiences(train: &SplitDataset) -> Vec<Vec<(usize, u64)>> {
    let mut audience: Vec<Vec<(usize, u64)>> = vec![Vec::new(); train.num_items];
    for (u, items) in train.train.iter().enumerate() {
        let mut counts: HashMap<usize, u64> = HashMap::new();
        for &i in items {
            *counts.entry(i).or_insert(0) += 1;
        }
        let mut counts: Vec<_> = counts.into_iter().collect();
        counts.sort_unstable();
        for (i, c) in counts {
            audience[i].push((u, c));
        }
    }
    audience
}

fn user_edges(train: &SplitDataset, mode: CoInteraction) -> Vec<(usize, usize, u64)> {
    let mut acc: HashMap<(usize, usize), u64> = HashMap::new();
    for audience in item_audiences(train) {
        for (x, &(a, ca)) in audience.iter().enumerate() {
            for &(b, cb) in &audience[x + 1..] {
                let w = match mode {
                    CoInteraction::DistinctItems => 1,
                    CoInteraction::Records => ca.min(cb),
                };
                *acc.entry((a, b)).or_insert(0) += w;
            }
        }
    }
    acc.into_iter().map(|((a, b), w)| (a, b, w)).collect()
}

fn item_edges(train: &SplitDataset) -> Vec<(usize, usize, u64)> {
    let mut acc: HashMap<(usize, usize), u64> = HashMap::new();
    for items in &train.train {
        let distinct: Vec<usize> = items.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        for (x, &a) in distinct.iter().enumerate() {
            for &b in &distinct[x + 1..] {
                *acc.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    acc.into_iter().map(|((a, b), w)| (a, b, w)).collect()
}

/// Users linked by the number of items they share.
pub fn build_user_graph(train: &SplitDataset, mode: CoInteraction) -> WeightedGraph {
    WeightedGraph::from_edges(user_nodes(train.num_users()).collect(), user_edges(train, mode))
}

/// Items linked by the number of users whose history holds both.
pub fn build_item_graph(train: &SplitDataset) -> WeightedGraph {
    WeightedGraph::from_edges(item_nodes(train.num_items).collect(), item_edges(train))
}

/// Users (first) and items (after them) with user-user, item-item and
/// user-item edges; user-item weights count interaction records.
pub fn build_user_item_graph(train: &SplitDataset, mode: CoInteraction) -> WeightedGraph {
    let m = train.num_users();
    let nodes = user_nodes(m).chain(item_nodes(train.num_items)).collect();
    let mut edges = user_edges(train, mode);
    edges.extend(item_edges(train).into_iter().map(|(a, b, w)| (a + m, b + m, w)));
    for (u, items) in train.train.iter().enumerate() {
        for &i in items {
            edges.push((u, m + i, 1));
        }
    }
    WeightedGraph::from_edges(nodes, edges)
}
