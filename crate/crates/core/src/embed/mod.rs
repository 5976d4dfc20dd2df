//! Node embeddings for graph collaborative indexing: a two-layer GCN for
//! single-sided graphs, BPR matrix factorization for the user-item graph,
//! Z-score normalization and K-means quantization.

pub mod bpr;
pub mod gcn;
pub mod kmeans;

use std::fmt::Write as _;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub use bpr::{mf_bpr_train, BprConfig, BprMode, MfModel};
pub use gcn::{gcn_forward, gcn_train, GcnConfig, GcnModel, NormalizedAdjacency};
pub use kmeans::{kmeans, kmeans_with, KMeansOptions, KMeansResult};

/// `|V| × E` matrix; row order follows the graph's node order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings(pub Array2<f64>);

impl NodeEmbeddings {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Stack `self` above `other`.
    pub fn stack(&self, other: &NodeEmbeddings) -> Result<NodeEmbeddings> {
        ndarray::concatenate(Axis(0), &[self.0.view(), other.0.view()])
            .map(NodeEmbeddings)
            .map_err(|e| Error::Shape(e.to_string()))
    }

    /// Text dump: a `rows cols` header, then one whitespace-separated row per line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{} {}\n", self.rows(), self.dim());
        for row in self.0.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join("\t"));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<NodeEmbeddings> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Empty("embedding file has no header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(1, format!("bad header: {e}")))?;
        let [rows, cols] = dims[..] else {
            return Err(Error::parse(1, "header must be `rows cols`"));
        };
        let total = rows
            .checked_mul(cols)
            .filter(|&t| t <= text.len())
            .ok_or_else(|| Error::parse(1, "header dimensions exceed the file size"))?;
        let mut data = Vec::with_capacity(total);
        let mut seen = 0;
        for (idx, line) in lines {
            seen += 1;
            if seen > rows {
                return Err(Error::parse(idx + 1, "more rows than declared"));
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| Error::parse(idx + 1, format!("bad value `{tok}`: {e}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(idx + 1, "non-finite value"));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::parse(idx + 1, format!("expected {cols} values")));
            }
        }
        if seen != rows {
            return Err(Error::parse(seen + 1, format!("expected {rows} rows, found {seen}")));
        }
        Array2::from_shape_vec((rows, cols), data)
            .map(NodeEmbeddings)
            .map_err(|e| Error::Shape(e.to_string()))
    }
}

/// Column-wise `(x − μ) / σ` with the population standard deviation;
/// zero-variance columns become zeros.
pub fn zscore(x: &NodeEmbeddings) -> NodeEmbeddings {
    let mut out = x.0.clone();
    let n = x.rows() as f64;
    if x.rows() == 0 {
        return NodeEmbeddings(out);
    }
    for mut col in out.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 && sd.is_finite() {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    NodeEmbeddings(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn zscore_examples() {
        let z = zscore(&NodeEmbeddings(array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]));
        // Population sd of [1,2,3] is sqrt(2/3); (3-2)/sqrt(2/3) = 1.224744871...
        let expect = 1.5f64.sqrt();
        assert!((z.0[(0, 0)] + expect).abs() < 1e-12);
        assert!(z.0[(1, 0)].abs() < 1e-12);
        assert!((z.0[(2, 0)] - expect).abs() < 1e-12);
        assert!(z.0.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_is_idempotent() {
        let x = NodeEmbeddings(array![[0.3, -2.0], [1.7, 4.0], [-0.4, 0.5], [2.2, 1.0]]);
        let once = zscore(&x);
        let twice = zscore(&once);
        for (a, b) in once.0.iter().zip(twice.0.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dump_round_trip_and_errors() {
        let x = NodeEmbeddings(array![[0.1, -2.5e-7], [3.0, 1.0 / 3.0]]);
        assert_eq!(NodeEmbeddings::parse_tsv(&x.to_tsv()).unwrap(), x);
        assert!(NodeEmbeddings::parse_tsv("").is_err());
        assert!(NodeEmbeddings::parse_tsv("2 2\n1 2\n").is_err());
        assert!(NodeEmbeddings::parse_tsv("1 2\n1 2 3\n").is_err());
        assert!(NodeEmbeddings::parse_tsv("1 1\nNaN\n").is_err());
        assert!(NodeEmbeddings::parse_tsv("99999999999 99999999999\n").is_err());
    }

    proptest! {
        #[test]
        fn zscore_columns_standardized(data in prop::collection::vec(-100.0f64..100.0, 12)) {
            let x = NodeEmbeddings(Array2::from_shape_vec((4, 3), data).unwrap());
            let z = zscore(&x);
            for col in z.0.columns() {
                let mean = col.sum() / 4.0;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!(sd == 0.0 || (sd - 1.0).abs() < 1e-9);
            }
        }
    }
}
