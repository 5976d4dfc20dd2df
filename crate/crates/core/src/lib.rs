//! Generative recommendation: collaborative token IDs for users and items,
//! a narrow encoder-decoder that maps a user ID to item IDs, and
//! prefix-tree constrained beam search over the item catalogue.

pub mod corpus;
pub mod decode;
pub mod embed;
pub mod error;
pub mod eval;
pub mod graph;
pub mod indexer;
pub mod model;
pub mod pipeline;
pub mod spectral;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
