//! Syntax-guided text generation over constituency trees.
//!
//! Target sentences are decomposed into depth-indexed (source, syntax
//! context, infilling) triplets; a conditional scorer is trained on them and
//! sentences are generated top-down by structural beam search, expanding
//! every constituent placeholder of the current context at each depth.

pub mod grammar;
pub mod metrics;
pub mod model;
pub mod search;
pub mod tree;
pub mod triplet;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
