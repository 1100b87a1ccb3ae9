//! Joint entity recognition and relation extraction as multi-head selection.
//!
//! Tokens are embedded (word vector plus a character BiLSTM), encoded by a
//! stacked BiLSTM, tagged with a linear-chain CRF over BIO tags, and every
//! token independently selects any number of `(head token, relation)` pairs
//! through per-pair sigmoid scores. An optional Chu-Liu/Edmonds pass turns
//! the thresholded relations into a tree.

pub mod arborescence;
pub mod autodiff;
pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod relhead;
pub mod tagger;
pub mod trainer;

pub use error::{Error, Result};
