//! Disentangled hierarchical VAE for sentiment-controlled text generation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod feature_layer;
pub mod flow;
pub mod model;
pub mod nn;
pub mod optim;
pub mod oracles;
pub mod pipeline;
pub mod sentence_vae;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
