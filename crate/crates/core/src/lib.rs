#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Long-tailed graph classification.
//!
//! The pipeline trains a message-passing encoder with three branches (plain
//! cross-entropy, retrieval-augmented features from a neural
//! subgraph-matching retriever, and balanced supervised contrastive
//! learning with category centers), then freezes it and re-balances the
//! linear classifier under class-balanced sampling with Max-norm projection
//! and weight decay.

pub mod bscl;
pub mod classifier;
pub mod cli;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graphdata;
pub mod retrieval;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
