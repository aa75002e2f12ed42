//! One-shot embedding-size search for deep recommenders.
//!
//! Pipeline: train a supernet holding every candidate embedding size
//! ([`supernet`]), search a per-field size assignment with a policy network
//! ([`search`]), then retrain a fresh model at those sizes ([`retrain`]).

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dlrm;
pub mod error;
pub mod nn;
pub mod retrain;
pub mod rng;
pub mod sampling;
pub mod search;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
