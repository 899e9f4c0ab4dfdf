//! Watermark-based dataset inference against retrieval-augmented generation.

pub mod audit;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod hashing;
pub mod lm_sim;
pub mod rag;
pub mod stats;
pub mod textcore;
pub mod watermark;

pub use error::{Error, Result};
