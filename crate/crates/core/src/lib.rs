//! Multi-answer question answering: pooled retrieval, independent
//! per-passage reading, and inter-passage verification of candidate answers.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod ipv;
pub mod llm;
pub mod orchestrator;
pub mod prompts;
pub mod reader;
pub mod retrieval;
pub mod util;

pub use error::{Error, Result};
