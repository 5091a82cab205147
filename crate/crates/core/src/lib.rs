//! Vulnerability prediction from AST path-context code embeddings.
//!
//! The pipeline: [`path_extractor`] turns C functions into encoded path
//! contexts, [`context_ranker`] drops over-common and over-rare contexts,
//! [`embedding`] learns an attention network that pools contexts into code
//! vectors, [`composite`] adds module-level context, [`classifier`] predicts
//! CWE labels, [`similarity`] finds related historical functions and
//! [`feedback`] reshapes vectors from developer votes. [`store`] persists all
//! artifacts and [`pipeline`] ties inference together.

pub mod classifier;
pub mod composite;
pub mod context_ranker;
pub mod embedding;
pub mod feedback;
pub mod jsonl;
pub mod linalg;
pub mod path_extractor;
pub mod pipeline;
pub mod similarity;
pub mod store;
pub mod tensor_file;
