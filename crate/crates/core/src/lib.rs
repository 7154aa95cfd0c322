//! Relation prediction for knowledge graph completion from entity names.
//!
//! Given an ordered pair of entity names, a sequence classifier scores every
//! relation in a fixed vocabulary. The crate covers the whole pipeline:
//!
//! - [`kg_data`]: triple/name file ingestion and the pair → relations index
//! - [`tokenizer`]: subword tokenization into fixed-length id sequences
//! - [`model`]: transformer encoder classifier and cross-entropy loss
//! - [`trainer`]: Adam training loop with decoupled weight decay
//! - [`metrics`]: raw and filtered MR, MRR, and Hits@N
//! - [`splits`]: entity-inductive evaluation splits
//! - [`analysis`]: worst-ranked prediction reports
//! - [`synthetic`]: toy graphs whose relations follow from entity names
//! - [`experiment`]: config-driven runs behind the `relpred` binary

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod kg_data;
pub mod metrics;
pub mod model;
pub mod splits;
pub mod synthetic;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
