//! Multi-facet concept embeddings: corpora, encoders, objectives, training,
//! facet decomposition and the evaluation tasks built on top of them.

pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evaltasks;
pub mod facets;
pub mod linalg;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};
