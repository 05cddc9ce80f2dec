//! Entity set expansion with positive and negative seed entities.
//!
//! Given a few entities that belong to a target class and a few that share
//! the class but carry an unwanted attribute value, rank the candidate
//! vocabulary so that entities like the positive seeds come first and
//! entities like the negative seeds sink. Two pipelines are provided:
//!
//! * [`retexpan`]: mean cosine similarity over contextual entity
//!   embeddings, followed by segment-wise re-ranking against the negatives.
//! * [`genexpan`]: language-model generation constrained to the candidate
//!   vocabulary by a token trie, with the same re-ranking.
//!
//! [`classgen`] builds evaluation queries from attribute-annotated entities
//! and [`eval`] scores ranked lists with Pos/Neg/Comb MAP@K and P@K.
//! Models sit behind the traits in [`providers`]; deterministic stubs are
//! included, and [`providers::RemoteProvider`] talks to an HTTP model server.

pub mod classgen;
pub mod cli;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod genexpan;
pub mod io;
pub mod providers;
pub mod ranking;
pub mod retexpan;
pub mod synthetic;

pub use error::{Error, Result};
