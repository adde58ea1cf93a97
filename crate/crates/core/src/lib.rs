//! Knowledge graph construction in three phases: open extraction of
//! triplets, a definition for every extracted relation, and canonicalization
//! of relations onto a target schema or onto a schema grown on the fly.
//! Refinement passes feed earlier results and retrieved schema relations
//! back into extraction as hints. The [`evaluate`] module scores the output.
//!
//! Every LLM and embedding call goes through a backend trait with a replay
//! implementation, so whole runs can be reproduced from stored fixtures.

pub mod backend;
pub mod canonicalize;
pub mod config;
pub mod define;
pub mod embedding;
pub mod error;
pub mod evaluate;
pub mod gateway;
pub mod io;
pub mod manifest;
pub mod model;
pub mod oie;
pub mod par;
pub mod prompts;
pub mod refine;
pub mod text;

pub use error::{BackendError, Error, Result};
pub use model::{
    dedupe_triplets, normalize_relation, CanonicalizationAction, Document, ExtractionRecord,
    RelationDefinition, Schema, Triplet,
};
