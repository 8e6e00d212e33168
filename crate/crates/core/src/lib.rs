//! Group-aware temporal knowledge graph representation learning.
//!
//! The crate learns entity and event-type representations from timestamped
//! event quadruples and forecasts the event types between an entity pair at
//! a future timestep. Entities are softly assigned to groups by a sparsemax
//! mapping; a fully connected group graph carries long-range correlations;
//! hierarchical graph convolutions mix group-level and entity-level
//! messages; a decay-aware GRU encodes the historical window; a Conv-TransE
//! head scores every event type. Everything runs on a small self-contained
//! reverse-mode autodiff engine.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
