//! Kernel for loosely-structured agent systems.
//!
//! Everything here is allocation-only and free of IO: artifacts, their
//! semantic version history, budgeted view projection, binding provenance,
//! the agent execution cycle, sandboxed evolution, the task pool workflow and
//! the retrieval benchmark mechanics. File layouts, the CLI and network
//! reasoners live in the `lss` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bench;
pub mod binding;
pub mod error;
pub mod evolution;
pub mod provenance;
pub mod runtime;
pub mod store;
pub mod taskpool;
pub mod text;
pub mod view;

pub use error::{Error, Result};
pub use provenance::{BindingEvent, BindingKind, EventId, Outcome, ProvenanceLog, SupplyChain};
pub use store::{Artifact, ArtifactId, Kind, PalimpsestEntry, Store, StoreConfig, Tier};
pub use text::{estimate_tokens, LexicalScorer, Scorer};
pub use view::{StepRecord, Trajectory, View, ViewSegment};
