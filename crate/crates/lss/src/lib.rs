//! File-backed companion to `lss-core`: the on-disk store, file formats,
//! remote reasoners, the parallel bench runner and the `lss` CLI.

pub mod bench;
pub mod cli;
pub mod error;
pub mod formats;
pub mod fsstore;
pub mod remote;

pub use error::{Error, Result};
pub use fsstore::{FsStore, SharedStore};
