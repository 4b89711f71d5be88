//! Persistence, logging, plotting and process plumbing around `drac_core`.

pub mod checkpoint;
pub mod plot;
pub mod registry;
pub mod remote;
pub mod robustness;
pub mod run;
pub mod runlog;

pub use drac_core as core;

/// Version string recorded in manifests and checkpoints.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
