//! IO, ingestion and orchestration around `linktime-core`: file formats,
//! AVL event ingestion, multi-chain execution and convergence advisories.
//! The `linktime` binary wires these into subcommands.

pub mod formats;
pub mod ingest;
pub mod parallel;
pub mod rhat;
