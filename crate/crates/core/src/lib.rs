//! Edge flood-detection control plane: detection consensus, diurnal sensor
//! fusion and a motion-aware tier-selection state machine, embedded in a
//! deterministic discrete-event simulation of a three-node deployment.

pub mod consensus;
pub mod domain;
pub mod error;
pub mod evalkit;
pub mod fsm;
pub mod fusion;
pub mod provenance;
pub mod scenario;
pub mod simnet;

pub use error::{Error, Result};
