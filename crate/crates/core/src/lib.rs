//! Coincidence rates, waiting times and state fidelities of heralded
//! photon-pair sources synchronized by quantum memories.
//!
//! The analytic side comes in two resolutions: [`binary`] tracks whether a
//! memory holds a photon, [`resolved`] tracks how many. Both take the
//! controller's readout readiness from [`belief`]. [`montecarlo`] simulates
//! the protocol pulse by pulse as an independent check, and [`experiments`]
//! drives everything from configuration files.

pub mod belief;
pub mod binary;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod montecarlo;
pub mod params;
pub mod resolved;

pub use error::{ModelError, Result};
pub use params::{DecoherenceMode, MemoryParams, SourceParams, SystemParams};
