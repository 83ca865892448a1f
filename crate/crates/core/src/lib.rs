//! RIS-assisted indoor wireless SLAM.
//!
//! The crate simulates an agent moving through a room with reflectors,
//! scatterers and one reconfigurable intelligent surface, optimizes the
//! surface's phase shifts against the position CRLB with a genetic
//! algorithm, and tracks the agent and the landmark map with a
//! Rao-Blackwellized particle filter.

pub mod channel;
pub mod crlb;
pub mod environment;
pub mod error;
pub mod harness;
pub mod measurement;
pub mod optimizer;
pub mod orchestrator;
pub mod scenario;
pub mod slam;

pub use error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
