//! Desk-scale downlink simulator.
//!
//! Base stations carry sectorized antennas; users are dropped uniformly and
//! associate to the strongest cell. Every quantity is a pure function of
//! `(Deployment, UserDrop, tilts)`.

pub mod antenna;
pub mod deployment;
pub mod radio;

pub use antenna::AntennaModel;
pub use deployment::{BaseStation, Cell, Deployment, DeploymentParams, UserDrop};
pub use radio::{compute_snapshot, LinkGeometry, RadioParams, RadioSnapshot};
