//! Coordinated multi-agent reinforcement learning for antenna tilt control.
//!
//! The crate bundles a small downlink cellular simulator ([`netsim`]), the
//! construction of coordination graphs over cells ([`graph`]), max-plus
//! action selection on those graphs ([`maxplus`]), a compact feed-forward
//! network with hand-written gradients ([`neural`]), the coordinated
//! Q-learning trainer ([`learner`]), comparison methods ([`baselines`]) and
//! the experiment plumbing used by the `cellgraph` binary ([`experiment`],
//! [`bench`]).

pub mod baselines;
pub mod bench;
pub mod env;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod learner;
pub mod maxplus;
pub mod netsim;
pub mod neural;
pub mod rng;

pub use error::{Error, Result};

/// Number of electrical down-tilt settings per cell (0°..=15°).
pub const N_TILTS: usize = 16;

/// Tilt applied to every cell when nothing else is specified, in degrees.
pub const DEFAULT_TILT: usize = 8;

/// Length of a per-cell observation vector (four SINR percentiles).
pub const OBS_DIM: usize = 4;

/// Per-cell observation.
pub type Observation = [f64; OBS_DIM];

/// One tilt index per cell.
pub type JointAction = Vec<usize>;
