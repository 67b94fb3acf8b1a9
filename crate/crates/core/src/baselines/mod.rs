//! Comparison methods: independent and parameter-shared per-cell DQN,
//! greedy tilt sweeps and a uniformly random policy.

mod dqn;
mod sweep;

pub use dqn::{cell_dims, evaluate_cell_q, train_dqn, CellQCheckpoint, CellQPolicy, CellSample, DqnMode};
pub use sweep::{coordinated_sweep, random_policy_baseline, sweep, sweep_objective, RandomBaseline, SweepResult};
