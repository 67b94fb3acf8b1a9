//! Coordinated Q-learning on a coordination graph.
//!
//! Each edge carries a Q-function of the two endpoint observations that
//! outputs a 16×16 payoff table; max-plus over those tables picks the joint
//! tilt. Edge targets split each cell's reward evenly across its edges.

mod edge_q;
mod normalizer;
mod replay;
mod trainer;

pub use edge_q::{edge_dims, edge_input, Decision, EdgeQ, EdgeQCheckpoint, Sharing, EDGE_INPUT_DIM, EDGE_OUTPUT_DIM,
    OUTPUT_INIT_SCALE,
};
pub use normalizer::{calibrate, Normalizer};
pub use replay::ReplayBuffer;
pub(crate) use trainer::{is_eval_step, WindowStats};
pub use trainer::{
    edge_reward, edge_td_gradient, evaluate_edge_q, run_training, train_step, Hyperparams, MetricPoint, StepStats,
    TrainingOutcome, Transition,
};
