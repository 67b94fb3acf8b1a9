use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{evaluate, Environment, Evaluation};
use crate::learner::{is_eval_step, Hyperparams, OUTPUT_INIT_SCALE, MetricPoint, ReplayBuffer, TrainingOutcome, WindowStats};
use crate::maxplus::epsilon_greedy;
use crate::neural::{clip_global_norm, AdamState, Mlp, NetworkCheckpoint};
use crate::rng::{self, Stream};
use crate::{Error, JointAction, Observation, Result, N_TILTS, OBS_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DqnMode {
    /// One network and one buffer per cell.
    Independent,
    /// One network and one buffer for all cells.
    Shared,
}

pub fn cell_dims(hidden: &[usize]) -> Vec<usize> {
    let mut d = vec![OBS_DIM];
    d.extend_from_slice(hidden);
    d.push(N_TILTS);
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSample {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub next_greedy: usize,
}

/// Per-cell Q-networks mapping a cell's own observation to 16 tilt values.
#[derive(Debug, Clone, PartialEq)]
pub struct CellQPolicy {
    mode: DqnMode,
    n_cells: usize,
    online: Vec<Mlp>,
    target: Vec<Mlp>,
    optim: Vec<AdamState>,
}

impl CellQPolicy {
    pub fn new<R: Rng>(mode: DqnMode, n_cells: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Result<Self> {
        let n = match mode {
            DqnMode::Independent => n_cells,
            DqnMode::Shared => 1,
        };
        let online = (0..n)
            .map(|_| Mlp::he_uniform(&cell_dims(hidden), rng).map(|m| m.scale_output_layer(OUTPUT_INIT_SCALE)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mode,
            n_cells,
            target: online.clone(),
            optim: online.iter().map(|m| AdamState::new(m.n_params(), lr)).collect(),
            online,
        })
    }

    pub fn mode(&self) -> DqnMode {
        self.mode
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_networks(&self) -> usize {
        self.online.len()
    }

    fn net_index(&self, cell: usize) -> usize {
        match self.mode {
            DqnMode::Independent => cell,
            DqnMode::Shared => 0,
        }
    }

    pub fn online(&self, cell: usize) -> &Mlp {
        &self.online[self.net_index(cell)]
    }

    /// Per-cell argmax, lowest tilt on ties.
    pub fn greedy(&self, obs: &[Observation]) -> Result<JointAction> {
        if obs.len() != self.n_cells {
            return Err(Error::DimensionMismatch {
                expected: self.n_cells,
                actual: obs.len(),
            });
        }
        obs.iter()
            .enumerate()
            .map(|(c, o)| {
                let q = self.online(c).forward(o)?;
                Ok((0..q.len()).fold(0, |b, k| if q[k] > q[b] { k } else { b }))
            })
            .collect()
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.iter().map(Mlp::clone_into_target).collect();
    }

    fn td_gradient(&self, s: &CellSample, net: usize, gamma: f64, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let mut target = s.reward;
        if gamma != 0.0 {
            target += gamma * self.target[net].forward_component(&s.next_obs, s.next_greedy)?.0;
        }
        let (v, acts) = self.online[net].forward_component(&s.obs, s.action)?;
        let delta = target - v;
        self.online[net].backward_component(&acts, s.action, -delta * scale, grad)?;
        Ok(delta)
    }

    fn apply(&mut self, net: usize, grad: &mut [f64], clip: f64) -> Result<()> {
        clip_global_norm(grad, clip);
        self.optim[net].step(&mut self.online[net], grad)
    }

    pub fn checkpoint(&self) -> CellQCheckpoint {
        CellQCheckpoint {
            mode: self.mode,
            n_cells: self.n_cells,
            networks: self
                .online
                .iter()
                .zip(&self.optim)
                .map(|(n, o)| NetworkCheckpoint::new(n, o))
                .collect(),
            targets: self.target.iter().map(|t| t.params().to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellQCheckpoint {
    pub mode: DqnMode,
    pub n_cells: usize,
    pub networks: Vec<NetworkCheckpoint>,
    pub targets: Vec<Vec<f64>>,
}

impl CellQCheckpoint {
    pub fn restore(&self) -> Result<CellQPolicy> {
        let expected = if self.mode == DqnMode::Shared { 1 } else { self.n_cells };
        if self.networks.len() != expected || self.targets.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.networks.len(),
            });
        }
        let mut p = CellQPolicy {
            mode: self.mode,
            n_cells: self.n_cells,
            online: Vec::new(),
            target: Vec::new(),
            optim: Vec::new(),
        };
        for (c, t) in self.networks.iter().zip(&self.targets) {
            if c.dims.first() != Some(&OBS_DIM) || c.dims.last() != Some(&N_TILTS) {
                return Err(Error::ArtifactMismatch(format!("cell network dims {:?}", c.dims)));
            }
            let (n, o) = c.restore()?;
            p.target.push(Mlp::from_params(&c.dims, t.clone())?);
            p.online.push(n);
            p.optim.push(o);
        }
        Ok(p)
    }
}

enum Buffers {
    PerCell(Vec<ReplayBuffer<CellSample>>),
    Joint(ReplayBuffer<Vec<CellSample>>),
}

impl Buffers {
    fn push(&mut self, samples: Vec<CellSample>) {
        match self {
            Buffers::PerCell(b) => b.iter_mut().zip(samples).for_each(|(b, s)| b.push(s)),
            Buffers::Joint(b) => b.push(samples),
        }
    }

    fn len(&self) -> usize {
        match self {
            Buffers::PerCell(b) => b[0].len(),
            Buffers::Joint(b) => b.len(),
        }
    }
}

/// One gradient step per network. Shared mode sums over cells and averages
/// over sampled joint transitions.
fn dqn_step<R: Rng>(policy: &mut CellQPolicy, buffers: &Buffers, hp: &Hyperparams, rng: &mut R) -> Result<f64> {
    let scale = 1.0 / hp.batch_size as f64;
    let mut loss = 0.0;
    match buffers {
        Buffers::PerCell(bufs) => {
            for (c, b) in bufs.iter().enumerate() {
                let idx = b.sample_indices(hp.batch_size, rng)?;
                let mut grad = vec![0.0; policy.online[c].n_params()];
                for &k in &idx {
                    let d = policy.td_gradient(b.get(k), c, hp.gamma, scale, &mut grad)?;
                    loss += d * d * scale;
                }
                if !loss.is_finite() {
                    return Err(Error::NonFinite("TD loss"));
                }
                policy.apply(c, &mut grad, hp.grad_clip)?;
            }
        }
        Buffers::Joint(b) => {
            let idx = b.sample_indices(hp.batch_size, rng)?;
            let mut grad = vec![0.0; policy.online[0].n_params()];
            for &k in &idx {
                for s in b.get(k) {
                    let d = policy.td_gradient(s, 0, hp.gamma, scale, &mut grad)?;
                    loss += d * d * scale;
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite("TD loss"));
            }
            policy.apply(0, &mut grad, hp.grad_clip)?;
        }
    }
    Ok(loss)
}

pub fn evaluate_cell_q<E: Environment + ?Sized>(env: &E, policy: &CellQPolicy) -> Result<Evaluation> {
    evaluate(env, &mut |obs| policy.greedy(obs))
}

/// Per-cell ε-greedy Q-learning on each cell's own standardized reward.
pub fn train_dqn<E: Environment + ?Sized>(
    env: &mut E,
    mode: DqnMode,
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainingOutcome<CellQPolicy>> {
    hp.validate()?;
    let n = env.n_cells();
    let mut policy = CellQPolicy::new(mode, n, &hp.hidden, hp.learning_rate, &mut rng::stream(seed, Stream::NetworkInit))?;
    let mut explore = rng::stream(seed, Stream::Exploration);
    let mut replay_rng = rng::stream(seed, Stream::Replay);
    let mut buffers = match mode {
        DqnMode::Independent => Buffers::PerCell((0..n).map(|_| ReplayBuffer::new(hp.buffer_capacity)).collect()),
        DqnMode::Shared => Buffers::Joint(ReplayBuffer::new(hp.buffer_capacity)),
    };
    let n_actions = vec![N_TILTS; n];
    let mut metrics = Vec::new();
    let mut best: Option<(usize, CellQPolicy)> = None;
    let mut best_mean = f64::NEG_INFINITY;
    let mut window = WindowStats::default();
    let mut train_steps = 0usize;
    if hp.budget == 0 {
        return Ok(TrainingOutcome { policy, metrics, best });
    }

    let mut obs = env.observe();
    let t0 = Instant::now();
    let greedy = policy.greedy(&obs)?;
    let mut action = epsilon_greedy(&greedy, &n_actions, hp.epsilon(0), &mut explore)?;
    window.add_latency(t0);
    for t in 0..hp.budget {
        let rewards = env.step(&action)?;
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward"));
        }
        let next_obs = env.observe();
        let t0 = Instant::now();
        let next_greedy = policy.greedy(&next_obs)?;
        let next_action = epsilon_greedy(&next_greedy, &n_actions, hp.epsilon(t + 1), &mut explore)?;
        window.add_latency(t0);
        buffers.push(
            (0..n)
                .map(|c| CellSample {
                    obs: obs[c],
                    action: action[c],
                    reward: rewards[c],
                    next_obs: next_obs[c],
                    next_greedy: next_greedy[c],
                })
                .collect(),
        );
        if buffers.len() >= hp.batch_size {
            window.add_loss(dqn_step(&mut policy, &buffers, hp, &mut replay_rng)?);
            train_steps += 1;
            if train_steps % hp.target_update_dqn == 0 {
                policy.sync_target();
            }
        }
        let step = t + 1;
        if is_eval_step(step, hp) {
            let eval = evaluate_cell_q(env, &policy)?;
            if !eval.mean.is_finite() {
                return Err(Error::NonFinite("evaluation reward"));
            }
            let (mean_loss, act_latency_ms) = window.take();
            if eval.mean > best_mean {
                best_mean = eval.mean;
                best = Some((step, policy.clone()));
            }
            metrics.push(MetricPoint {
                step,
                epsilon: hp.epsilon(step),
                eval,
                mean_loss,
                act_latency_ms,
            });
        }
        obs = next_obs;
        action = next_action;
    }
    Ok(TrainingOutcome { policy, metrics, best })
}
