use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::edge_q::{edge_input, EdgeQ, Sharing};
use super::replay::ReplayBuffer;
use crate::env::{evaluate, Environment, Evaluation};
use crate::graph::CoordinationGraph;
use crate::neural::clip_global_norm;
use crate::rng::{self, Stream};
use crate::{Error, JointAction, Observation, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Train steps between target syncs for the coordinated learners.
    pub target_update_crl: usize,
    /// Train steps between target syncs for the DQN baselines.
    pub target_update_dqn: usize,
    pub max_plus_iters: usize,
    pub budget: usize,
    pub eval_every: usize,
    pub eval_drops: usize,
    pub grad_clip: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            learning_rate: 1e-4,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_steps: 5000,
            hidden: vec![32, 32],
            batch_size: 32,
            buffer_capacity: 5000,
            target_update_crl: 500,
            target_update_dqn: 2000,
            max_plus_iters: 40,
            budget: 10000,
            eval_every: 250,
            eval_drops: 10,
            grad_clip: 10.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch size <= buffer capacity");
        }
        if self.target_update_crl == 0 || self.target_update_dqn == 0 {
            return bad("target update period must be positive");
        }
        if self.max_plus_iters == 0 || self.eval_every == 0 || self.eval_drops == 0 {
            return bad("max-plus iterations, eval cadence and eval drops must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }

    /// Linear decay from start to end over `epsilon_decay_steps`.
    pub fn epsilon(&self, step: usize) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let f = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Observation>,
    pub action: JointAction,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Observation>,
    /// Greedy action produced by message passing at the next step.
    pub next_greedy: JointAction,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        let n = self.obs.len();
        for len in [self.action.len(), self.rewards.len(), self.next_obs.len(), self.next_greedy.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, actual: len });
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward"));
        }
        Ok(())
    }
}

/// r_i/|N(i)| + r_j/|N(j)|.
pub fn edge_reward(rewards: &[f64], degrees: &[usize], i: usize, j: usize) -> f64 {
    rewards[i] / degrees[i] as f64 + rewards[j] / degrees[j] as f64
}

/// TD error of edge `e` on one transition; adds `scale · ∂(½δ²)/∂θ` into
/// `grad` (the gradient of that edge's network). Reads only the entries of
/// cells `i` and `j`.
pub fn edge_td_gradient(
    q: &EdgeQ,
    g: &CoordinationGraph,
    degrees: &[usize],
    t: &Transition,
    e: usize,
    gamma: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let (i, j) = g.edges()[e];
    let mut target = edge_reward(&t.rewards, degrees, i, j);
    if gamma != 0.0 {
        let k = t.next_greedy[i] * crate::N_TILTS + t.next_greedy[j];
        let (v, _) = q.target(e).forward_component(&edge_input(&t.next_obs, i, j), k)?;
        target += gamma * v;
    }
    let k = t.action[i] * crate::N_TILTS + t.action[j];
    let net = q.online(e);
    let (v, acts) = net.forward_component(&edge_input(&t.obs, i, j), k)?;
    let delta = target - v;
    // ∂(½δ²)/∂Q = −δ
    net.backward_component(&acts, k, -delta * scale, grad)?;
    Ok(delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean over sampled transitions of Σ_edges δ².
    pub loss: f64,
    pub grad_norm: f64,
}

/// Samples a batch and applies one Adam step per network. Gradients are
/// summed over edges and averaged over the batch.
pub fn train_step<R: Rng>(
    q: &mut EdgeQ,
    buffer: &ReplayBuffer<Transition>,
    g: &CoordinationGraph,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<StepStats> {
    let idx = buffer.sample_indices(hp.batch_size, rng)?;
    let degrees = g.degrees();
    let scale = 1.0 / hp.batch_size as f64;
    let mut grads: Vec<Vec<f64>> = q.networks().iter().map(|n| vec![0.0; n.n_params()]).collect();
    let mut loss = 0.0;
    for &b in &idx {
        let t = buffer.get(b);
        for e in 0..g.n_edges() {
            let n = q.net_index(e);
            let d = edge_td_gradient(q, g, &degrees, t, e, hp.gamma, scale, &mut grads[n])?;
            loss += d * d;
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("TD loss"));
    }
    let mut grad_norm = 0.0f64;
    let (nets, optim) = q.parts_mut();
    for ((net, opt), grad) in nets.iter_mut().zip(optim.iter_mut()).zip(grads.iter_mut()) {
        grad_norm = grad_norm.max(clip_global_norm(grad, hp.grad_clip));
        opt.step(net, grad)?;
    }
    Ok(StepStats { loss, grad_norm })
}

/// One evaluation checkpoint of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPoint {
    pub step: usize,
    pub epsilon: f64,
    pub eval: Evaluation,
    /// Mean training loss since the previous checkpoint (NaN before training starts).
    pub mean_loss: f64,
    /// Mean wall-clock action-selection time since the previous checkpoint.
    pub act_latency_ms: f64,
}

pub struct TrainingOutcome<P> {
    pub policy: P,
    pub metrics: Vec<MetricPoint>,
    /// Policy with the highest mean evaluation reward and the step it was taken at.
    pub best: Option<(usize, P)>,
}

/// Accumulates loss and latency between evaluation checkpoints.
#[derive(Default)]
pub(crate) struct WindowStats {
    loss_sum: f64,
    loss_n: usize,
    latency_sum_ms: f64,
    latency_n: usize,
}

impl WindowStats {
    pub(crate) fn add_loss(&mut self, l: f64) {
        self.loss_sum += l;
        self.loss_n += 1;
    }

    pub(crate) fn add_latency(&mut self, start: Instant) {
        self.latency_sum_ms += start.elapsed().as_secs_f64() * 1e3;
        self.latency_n += 1;
    }

    pub(crate) fn take(&mut self) -> (f64, f64) {
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        let out = (mean(self.loss_sum, self.loss_n), mean(self.latency_sum_ms, self.latency_n));
        *self = Self::default();
        out
    }
}

pub(crate) fn is_eval_step(step: usize, hp: &Hyperparams) -> bool {
    step % hp.eval_every == 0 || step == hp.budget
}

/// Greedy evaluation of an edge-Q policy.
pub fn evaluate_edge_q<E: Environment + ?Sized>(
    env: &E,
    q: &EdgeQ,
    g: &CoordinationGraph,
    max_iters: usize,
) -> Result<Evaluation> {
    let mut unused = rng::seeded(0);
    evaluate(env, &mut |obs| Ok(q.act(obs, g, 0.0, max_iters, &mut unused)?.greedy))
}

/// Coordinated RL training loop (PS-CRL with shared networks, CRL per edge).
pub fn run_training<E: Environment + ?Sized>(
    env: &mut E,
    g: &CoordinationGraph,
    sharing: Sharing,
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainingOutcome<EdgeQ>> {
    hp.validate()?;
    if g.n_nodes() != env.n_cells() {
        return Err(Error::DimensionMismatch {
            expected: env.n_cells(),
            actual: g.n_nodes(),
        });
    }
    let mut q = EdgeQ::new(sharing, g.n_edges(), &hp.hidden, hp.learning_rate, &mut rng::stream(seed, Stream::NetworkInit))?;
    let mut explore = rng::stream(seed, Stream::Exploration);
    let mut replay_rng = rng::stream(seed, Stream::Replay);
    let mut buffer = ReplayBuffer::new(hp.buffer_capacity);
    let mut metrics = Vec::new();
    let mut best: Option<(usize, EdgeQ)> = None;
    let mut best_mean = f64::NEG_INFINITY;
    let mut window = WindowStats::default();
    let mut train_steps = 0usize;

    if hp.budget == 0 {
        return Ok(TrainingOutcome { policy: q, metrics, best });
    }

    let mut obs = env.observe();
    let t0 = Instant::now();
    let mut decision = q.act(&obs, g, hp.epsilon(0), hp.max_plus_iters, &mut explore)?;
    window.add_latency(t0);

    for t in 0..hp.budget {
        let rewards = env.step(&decision.action)?;
        let next_obs = env.observe();
        let t0 = Instant::now();
        let next = q.act(&next_obs, g, hp.epsilon(t + 1), hp.max_plus_iters, &mut explore)?;
        window.add_latency(t0);
        let tr = Transition {
            obs,
            action: decision.action,
            rewards,
            next_obs: next_obs.clone(),
            next_greedy: next.greedy.clone(),
        };
        tr.validate()?;
        buffer.push(tr);

        if buffer.len() >= hp.batch_size && g.n_edges() > 0 {
            let s = train_step(&mut q, &buffer, g, hp, &mut replay_rng)?;
            window.add_loss(s.loss);
            train_steps += 1;
            if train_steps % hp.target_update_crl == 0 {
                q.sync_target();
            }
        }

        let step = t + 1;
        if is_eval_step(step, hp) {
            let eval = evaluate_edge_q(env, &q, g, hp.max_plus_iters)?;
            if !eval.mean.is_finite() {
                return Err(Error::NonFinite("evaluation reward"));
            }
            let (mean_loss, act_latency_ms) = window.take();
            if eval.mean > best_mean {
                best_mean = eval.mean;
                best = Some((step, q.clone()));
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
        decision = next;
    }
    Ok(TrainingOutcome { policy: q, metrics, best })
}
