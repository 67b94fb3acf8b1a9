//! Max-plus action selection on a coordination graph.
//!
//! The joint value is a sum of pairwise payoff matrices, one per edge. Agents
//! exchange per-action messages along the edges; on trees the decoded joint
//! action is exact, on cyclic graphs the best configuration seen during the
//! exchange is returned.

use std::collections::HashSet;

use rand::Rng;

use crate::graph::CoordinationGraph;
use crate::{Error, JointAction, Result};

/// Default iteration cap for one action selection.
pub const DEFAULT_MAX_ITERS: usize = 40;
/// Max-norm message change below which the exchange is considered converged.
pub const CONVERGENCE_TOL: f64 = 1e-9;
/// Grid used to quantize messages for recurrence detection.
pub const CYCLE_QUANTUM: f64 = 1e-9;
/// Upper bound on the joint action count for exhaustive search.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Row-major `rows × cols` matrix; rows index the lower-numbered endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for a in 0..rows {
            for b in 0..cols {
                data.push(f(a, b));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.cols + b]
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.data[a * self.cols + b] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn add_constant(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v += k);
    }
}

/// One payoff matrix per graph edge (aligned with `graph.edges()`), at a
/// fixed joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePayoffSet {
    n_actions: Vec<usize>,
    matrices: Vec<PayoffMatrix>,
}

impl EdgePayoffSet {
    pub fn new(g: &CoordinationGraph, n_actions: Vec<usize>, matrices: Vec<PayoffMatrix>) -> Result<Self> {
        if n_actions.len() != g.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: g.n_nodes(),
                actual: n_actions.len(),
            });
        }
        if matrices.len() != g.n_edges() {
            return Err(Error::DimensionMismatch {
                expected: g.n_edges(),
                actual: matrices.len(),
            });
        }
        for (m, &(i, j)) in matrices.iter().zip(g.edges()) {
            if m.rows != n_actions[i] {
                return Err(Error::DimensionMismatch {
                    expected: n_actions[i],
                    actual: m.rows,
                });
            }
            if m.cols != n_actions[j] {
                return Err(Error::DimensionMismatch {
                    expected: n_actions[j],
                    actual: m.cols,
                });
            }
            if m.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("edge payoff"));
            }
        }
        Ok(Self { n_actions, matrices })
    }

    pub fn n_actions(&self) -> &[usize] {
        &self.n_actions
    }

    pub fn matrices(&self) -> &[PayoffMatrix] {
        &self.matrices
    }

    pub fn matrix_mut(&mut self, e: usize) -> &mut PayoffMatrix {
        &mut self.matrices[e]
    }

    fn check(&self, g: &CoordinationGraph) -> Result<()> {
        if self.matrices.len() != g.n_edges() || self.n_actions.len() != g.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: g.n_edges(),
                actual: self.matrices.len(),
            });
        }
        Ok(())
    }
}

/// Σ over edges of `p_ij[a_i][a_j]`.
pub fn global_value(p: &EdgePayoffSet, g: &CoordinationGraph, a: &[usize]) -> Result<f64> {
    p.check(g)?;
    if a.len() != g.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: g.n_nodes(),
            actual: a.len(),
        });
    }
    if let Some(i) = (0..a.len()).find(|&i| a[i] >= p.n_actions[i]) {
        return Err(Error::InvalidArgument(format!("action {} out of range for node {i}", a[i])));
    }
    Ok(value_unchecked(p, g, a))
}

fn value_unchecked(p: &EdgePayoffSet, g: &CoordinationGraph, a: &[usize]) -> f64 {
    g.edges()
        .iter()
        .zip(&p.matrices)
        .map(|(&(i, j), m)| m.get(a[i], a[j]))
        .sum()
}

/// Messages on every directed edge plus the anytime best solution.
///
/// For edge `e = (i, j)`, `i < j`, slot `2e` holds μ_{i→j} (length |A_j|)
/// and slot `2e + 1` holds μ_{j→i} (length |A_i|).
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub messages: Vec<Vec<f64>>,
    pub iteration: usize,
    pub best_action: Option<JointAction>,
    pub best_value: f64,
}

impl MessageState {
    pub fn zeros(p: &EdgePayoffSet, g: &CoordinationGraph) -> Self {
        let mut messages = Vec::with_capacity(2 * g.n_edges());
        for &(i, j) in g.edges() {
            messages.push(vec![0.0; p.n_actions[j]]);
            messages.push(vec![0.0; p.n_actions[i]]);
        }
        Self {
            messages,
            iteration: 0,
            best_action: None,
            best_value: f64::NEG_INFINITY,
        }
    }

    /// Message from `from` into `to` across edge `e`.
    fn incoming(&self, g: &CoordinationGraph, e: usize, to: usize) -> &[f64] {
        let (_, j) = g.edges()[e];
        if to == j {
            &self.messages[2 * e]
        } else {
            &self.messages[2 * e + 1]
        }
    }

    fn quantized(&self) -> Vec<i64> {
        self.messages
            .iter()
            .flatten()
            .map(|v| (v / CYCLE_QUANTUM).round() as i64)
            .collect()
    }
}

/// Sum of incoming messages at `i`, skipping the one arriving over `skip_edge`.
fn incoming_sum(state: &MessageState, g: &CoordinationGraph, i: usize, n: usize, skip_edge: Option<usize>) -> Vec<f64> {
    let mut s = vec![0.0; n];
    for &(_, e) in g.incident(i) {
        if Some(e) == skip_edge {
            continue;
        }
        for (acc, v) in s.iter_mut().zip(state.incoming(g, e, i)) {
            *acc += v;
        }
    }
    s
}

fn normalize(msg: &mut [f64]) {
    let mean = msg.iter().sum::<f64>() / msg.len() as f64;
    msg.iter_mut().for_each(|v| *v -= mean);
}

/// a_i = argmax Σ_j μ_{j→i}(a_i), lowest index on ties.
pub fn decode(p: &EdgePayoffSet, g: &CoordinationGraph, state: &MessageState) -> JointAction {
    (0..g.n_nodes())
        .map(|i| {
            let s = incoming_sum(state, g, i, p.n_actions[i], None);
            argmax_first(&s)
        })
        .collect()
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// One synchronous round: every directed message is recomputed from the
/// previous round's messages, then zero-mean normalized. The decoded joint
/// action is scored and the best-so-far solution updated.
pub fn pass_messages_once(p: &EdgePayoffSet, g: &CoordinationGraph, state: &MessageState) -> MessageState {
    let mut next = Vec::with_capacity(state.messages.len());
    for (e, (&(i, j), q)) in g.edges().iter().zip(&p.matrices).enumerate() {
        let ai = p.n_actions[i];
        let aj = p.n_actions[j];

        // i → j
        let si = incoming_sum(state, g, i, ai, Some(e));
        let mut to_j = vec![f64::NEG_INFINITY; aj];
        for a_i in 0..ai {
            for (a_j, m) in to_j.iter_mut().enumerate() {
                *m = m.max(q.get(a_i, a_j) + si[a_i]);
            }
        }
        normalize(&mut to_j);

        // j → i
        let sj = incoming_sum(state, g, j, aj, Some(e));
        let mut to_i = vec![f64::NEG_INFINITY; ai];
        for (a_i, m) in to_i.iter_mut().enumerate() {
            for a_j in 0..aj {
                *m = m.max(q.get(a_i, a_j) + sj[a_j]);
            }
        }
        normalize(&mut to_i);

        next.push(to_j);
        next.push(to_i);
    }

    let mut out = MessageState {
        messages: next,
        iteration: state.iteration + 1,
        best_action: state.best_action.clone(),
        best_value: state.best_value,
    };
    let a = decode(p, g, &out);
    let v = value_unchecked(p, g, &a);
    if out.best_action.is_none() || v > out.best_value {
        out.best_action = Some(a);
        out.best_value = v;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    CycleDetected,
    MaxIterations,
    NoEdges,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::CycleDetected => "cycle",
            Termination::MaxIterations => "max_iterations",
            Termination::NoEdges => "no_edges",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub iterations: usize,
    pub termination: Termination,
    pub best_value: f64,
    /// Best value after each round (non-decreasing).
    pub trace: Vec<f64>,
}

/// Runs max-plus until convergence, a repeated message state, or `max_iters`
/// rounds, returning the best joint action found along the way.
pub fn select_actions(p: &EdgePayoffSet, g: &CoordinationGraph, max_iters: usize) -> Result<(JointAction, Diagnostics)> {
    p.check(g)?;
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if g.n_edges() == 0 {
        let a = vec![0; g.n_nodes()];
        return Ok((
            a,
            Diagnostics {
                iterations: 0,
                termination: Termination::NoEdges,
                best_value: 0.0,
                trace: Vec::new(),
            },
        ));
    }

    let mut state = MessageState::zeros(p, g);
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    seen.insert(state.quantized());
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIterations;
    while state.iteration < max_iters {
        let next = pass_messages_once(p, g, &state);
        trace.push(next.best_value);
        let delta = next
            .messages
            .iter()
            .flatten()
            .zip(state.messages.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        state = next;
        if delta < CONVERGENCE_TOL {
            termination = Termination::Converged;
            break;
        }
        if !seen.insert(state.quantized()) {
            termination = Termination::CycleDetected;
            break;
        }
    }
    let action = state.best_action.expect("at least one round ran");
    Ok((
        action,
        Diagnostics {
            iterations: state.iteration,
            termination,
            best_value: state.best_value,
            trace,
        },
    ))
}

/// Exhaustive maximizer of the global value; the lexicographically smallest
/// joint action wins ties.
pub fn brute_force_argmax(p: &EdgePayoffSet, g: &CoordinationGraph) -> Result<(JointAction, f64)> {
    p.check(g)?;
    let total: u128 = p.n_actions.iter().map(|&n| n as u128).product();
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge(total));
    }
    let n = g.n_nodes();
    let mut a = vec![0usize; n];
    let mut best = a.clone();
    let mut best_v = value_unchecked(p, g, &a);
    loop {
        // odometer with the last node varying fastest
        let mut k = n;
        loop {
            if k == 0 {
                return Ok((best, best_v));
            }
            k -= 1;
            a[k] += 1;
            if a[k] < p.n_actions[k] {
                break;
            }
            a[k] = 0;
        }
        let v = value_unchecked(p, g, &a);
        if v > best_v {
            best_v = v;
            best.copy_from_slice(&a);
        }
    }
}

/// Each agent independently replaces its action by a uniform one with
/// probability `epsilon`.
pub fn epsilon_greedy<R: Rng>(a: &[usize], n_actions: &[usize], epsilon: f64, rng: &mut R) -> Result<JointAction> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if a.len() != n_actions.len() {
        return Err(Error::DimensionMismatch {
            expected: n_actions.len(),
            actual: a.len(),
        });
    }
    Ok(a.iter()
        .zip(n_actions)
        .map(|(&x, &n)| {
            if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..n)
            } else {
                x
            }
        })
        .collect())
}
