use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::CoordinationGraph;
use crate::maxplus::{self, Diagnostics, EdgePayoffSet, PayoffMatrix};
use crate::neural::{AdamState, Mlp, NetworkCheckpoint};
use crate::{Error, JointAction, Observation, Result, N_TILTS, OBS_DIM};

pub const EDGE_INPUT_DIM: usize = 2 * OBS_DIM;
pub const EDGE_OUTPUT_DIM: usize = N_TILTS * N_TILTS;

/// Factor applied to the He-uniform weights of the linear output layer, so
/// untried actions start near the standardized reward mean.
pub const OUTPUT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    /// One network for every edge.
    Shared,
    /// One network per edge.
    PerEdge,
}

/// Pairwise Q-functions on the edges of a coordination graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeQ {
    sharing: Sharing,
    n_edges: usize,
    online: Vec<Mlp>,
    target: Vec<Mlp>,
    optim: Vec<AdamState>,
}

pub fn edge_dims(hidden: &[usize]) -> Vec<usize> {
    let mut d = vec![EDGE_INPUT_DIM];
    d.extend_from_slice(hidden);
    d.push(EDGE_OUTPUT_DIM);
    d
}

pub fn edge_input(obs: &[Observation], i: usize, j: usize) -> [f64; EDGE_INPUT_DIM] {
    let mut x = [0.0; EDGE_INPUT_DIM];
    x[..OBS_DIM].copy_from_slice(&obs[i]);
    x[OBS_DIM..].copy_from_slice(&obs[j]);
    x
}

impl EdgeQ {
    pub fn new<R: Rng>(sharing: Sharing, n_edges: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Result<Self> {
        let dims = edge_dims(hidden);
        let n_nets = match sharing {
            Sharing::Shared => 1,
            Sharing::PerEdge => n_edges,
        };
        let online = (0..n_nets)
            .map(|_| Mlp::he_uniform(&dims, rng).map(|m| m.scale_output_layer(OUTPUT_INIT_SCALE)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_networks(sharing, n_edges, online, lr))
    }

    fn from_networks(sharing: Sharing, n_edges: usize, online: Vec<Mlp>, lr: f64) -> Self {
        let target = online.iter().map(Mlp::clone_into_target).collect();
        let optim = online.iter().map(|n| AdamState::new(n.n_params(), lr)).collect();
        Self {
            sharing,
            n_edges,
            online,
            target,
            optim,
        }
    }

    /// Zero-weight networks (every payoff is 0).
    pub fn zeros(sharing: Sharing, n_edges: usize, hidden: &[usize], lr: f64) -> Result<Self> {
        let n_nets = if sharing == Sharing::Shared { 1 } else { n_edges };
        let online = (0..n_nets).map(|_| Mlp::zeros(&edge_dims(hidden))).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_networks(sharing, n_edges, online, lr))
    }

    /// A shared-mode copy bound to a graph with `n_edges` edges.
    pub fn rebind(&self, n_edges: usize) -> Result<Self> {
        if self.sharing != Sharing::Shared {
            return Err(Error::ArtifactMismatch("per-edge networks are tied to their graph".into()));
        }
        Ok(Self {
            n_edges,
            ..self.clone()
        })
    }

    pub fn sharing(&self) -> Sharing {
        self.sharing
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn n_networks(&self) -> usize {
        self.online.len()
    }

    pub fn net_index(&self, e: usize) -> usize {
        match self.sharing {
            Sharing::Shared => 0,
            Sharing::PerEdge => e,
        }
    }

    pub fn online(&self, e: usize) -> &Mlp {
        &self.online[self.net_index(e)]
    }

    pub fn target(&self, e: usize) -> &Mlp {
        &self.target[self.net_index(e)]
    }

    pub fn networks(&self) -> &[Mlp] {
        &self.online
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Mlp], &mut [AdamState]) {
        (&mut self.online, &mut self.optim)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.iter().map(Mlp::clone_into_target).collect();
    }

    fn check_graph(&self, g: &CoordinationGraph) -> Result<()> {
        if g.n_edges() != self.n_edges {
            return Err(Error::DimensionMismatch {
                expected: self.n_edges,
                actual: g.n_edges(),
            });
        }
        Ok(())
    }

    /// One 16×16 payoff matrix per canonical edge, rows indexed by the
    /// lower-numbered cell's tilt.
    pub fn edge_payoffs(&self, obs: &[Observation], g: &CoordinationGraph) -> Result<EdgePayoffSet> {
        self.check_graph(g)?;
        if obs.len() != g.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: g.n_nodes(),
                actual: obs.len(),
            });
        }
        let matrices = g
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| {
                let out = self.online(e).forward(&edge_input(obs, i, j))?;
                PayoffMatrix::new(N_TILTS, N_TILTS, out)
            })
            .collect::<Result<Vec<_>>>()?;
        EdgePayoffSet::new(g, vec![N_TILTS; g.n_nodes()], matrices)
    }

    /// Greedy joint action from max-plus plus its ε-perturbed version.
    pub fn act<R: Rng>(
        &self,
        obs: &[Observation],
        g: &CoordinationGraph,
        epsilon: f64,
        max_iters: usize,
        rng: &mut R,
    ) -> Result<Decision> {
        let p = self.edge_payoffs(obs, g)?;
        let (greedy, diagnostics) = maxplus::select_actions(&p, g, max_iters)?;
        let action = maxplus::epsilon_greedy(&greedy, p.n_actions(), epsilon, rng)?;
        Ok(Decision {
            greedy,
            action,
            diagnostics,
        })
    }

    pub fn checkpoint(&self) -> EdgeQCheckpoint {
        EdgeQCheckpoint {
            sharing: self.sharing,
            n_edges: self.n_edges,
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

#[derive(Debug, Clone)]
pub struct Decision {
    pub greedy: JointAction,
    pub action: JointAction,
    pub diagnostics: Diagnostics,
}

/// Online and target parameters plus optimizer state of every network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeQCheckpoint {
    pub sharing: Sharing,
    pub n_edges: usize,
    pub networks: Vec<NetworkCheckpoint>,
    pub targets: Vec<Vec<f64>>,
}

impl EdgeQCheckpoint {
    pub fn restore(&self) -> Result<EdgeQ> {
        let expected = if self.sharing == Sharing::Shared { 1 } else { self.n_edges };
        if self.networks.len() != expected || self.targets.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.networks.len(),
            });
        }
        let mut online = Vec::new();
        let mut optim = Vec::new();
        let mut target = Vec::new();
        for (c, t) in self.networks.iter().zip(&self.targets) {
            if c.dims.first() != Some(&EDGE_INPUT_DIM) || c.dims.last() != Some(&EDGE_OUTPUT_DIM) {
                return Err(Error::ArtifactMismatch(format!("edge network dims {:?}", c.dims)));
            }
            let (n, o) = c.restore()?;
            target.push(Mlp::from_params(&c.dims, t.clone())?);
            online.push(n);
            optim.push(o);
        }
        Ok(EdgeQ {
            sharing: self.sharing,
            n_edges: self.n_edges,
            online,
            target,
            optim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_tree, Topology};
    use crate::rng::seeded;

    fn obs(n: usize, seed: u64) -> Vec<Observation> {
        let mut r = seeded(seed);
        (0..n).map(|_| [(); OBS_DIM].map(|_| r.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn zero_networks_give_zero_payoffs() {
        let g = CoordinationGraph::complete(4);
        let q = EdgeQ::zeros(Sharing::Shared, g.n_edges(), &[32, 32], 1e-4).unwrap();
        let p = q.edge_payoffs(&obs(4, 1), &g).unwrap();
        assert!(p.matrices().iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn payoff_entry_matches_scalar_query() {
        let g = CoordinationGraph::new(5, [(0, 3), (1, 2), (2, 4)], Topology::Custom).unwrap();
        let q = EdgeQ::new(Sharing::PerEdge, 3, &[32, 32], 1e-4, &mut seeded(2)).unwrap();
        let o = obs(5, 3);
        let p = q.edge_payoffs(&o, &g).unwrap();
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            let x: Vec<f64> = o[i].iter().chain(&o[j]).copied().collect();
            for (ai, aj) in [(0, 0), (3, 11), (15, 2), (15, 15)] {
                let (v, _) = q.online(e).forward_component(&x, ai * 16 + aj).unwrap();
                assert_eq!(p.matrices()[e].get(ai, aj), v);
            }
        }
    }

    #[test]
    fn edge_matrices_do_not_depend_on_edge_order() {
        let o = obs(4, 4);
        let q = EdgeQ::new(Sharing::Shared, 2, &[32, 32], 1e-4, &mut seeded(5)).unwrap();
        let a = CoordinationGraph::new(4, [(0, 1), (2, 3)], Topology::Custom).unwrap();
        let b = CoordinationGraph::new(4, [(2, 3), (0, 1)], Topology::Custom).unwrap();
        assert_eq!(q.edge_payoffs(&o, &a).unwrap(), q.edge_payoffs(&o, &b).unwrap());
    }

    #[test]
    fn single_edge_greedy_is_matrix_argmax() {
        let g = CoordinationGraph::new(2, [(0, 1)], Topology::Custom).unwrap();
        let q = EdgeQ::new(Sharing::Shared, 1, &[32, 32], 1e-4, &mut seeded(6)).unwrap();
        let o = obs(2, 7);
        let d = q.act(&o, &g, 0.0, 40, &mut seeded(0)).unwrap();
        let out = q.online(0).forward(&edge_input(&o, 0, 1)).unwrap();
        let best = (0..256).fold(0, |b, k| if out[k] > out[b] { k } else { b });
        assert_eq!(d.greedy, vec![best / 16, best % 16]);
        assert_eq!(d.action, d.greedy);
    }

    #[test]
    fn tree_greedy_matches_brute_force() {
        for seed in 0..5 {
            let g = random_tree(4, &mut seeded(seed));
            let q = EdgeQ::new(Sharing::Shared, g.n_edges(), &[32, 32], 1e-4, &mut seeded(seed + 10)).unwrap();
            let o = obs(4, seed + 20);
            let d = q.act(&o, &g, 0.0, 40, &mut seeded(0)).unwrap();
            let p = q.edge_payoffs(&o, &g).unwrap();
            let (_, v) = maxplus::brute_force_argmax(&p, &g).unwrap();
            assert!((maxplus::global_value(&p, &g, &d.greedy).unwrap() - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn full_exploration_is_uniform_regardless_of_networks() {
        let g = CoordinationGraph::new(2, [(0, 1)], Topology::Custom).unwrap();
        let q = EdgeQ::new(Sharing::Shared, 1, &[32, 32], 1e-4, &mut seeded(8)).unwrap();
        let o = obs(2, 9);
        let mut r = seeded(11);
        let mut counts = [0usize; 16];
        for _ in 0..3200 {
            counts[q.act(&o, &g, 1.0, 40, &mut r).unwrap().action[0]] += 1;
        }
        // 200 expected per bin
        assert!(counts.iter().all(|&c| (120..=280).contains(&c)), "{counts:?}");
    }

    #[test]
    fn shared_mode_is_relabeling_equivariant() {
        // swap ids 0 and 2; edge (0,1) becomes (1,2) with the same orientation
        let g = CoordinationGraph::new(3, [(0, 1)], Topology::Custom).unwrap();
        let h = CoordinationGraph::new(3, [(1, 2)], Topology::Custom).unwrap();
        let q = EdgeQ::new(Sharing::Shared, 1, &[32, 32], 1e-4, &mut seeded(3)).unwrap();
        let o = obs(3, 4);
        let o2 = vec![o[2], o[0], o[1]];
        assert_eq!(
            q.edge_payoffs(&o, &g).unwrap().matrices(),
            q.edge_payoffs(&o2, &h).unwrap().matrices()
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let q = EdgeQ::new(Sharing::PerEdge, 2, &[8], 1e-4, &mut seeded(1)).unwrap();
        let c = q.checkpoint();
        let s = serde_json::to_string(&c).unwrap();
        let back: EdgeQCheckpoint = serde_json::from_str(&s).unwrap();
        assert_eq!(back.restore().unwrap(), q);
    }

    #[test]
    fn graph_size_mismatch_is_rejected() {
        let q = EdgeQ::zeros(Sharing::Shared, 3, &[4], 1e-4).unwrap();
        let g = CoordinationGraph::complete(2);
        assert!(q.edge_payoffs(&obs(2, 0), &g).is_err());
    }
}
