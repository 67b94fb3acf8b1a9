//! Coordination graphs over cells.
//!
//! Edges connect cells whose users interfere with each other. Coupling is
//! measured in the simulator as mean received interference power, and the
//! four supported topologies are derived from that matrix.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netsim::{Deployment, LinkGeometry};
use crate::rng::{self, Stream};
use crate::{Error, Result, DEFAULT_TILT};

pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Sparse,
    Dense,
    Tree,
    Complete,
    /// Graph given explicitly rather than derived from coupling.
    Custom,
}

impl Topology {
    pub const DERIVED: [Topology; 4] = [Topology::Tree, Topology::Sparse, Topology::Dense, Topology::Complete];
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Topology::Sparse => "sparse",
            Topology::Dense => "dense",
            Topology::Tree => "tree",
            Topology::Complete => "complete",
            Topology::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Topology::Sparse),
            "dense" => Ok(Topology::Dense),
            "tree" => Ok(Topology::Tree),
            "complete" => Ok(Topology::Complete),
            "custom" => Ok(Topology::Custom),
            other => Err(Error::InvalidArgument(format!("unknown topology '{other}'"))),
        }
    }
}

/// Symmetric, zero-diagonal matrix of nonnegative coupling scores (watts).
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CouplingMatrix {
    /// Symmetrizes `raw` with `max(v_ij, v_ji)` and clears the diagonal.
    pub fn from_raw(n: usize, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: raw.len(),
            });
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("coupling values must be finite and nonnegative".into()));
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    values[i * n + j] = raw[i * n + j].max(raw[j * n + i]);
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    fn strongest(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.get(i, j)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingParams {
    pub reference_drops: usize,
    pub reference_tilt: usize,
    /// Users per reference drop; `None` uses the deployment default.
    pub n_users: Option<usize>,
}

impl Default for CouplingParams {
    fn default() -> Self {
        Self {
            reference_drops: 3,
            reference_tilt: DEFAULT_TILT,
            n_users: None,
        }
    }
}

/// `values[i][j]` is the mean power received from cell `j` by the users of
/// cell `i`, pooled over the reference drops, then symmetrized.
pub fn coupling_matrix(d: &Deployment, params: &CouplingParams, seed: u64) -> Result<CouplingMatrix> {
    if params.reference_drops == 0 {
        return Err(Error::InvalidArgument("reference_drops must be at least 1".into()));
    }
    let n = d.n_cells();
    let n_users = params.n_users.unwrap_or(d.params.n_users);
    let mut seeds = rng::stream(seed, Stream::Coupling);
    let mut acc = vec![0.0; n * n];
    let mut count = vec![0usize; n];
    for _ in 0..params.reference_drops {
        let users = d.drop_users(n_users, seeds.gen::<u64>() >> 1)?;
        let snap = LinkGeometry::new(d, &users).snapshot(&vec![params.reference_tilt; n])?;
        for (u, &i) in snap.association.iter().enumerate() {
            count[i] += 1;
            for j in 0..n {
                if j != i {
                    acc[i * n + j] += snap.received_power_w(j, u);
                }
            }
        }
    }
    for i in 0..n {
        if count[i] > 0 {
            for j in 0..n {
                acc[i * n + j] /= count[i] as f64;
            }
        }
    }
    CouplingMatrix::from_raw(n, acc)
}

/// Relative edge thresholds, in dB below each node's strongest coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    pub sparse_window_db: f64,
    pub dense_window_db: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            sparse_window_db: 20.0,
            dense_window_db: 30.0,
        }
    }
}

/// Undirected graph with canonical `(i, j)`, `i < j` edges in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationGraph {
    n_nodes: usize,
    topology: Topology,
    edges: Vec<(usize, usize)>,
    // per node: (neighbor, edge index), sorted by neighbor
    incident: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    version: u32,
    n_nodes: usize,
    topology: Topology,
    edges: Vec<[usize; 2]>,
}

impl CoordinationGraph {
    /// Canonicalizes and sorts `edges`; rejects self-loops, duplicates and
    /// out-of-range endpoints.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>, topology: Topology) -> Result<Self> {
        let mut canon: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            for v in [a, b] {
                if v >= n_nodes {
                    return Err(Error::UnknownNode { node: v, n_nodes });
                }
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if canon.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate edge".into()));
        }
        let mut incident = vec![Vec::new(); n_nodes];
        for (e, &(i, j)) in canon.iter().enumerate() {
            incident[i].push((j, e));
            incident[j].push((i, e));
        }
        for list in &mut incident {
            list.sort_unstable();
        }
        Ok(Self {
            n_nodes,
            topology,
            edges: canon,
            incident,
        })
    }

    pub fn complete(n_nodes: usize) -> Self {
        let edges = (0..n_nodes).flat_map(|i| (i + 1..n_nodes).map(move |j| (i, j)));
        Self::new(n_nodes, edges.collect::<Vec<_>>(), Topology::Complete).expect("complete graph is valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `(neighbor, edge index)` pairs of node `i`.
    pub fn incident(&self, i: usize) -> &[(usize, usize)] {
        &self.incident[i]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.incident[i].iter().map(|&(j, _)| j)
    }

    /// |𝒩(i)|.
    pub fn neighbor_count(&self, i: usize) -> Result<usize> {
        if i >= self.n_nodes {
            return Err(Error::UnknownNode {
                node: i,
                n_nodes: self.n_nodes,
            });
        }
        Ok(self.incident[i].len())
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.incident.iter().map(Vec::len).collect()
    }

    /// Index of the edge joining `i` and `j`, in either orientation.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n_nodes];
        let mut out = Vec::new();
        for start in 0..self.n_nodes {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for w in self.neighbors(v) {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    pub fn is_forest(&self) -> bool {
        self.n_edges() + self.components().len() == self.n_nodes
    }

    /// Content hash of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        crate::experiment::sha256_hex(self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            version: GRAPH_VERSION,
            n_nodes: self.n_nodes,
            topology: self.topology,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
        };
        serde_json::to_string(&file).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s)?;
        if file.version != GRAPH_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: GRAPH_VERSION,
            });
        }
        Self::new(file.n_nodes, file.edges.into_iter().map(|[i, j]| (i, j)), file.topology)
    }
}

/// Result of building a topology; `components.len() > 1` flags a
/// disconnected graph, on which algorithms run per component.
#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graph: CoordinationGraph,
    pub components: Vec<Vec<usize>>,
}

impl GraphBuild {
    pub fn disconnected(&self) -> bool {
        self.components.len() > 1
    }
}

fn windowed_edges(c: &CouplingMatrix, window_db: f64) -> Vec<(usize, usize)> {
    let factor = 10f64.powf(-window_db / 10.0);
    let floors: Vec<f64> = (0..c.n()).map(|i| c.strongest(i) * factor).collect();
    let mut edges = Vec::new();
    for i in 0..c.n() {
        for j in i + 1..c.n() {
            let v = c.get(i, j);
            if v > 0.0 && (v >= floors[i] || v >= floors[j]) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Kruskal on `edges` with weight `1/coupling`: strongest couplings first,
/// ties in lexicographic edge order. Returns a spanning forest.
fn max_coupling_spanning_forest(c: &CouplingMatrix, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = edges.to_vec();
    order.sort_by(|a, b| c.get(b.0, b.1).total_cmp(&c.get(a.0, a.1)).then(a.cmp(b)));
    let mut parent: Vec<usize> = (0..c.n()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut out = Vec::new();
    for (i, j) in order {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
            out.push((i, j));
        }
    }
    out
}

pub fn build_graph(c: &CouplingMatrix, topology: Topology, params: &GraphParams) -> Result<GraphBuild> {
    if params.dense_window_db < params.sparse_window_db {
        return Err(Error::InvalidArgument(
            "dense window must be at least as wide as the sparse window".into(),
        ));
    }
    let n = c.n();
    let graph = match topology {
        Topology::Complete => CoordinationGraph::complete(n),
        Topology::Sparse => CoordinationGraph::new(n, windowed_edges(c, params.sparse_window_db), topology)?,
        Topology::Dense => CoordinationGraph::new(n, windowed_edges(c, params.dense_window_db), topology)?,
        Topology::Tree => {
            let sparse = windowed_edges(c, params.sparse_window_db);
            CoordinationGraph::new(n, max_coupling_spanning_forest(c, &sparse), topology)?
        }
        Topology::Custom => {
            return Err(Error::InvalidArgument("custom graphs are not derived from coupling".into()))
        }
    };
    let components = graph.components();
    Ok(GraphBuild { graph, components })
}

/// Uniform random labelled tree (random attachment order).
pub fn random_tree<R: Rng>(n: usize, rng: &mut R) -> CoordinationGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let edges: Vec<(usize, usize)> = (1..n).map(|k| (order[k], order[rng.gen_range(0..k)])).collect();
    CoordinationGraph::new(n, edges, Topology::Custom).expect("tree is valid")
}

/// Random connected graph with exactly `m` edges (`n-1 ≤ m ≤ n(n-1)/2`).
pub fn random_connected<R: Rng>(n: usize, m: usize, rng: &mut R) -> Result<CoordinationGraph> {
    let max = n * n.saturating_sub(1) / 2;
    if n == 0 || m + 1 < n || m > max {
        return Err(Error::InvalidArgument(format!("cannot build a connected graph with {n} nodes and {m} edges")));
    }
    let tree = random_tree(n, rng);
    let mut edges: Vec<(usize, usize)> = tree.edges().to_vec();
    let mut rest: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|e| !edges.contains(e))
        .collect();
    rest.shuffle(rng);
    edges.extend(rest.into_iter().take(m - edges.len()));
    CoordinationGraph::new(n, edges, Topology::Custom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{BaseStation, Cell, DeploymentParams};
    use proptest::prelude::*;

    fn nine_station() -> Deployment {
        Deployment::generate(9, 42, &DeploymentParams::default()).unwrap()
    }

    fn small_coupling() -> CouplingParams {
        CouplingParams {
            n_users: Some(600),
            ..Default::default()
        }
    }

    #[test]
    fn complete_27_has_351_edges() {
        let g = CoordinationGraph::complete(27);
        assert_eq!(g.n_edges(), 351);
        for i in 0..27 {
            assert_eq!(g.neighbor_count(i).unwrap(), 26);
        }
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(CoordinationGraph::new(3, [(1, 1)], Topology::Custom).is_err());
        assert!(CoordinationGraph::new(3, [(0, 1), (1, 0)], Topology::Custom).is_err());
        assert!(CoordinationGraph::new(3, [(0, 3)], Topology::Custom).is_err());
        let g = CoordinationGraph::new(3, [(2, 0)], Topology::Custom).unwrap();
        assert_eq!(g.edges(), &[(0, 2)]);
        assert_eq!(g.edge_index(2, 0), g.edge_index(0, 2));
        assert!(matches!(g.neighbor_count(3), Err(Error::UnknownNode { .. })));
    }

    #[test]
    fn leaf_has_one_neighbor() {
        let g = CoordinationGraph::new(3, [(0, 1), (1, 2)], Topology::Custom).unwrap();
        assert_eq!(g.neighbor_count(0).unwrap(), 1);
        assert_eq!(g.neighbor_count(1).unwrap(), 2);
    }

    #[test]
    fn coupling_is_symmetric_with_zero_diagonal() {
        let d = Deployment::generate(2, 1, &DeploymentParams::default()).unwrap();
        let c = coupling_matrix(&d, &small_coupling(), 4).unwrap();
        for i in 0..c.n() {
            assert_eq!(c.get(i, i), 0.0);
            for j in 0..c.n() {
                assert_eq!(c.get(i, j), c.get(j, i));
                assert!(c.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn distant_stations_barely_couple() {
        let params = DeploymentParams::default();
        let stations = vec![
            BaseStation { position: [-50_000.0, 0.0] },
            BaseStation { position: [50_000.0, 0.0] },
        ];
        let d = Deployment::with_sectorized_stations(stations, 52_000.0, 0, params).unwrap();
        let c = coupling_matrix(&d, &small_coupling(), 1).unwrap();
        let co_sited = c.get(0, 1);
        for i in 0..3 {
            for j in 3..6 {
                assert!(c.get(i, j) < 1e-3 * co_sited, "{i}-{j}");
            }
        }
    }

    #[test]
    fn co_sited_beats_distant_back_facing() {
        // cell 3 sits 1.5 km west of station 0 and points further west
        let params = DeploymentParams {
            cells_per_station: 3,
            ..Default::default()
        };
        let stations = vec![
            BaseStation { position: [0.0, 0.0] },
            BaseStation { position: [-1500.0, 0.0] },
        ];
        let cells = vec![
            Cell { id: 0, station: 0, azimuth_deg: 0.0 },
            Cell { id: 1, station: 0, azimuth_deg: 120.0 },
            Cell { id: 2, station: 0, azimuth_deg: 240.0 },
            Cell { id: 3, station: 1, azimuth_deg: 180.0 },
        ];
        let d = Deployment::from_parts(stations, cells, 2500.0, 0, params).unwrap();
        let c = coupling_matrix(&d, &small_coupling(), 2).unwrap();
        assert!(c.get(0, 1) > c.get(0, 3));
        assert!(c.get(0, 2) > c.get(0, 3));
    }

    #[test]
    fn topology_inclusions_hold() {
        let d = nine_station();
        let c = coupling_matrix(&d, &small_coupling(), 42).unwrap();
        let p = GraphParams::default();
        let sparse = build_graph(&c, Topology::Sparse, &p).unwrap().graph;
        let dense = build_graph(&c, Topology::Dense, &p).unwrap().graph;
        let tree = build_graph(&c, Topology::Tree, &p).unwrap();
        let complete = build_graph(&c, Topology::Complete, &p).unwrap().graph;
        let subset = |a: &CoordinationGraph, b: &CoordinationGraph| a.edges().iter().all(|e| b.edges().contains(e));
        assert!(subset(&sparse, &dense));
        assert!(subset(&dense, &complete));
        assert!(subset(&tree.graph, &sparse));
        assert!(tree.graph.is_forest());
        assert_eq!(tree.graph.n_edges(), 27 - tree.components.len());
    }

    #[test]
    fn sparse_graph_links_co_sited_cells() {
        let d = nine_station();
        let c = coupling_matrix(&d, &small_coupling(), 42).unwrap();
        let b = build_graph(&c, Topology::Sparse, &GraphParams::default()).unwrap();
        // every cell has at least one neighbor and the co-sited triples are linked
        for i in 0..27 {
            assert!(b.graph.neighbor_count(i).unwrap() >= 1);
        }
        let cosited = (0..9)
            .filter(|s| {
                let k = 3 * s;
                b.graph.edge_index(k, k + 1).is_some()
                    || b.graph.edge_index(k, k + 2).is_some()
                    || b.graph.edge_index(k + 1, k + 2).is_some()
            })
            .count();
        assert!(cosited >= 7, "only {cosited} stations have a co-sited edge");
        let cross = b.graph.edges().iter().filter(|(i, j)| i / 3 != j / 3).count();
        assert!(cross > 0);
    }

    #[test]
    fn neighbor_count_matches_edge_scan() {
        let d = nine_station();
        let c = coupling_matrix(&d, &small_coupling(), 42).unwrap();
        let g = build_graph(&c, Topology::Sparse, &GraphParams::default()).unwrap().graph;
        for i in 0..27 {
            let scan = g.edges().iter().filter(|&&(a, b)| a == i || b == i).count();
            assert_eq!(g.neighbor_count(i).unwrap(), scan);
        }
    }

    #[test]
    fn json_round_trip() {
        let g = CoordinationGraph::new(4, [(0, 1), (3, 1), (2, 3)], Topology::Sparse).unwrap();
        let back = CoordinationGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.content_hash(), g.content_hash());
    }

    #[test]
    fn random_generators_respect_shape() {
        let mut r = rng::seeded(3);
        for n in 1..9 {
            let t = random_tree(n, &mut r);
            assert_eq!(t.n_edges(), n - 1);
            assert!(t.is_connected());
        }
        let g = random_connected(6, 9, &mut r).unwrap();
        assert_eq!(g.n_edges(), 9);
        assert!(g.is_connected());
        assert!(random_connected(6, 4, &mut r).is_err());
    }

    proptest! {
        #[test]
        fn tree_is_scale_invariant(vals in prop::collection::vec(0.01f64..10.0, 36), k in 0.001f64..1000.0) {
            let c = CouplingMatrix::from_raw(6, vals).unwrap();
            let p = GraphParams { sparse_window_db: 60.0, dense_window_db: 60.0 };
            let a = build_graph(&c, Topology::Tree, &p).unwrap().graph;
            let b = build_graph(&c.scaled(k), Topology::Tree, &p).unwrap().graph;
            prop_assert_eq!(a.edges(), b.edges());
            prop_assert_eq!(a.n_edges(), 5);
        }
    }
}
