use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{mean_std, Environment};
use crate::graph::CoordinationGraph;
use crate::learner::{edge_reward, Normalizer};
use crate::maxplus::{self, Diagnostics, EdgePayoffSet, PayoffMatrix};
use crate::netsim::LinkGeometry;
use crate::rng::{self, Stream};
use crate::{Error, JointAction, Result, DEFAULT_TILT, N_TILTS};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub tilts: JointAction,
    /// Mean standardized per-cell reward of `tilts` on the swept drop.
    pub value: f64,
    /// Per-edge tables (coordinated sweep only).
    pub tables: Option<Vec<PayoffMatrix>>,
    pub diagnostics: Option<Diagnostics>,
}

/// Cell-by-cell greedy sweep of an arbitrary objective. Starts from the
/// default tilt everywhere; each pass visits the cells in a fresh random
/// order and keeps the first tilt reaching the maximum.
pub fn sweep_objective<R: Rng>(
    n_cells: usize,
    passes: usize,
    rng: &mut R,
    objective: &mut dyn FnMut(&[usize]) -> Result<f64>,
) -> Result<(JointAction, f64)> {
    if passes == 0 {
        return Err(Error::InvalidArgument("sweep needs at least one pass".into()));
    }
    let mut tilts = vec![DEFAULT_TILT; n_cells];
    let mut value = objective(&tilts)?;
    let mut order: Vec<usize> = (0..n_cells).collect();
    for _ in 0..passes {
        order.shuffle(rng);
        for &c in &order {
            let mut best = (0, f64::NEG_INFINITY);
            for t in 0..N_TILTS {
                tilts[c] = t;
                let v = objective(&tilts)?;
                if v > best.1 {
                    best = (t, v);
                }
            }
            tilts[c] = best.0;
            value = best.1;
        }
    }
    Ok((tilts, value))
}

/// Greedy per-cell sweep on one fixed user drop.
pub fn sweep(geometry: &LinkGeometry, normalizer: &Normalizer, passes: usize, seed: u64) -> Result<SweepResult> {
    let mut rng = rng::stream(seed, Stream::Sweep);
    let mut objective = |t: &[usize]| Ok(normalizer.standardized_mean(&geometry.snapshot(t)?.cell_rewards));
    let (tilts, value) = sweep_objective(geometry.n_cells(), passes, &mut rng, &mut objective)?;
    Ok(SweepResult {
        tilts,
        value,
        tables: None,
        diagnostics: None,
    })
}

/// Fills one table per edge by sweeping both endpoints with every other cell
/// at the default tilt, then runs max-plus on the tables. Cells without
/// edges keep the default tilt.
pub fn coordinated_sweep(
    geometry: &LinkGeometry,
    normalizer: &Normalizer,
    g: &CoordinationGraph,
    max_iters: usize,
) -> Result<SweepResult> {
    let n = geometry.n_cells();
    if g.n_nodes() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: g.n_nodes(),
        });
    }
    let degrees = g.degrees();
    let base = vec![DEFAULT_TILT; n];
    let mut pathgain = geometry.pathgain(&base)?;
    let mut tables = Vec::with_capacity(g.n_edges());
    for &(i, j) in g.edges() {
        let mut m = PayoffMatrix::zeros(N_TILTS, N_TILTS);
        for ai in 0..N_TILTS {
            for aj in 0..N_TILTS {
                let snap = geometry.snapshot_with_rows(&mut pathgain, &[(i, ai), (j, aj)]);
                let r: Vec<f64> = snap.cell_rewards.iter().map(|&x| normalizer.standardize(x)).collect();
                m.set(ai, aj, edge_reward(&r, &degrees, i, j));
            }
        }
        geometry.snapshot_with_rows(&mut pathgain, &[(i, DEFAULT_TILT), (j, DEFAULT_TILT)]);
        tables.push(m);
    }
    let p = EdgePayoffSet::new(g, vec![N_TILTS; n], tables)?;
    let (mut tilts, diagnostics) = maxplus::select_actions(&p, g, max_iters)?;
    // cells without edges were held at the default throughout
    for (t, &d) in tilts.iter_mut().zip(&degrees) {
        if d == 0 {
            *t = DEFAULT_TILT;
        }
    }
    let value = normalizer.standardized_mean(&geometry.snapshot(&tilts)?.cell_rewards);
    Ok(SweepResult {
        tilts,
        value,
        tables: Some(p.matrices().to_vec()),
        diagnostics: Some(diagnostics),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomBaseline {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl RandomBaseline {
    /// Standard deviation of a mean over `n` evaluation drops.
    pub fn std_of_mean(&self, n: usize) -> f64 {
        self.std / (n as f64).sqrt()
    }
}

/// Uniform random joint tilts scored on the evaluation drops in rotation.
pub fn random_policy_baseline<E: Environment + ?Sized>(env: &E, n_configs: usize, seed: u64) -> Result<RandomBaseline> {
    if n_configs < 2 {
        return Err(Error::InvalidArgument("random baseline needs at least two configurations".into()));
    }
    if env.n_eval_drops() == 0 {
        return Err(Error::InvalidArgument("environment has no evaluation drops".into()));
    }
    let mut rng = rng::stream(seed, Stream::Baseline);
    let rewards = (0..n_configs)
        .map(|k| {
            let tilts: Vec<usize> = (0..env.n_cells()).map(|_| rng.gen_range(0..env.n_actions())).collect();
            env.eval_reward(k % env.n_eval_drops(), &tilts)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&rewards);
    Ok(RandomBaseline { rewards, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::NetworkEnv;
    use crate::graph::{build_graph, coupling_matrix, CouplingParams, GraphParams, Topology};
    use crate::learner::calibrate;
    use crate::netsim::{Deployment, DeploymentParams};
    use crate::rng::seeded;

    #[test]
    fn one_cell_sweep_is_exhaustive() {
        let f = |t: &[usize]| Ok(-((t[0] as f64) - 13.0).powi(2));
        let (t, v) = sweep_objective(1, 1, &mut seeded(0), &mut { f }).unwrap();
        assert_eq!((t, v), (vec![13], 0.0));
    }

    #[test]
    fn indifferent_cell_takes_lowest_tilt() {
        let f = |t: &[usize]| Ok(-((t[0] as f64) - 4.0).abs());
        let (t, _) = sweep_objective(2, 1, &mut seeded(1), &mut { f }).unwrap();
        assert_eq!(t, vec![4, 0]);
    }

    #[test]
    fn two_cell_sweep_gap_against_exhaustive() {
        // payoff rewards matching tilts, with a better but isolated optimum at (3, 3)
        let obj = |t: &[usize]| -> f64 {
            if t[0] == 3 && t[1] == 3 {
                10.0
            } else if t[0] == t[1] {
                5.0
            } else {
                -((t[0] as f64) - (t[1] as f64)).abs()
            }
        };
        let mut best = f64::NEG_INFINITY;
        for a in 0..16 {
            for b in 0..16 {
                best = best.max(obj(&[a, b]));
            }
        }
        let (_, v) = sweep_objective(2, 1, &mut seeded(2), &mut |t| Ok(obj(t))).unwrap();
        assert_eq!(best, 10.0);
        assert_eq!(v, 5.0, "one pass from (8, 8) stays on the diagonal");
    }

    #[test]
    fn zero_passes_rejected() {
        assert!(sweep_objective(1, 0, &mut seeded(0), &mut |_| Ok(0.0)).is_err());
    }

    fn small_env() -> NetworkEnv {
        let params = DeploymentParams {
            n_users: 300,
            ..Default::default()
        };
        let d = Deployment::generate(2, 8, &params).unwrap();
        let norm = calibrate(&d, 100, 2).unwrap();
        NetworkEnv::new(d, norm, 0, 3).unwrap()
    }

    #[test]
    fn coordinated_sweep_beats_default_tilts() {
        let env = small_env();
        let c = coupling_matrix(env.deployment(), &CouplingParams::default(), 1).unwrap();
        let g = build_graph(&c, Topology::Sparse, &GraphParams::default()).unwrap().graph;
        let geo = env.eval_geometry(0);
        let r = coordinated_sweep(geo, env.normalizer(), &g, 40).unwrap();
        let default = env.eval_reward(0, &[DEFAULT_TILT; 6]).unwrap();
        assert!(r.value >= default, "{} < {}", r.value, default);
        assert_eq!(r.tables.unwrap().len(), g.n_edges());
    }

    #[test]
    fn single_edge_coordinated_sweep_is_pairwise_optimum() {
        let env = small_env();
        let g = CoordinationGraph::new(6, [(0, 4)], Topology::Custom).unwrap();
        let geo = env.eval_geometry(1);
        let r = coordinated_sweep(geo, env.normalizer(), &g, 40).unwrap();
        let deg = g.degrees();
        let mut best = (vec![], f64::NEG_INFINITY);
        for a in 0..16 {
            for b in 0..16 {
                let mut t = vec![DEFAULT_TILT; 6];
                t[0] = a;
                t[4] = b;
                let s = geo.snapshot(&t).unwrap();
                let z: Vec<f64> = s.cell_rewards.iter().map(|&x| env.normalizer().standardize(x)).collect();
                let v = edge_reward(&z, &deg, 0, 4);
                if v > best.1 {
                    best = (t, v);
                }
            }
        }
        assert_eq!(r.tilts, best.0);
    }

    #[test]
    fn constant_tables_give_smallest_joint_action() {
        let g = CoordinationGraph::new(3, [(0, 1), (1, 2)], Topology::Custom).unwrap();
        let p = EdgePayoffSet::new(&g, vec![16; 3], vec![PayoffMatrix::zeros(16, 16); 2]).unwrap();
        assert_eq!(maxplus::select_actions(&p, &g, 40).unwrap().0, vec![0, 0, 0]);
    }

    #[test]
    fn random_baseline_properties() {
        let env = small_env();
        let a = random_policy_baseline(&env, 200, 5).unwrap();
        let b = random_policy_baseline(&env, 200, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.std > 0.0);
        assert!(random_policy_baseline(&env, 1, 5).is_err());
    }

    #[test]
    fn sweep_on_drop_improves_over_default() {
        let env = small_env();
        let r = sweep(env.eval_geometry(0), env.normalizer(), 1, 3).unwrap();
        assert!(r.value >= env.eval_reward(0, &[DEFAULT_TILT; 6]).unwrap());
        assert!(r.tilts.iter().all(|&t| t < N_TILTS));
    }
}
