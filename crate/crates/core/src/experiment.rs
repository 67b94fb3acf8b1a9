//! Experiment configuration, artifacts and tabular outputs.
//!
//! Every artifact records the hash of the configuration that produced it
//! along with the hashes of the deployment and graph it was trained on, so
//! files from different runs cannot be mixed silently.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, CellQCheckpoint, CellQPolicy, DqnMode};
use crate::env::{evaluate, evaluation_actions, mean_std, Evaluation, NetworkEnv};
use crate::graph::{CoordinationGraph, CouplingParams, GraphParams, Topology};
use crate::learner::{self, EdgeQ, EdgeQCheckpoint, Hyperparams, MetricPoint, Normalizer, Sharing};
use crate::netsim::{Deployment, DeploymentParams, LinkGeometry};
use crate::rng::{self, Stream};
use crate::{Error, JointAction, Observation, Result};

pub const ARTIFACT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    PsCrl,
    Crl,
    Idqn,
    Sdqn,
    Sweep,
    Csweep,
    Random,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::PsCrl,
        Algorithm::Crl,
        Algorithm::Idqn,
        Algorithm::Sdqn,
        Algorithm::Sweep,
        Algorithm::Csweep,
        Algorithm::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PsCrl => "ps-crl",
            Algorithm::Crl => "crl",
            Algorithm::Idqn => "idqn",
            Algorithm::Sdqn => "sdqn",
            Algorithm::Sweep => "sweep",
            Algorithm::Csweep => "csweep",
            Algorithm::Random => "random",
        }
    }

    /// Whether the algorithm produces a learning curve.
    pub fn learns(self) -> bool {
        matches!(self, Algorithm::PsCrl | Algorithm::Crl | Algorithm::Idqn | Algorithm::Sdqn)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub topology: Topology,
    pub seeds: Vec<u64>,
    pub hyperparams: Hyperparams,
    pub deployment: DeploymentParams,
    pub coupling: CouplingParams,
    pub coupling_seed: u64,
    pub graph: GraphParams,
    pub calibration_configs: usize,
    pub calibration_seed: u64,
    pub sweep_passes: usize,
    pub random_configs: usize,
    /// Not part of the hash.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PsCrl,
            topology: Topology::Sparse,
            seeds: vec![0, 1, 2, 3, 4],
            hyperparams: Hyperparams::default(),
            deployment: DeploymentParams::default(),
            coupling: CouplingParams::default(),
            coupling_seed: 0,
            graph: GraphParams::default(),
            calibration_configs: 1000,
            calibration_seed: 0,
            sweep_passes: 1,
            random_configs: 1000,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::InvalidArgument("seeds must be distinct".into()));
        }
        if self.calibration_configs < 2 || self.random_configs < 2 {
            return Err(Error::InvalidArgument("calibration and random baseline need at least two configurations".into()));
        }
        if self.sweep_passes == 0 {
            return Err(Error::InvalidArgument("sweep needs at least one pass".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON with the output directory removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

pub fn deployment_hash(d: &Deployment) -> Result<String> {
    Ok(sha256_hex(d.to_json()?.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyCheckpoint {
    EdgeQ(EdgeQCheckpoint),
    CellQ(CellQCheckpoint),
    FixedTilts { tilts: JointAction },
    Random { seed: u64 },
}

/// A policy as used at evaluation time.
pub enum Policy {
    EdgeQ(EdgeQ),
    CellQ(CellQPolicy),
    Fixed(JointAction),
    Random(ChaCha8Rng),
}

impl Policy {
    pub fn from_checkpoint(c: &PolicyCheckpoint) -> Result<Self> {
        Ok(match c {
            PolicyCheckpoint::EdgeQ(q) => Policy::EdgeQ(q.restore()?),
            PolicyCheckpoint::CellQ(p) => Policy::CellQ(p.restore()?),
            PolicyCheckpoint::FixedTilts { tilts } => Policy::Fixed(tilts.clone()),
            PolicyCheckpoint::Random { seed } => Policy::Random(rng::stream(*seed, Stream::Baseline)),
        })
    }

    /// Greedy joint action for one set of observations.
    pub fn act(&mut self, obs: &[Observation], g: &CoordinationGraph, max_iters: usize) -> Result<JointAction> {
        match self {
            Policy::EdgeQ(q) => Ok(q.act(obs, g, 0.0, max_iters, &mut rng::seeded(0))?.greedy),
            Policy::CellQ(p) => p.greedy(obs),
            Policy::Fixed(t) => {
                if t.len() != obs.len() {
                    return Err(Error::DimensionMismatch {
                        expected: obs.len(),
                        actual: t.len(),
                    });
                }
                Ok(t.clone())
            }
            Policy::Random(r) => Ok((0..obs.len()).map(|_| r.gen_range(0..crate::N_TILTS)).collect()),
        }
    }
}

/// A saved policy together with everything needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub version: u32,
    pub config_hash: String,
    pub deployment_hash: String,
    pub graph_hash: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub step: usize,
    pub max_plus_iters: usize,
    pub normalizer: Normalizer,
    pub policy: PolicyCheckpoint,
}

impl Artifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(s)?;
        if a.version != ARTIFACT_VERSION {
            return Err(Error::Version {
                found: a.version,
                expected: ARTIFACT_VERSION,
            });
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Rejects a deployment or graph other than the ones trained on.
    pub fn check(&self, d: &Deployment, g: &CoordinationGraph) -> Result<()> {
        let dh = deployment_hash(d)?;
        if dh != self.deployment_hash {
            return Err(Error::ArtifactMismatch(format!(
                "deployment hash {dh} differs from checkpoint's {}",
                self.deployment_hash
            )));
        }
        let gh = g.content_hash();
        if gh != self.graph_hash {
            return Err(Error::ArtifactMismatch(format!(
                "graph hash {gh} differs from checkpoint's {}",
                self.graph_hash
            )));
        }
        Ok(())
    }
}

/// Deployment, graph and calibration shared by every seed of an experiment.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub deployment: Deployment,
    pub deployment_hash: String,
    pub graph: CoordinationGraph,
    pub graph_hash: String,
    pub normalizer: Normalizer,
}

impl Prepared {
    pub fn new(config: ExperimentConfig, deployment: Deployment, graph: CoordinationGraph) -> Result<Self> {
        config.validate()?;
        if graph.n_nodes() != deployment.n_cells() {
            return Err(Error::ArtifactMismatch(format!(
                "graph has {} nodes but the deployment has {} cells",
                graph.n_nodes(),
                deployment.n_cells()
            )));
        }
        let normalizer = learner::calibrate(&deployment, config.calibration_configs, config.calibration_seed)?;
        Ok(Self {
            config_hash: config.hash(),
            deployment_hash: deployment_hash(&deployment)?,
            graph_hash: graph.content_hash(),
            config,
            deployment,
            graph,
            normalizer,
        })
    }

    pub fn env(&self, seed: u64, n_eval_drops: usize) -> Result<NetworkEnv> {
        NetworkEnv::new(self.deployment.clone(), self.normalizer.clone(), seed, n_eval_drops)
    }

    fn artifact(&self, seed: u64, step: usize, policy: PolicyCheckpoint) -> Artifact {
        Artifact {
            version: ARTIFACT_VERSION,
            config_hash: self.config_hash.clone(),
            deployment_hash: self.deployment_hash.clone(),
            graph_hash: self.graph_hash.clone(),
            algorithm: self.config.algorithm,
            seed,
            step,
            max_plus_iters: self.config.hyperparams.max_plus_iters,
            normalizer: self.normalizer.clone(),
            policy,
        }
    }

    /// Trains (or runs) the configured algorithm for one seed.
    pub fn run_seed(&self, seed: u64) -> Result<SeedRun> {
        let hp = &self.config.hyperparams;
        let mut env = self.env(seed, hp.eval_drops)?;
        let g = &self.graph;
        let (metrics, final_policy, best) = match self.config.algorithm {
            Algorithm::PsCrl | Algorithm::Crl => {
                let sharing = if self.config.algorithm == Algorithm::PsCrl {
                    Sharing::Shared
                } else {
                    Sharing::PerEdge
                };
                let out = learner::run_training(&mut env, g, sharing, hp, seed)?;
                let best = out.best.map(|(s, q)| (s, PolicyCheckpoint::EdgeQ(q.checkpoint())));
                (out.metrics, PolicyCheckpoint::EdgeQ(out.policy.checkpoint()), best)
            }
            Algorithm::Idqn | Algorithm::Sdqn => {
                let mode = if self.config.algorithm == Algorithm::Idqn {
                    DqnMode::Independent
                } else {
                    DqnMode::Shared
                };
                let out = baselines::train_dqn(&mut env, mode, hp, seed)?;
                let best = out.best.map(|(s, p)| (s, PolicyCheckpoint::CellQ(p.checkpoint())));
                (out.metrics, PolicyCheckpoint::CellQ(out.policy.checkpoint()), best)
            }
            Algorithm::Sweep | Algorithm::Csweep => {
                let geometry = self.sweep_geometry(seed)?;
                let t0 = Instant::now();
                let r = if self.config.algorithm == Algorithm::Sweep {
                    baselines::sweep(&geometry, &self.normalizer, self.config.sweep_passes, seed)?
                } else {
                    baselines::coordinated_sweep(&geometry, &self.normalizer, g, hp.max_plus_iters)?
                };
                let elapsed = t0.elapsed().as_secs_f64() * 1e3;
                let eval = evaluate(&env, &mut |_| Ok(r.tilts.clone()))?;
                let point = single_point(eval, elapsed);
                (vec![point], PolicyCheckpoint::FixedTilts { tilts: r.tilts }, None)
            }
            Algorithm::Random => {
                let b = baselines::random_policy_baseline(&env, self.config.random_configs, seed)?;
                let eval = Evaluation {
                    rewards: b.rewards,
                    mean: b.mean,
                    std: b.std,
                };
                (vec![single_point(eval, f64::NAN)], PolicyCheckpoint::Random { seed }, None)
            }
        };
        let last_step = metrics.last().map_or(0, |m| m.step);
        Ok(SeedRun {
            seed,
            final_artifact: self.artifact(seed, last_step, final_policy),
            best_artifact: best.map(|(s, p)| self.artifact(seed, s, p)),
            metrics,
        })
    }

    /// Training-side user drop the sweeps optimize on.
    fn sweep_geometry(&self, seed: u64) -> Result<LinkGeometry> {
        let drop_seed = rng::stream(seed, Stream::Sweep).gen::<u64>() >> 1;
        let users = self.deployment.drop_users(self.deployment.params.n_users, drop_seed)?;
        Ok(LinkGeometry::new(&self.deployment, &users))
    }

    /// Runs every configured seed, `jobs` at a time. Results keep seed order.
    pub fn run_all(&self, jobs: usize) -> Vec<(u64, Result<SeedRun>)> {
        let jobs = jobs.max(1);
        let mut out = Vec::with_capacity(self.config.seeds.len());
        for chunk in self.config.seeds.chunks(jobs) {
            if chunk.len() == 1 {
                out.push((chunk[0], self.run_seed(chunk[0])));
                continue;
            }
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|&seed| (seed, s.spawn(move || self.run_seed(seed)))).collect();
                for (seed, h) in handles {
                    let r = h
                        .join()
                        .unwrap_or_else(|_| Err(Error::InvalidArgument(format!("seed {seed} panicked"))));
                    out.push((seed, r));
                }
            });
        }
        out
    }
}

fn single_point(eval: Evaluation, latency_ms: f64) -> MetricPoint {
    MetricPoint {
        step: 0,
        epsilon: 0.0,
        eval,
        mean_loss: f64::NAN,
        act_latency_ms: latency_ms,
    }
}

pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<MetricPoint>,
    pub final_artifact: Artifact,
    pub best_artifact: Option<Artifact>,
}

/// Empty field for non-finite values, shortest round-trip form otherwise.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn finite_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn metrics_header(seeds: &[u64]) -> Vec<String> {
    let mut h: Vec<String> = ["config_hash", "algorithm", "step", "epsilon", "mean_eval_reward", "std_eval_reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(seeds.iter().map(|s| format!("reward_seed_{s}")));
    h.push("mean_loss".into());
    h
}

/// One row per evaluation step; per-seed rewards side by side. Contains no
/// wall-clock quantities so reruns are byte-identical.
pub fn write_metrics_csv(path: &Path, config_hash: &str, algorithm: Algorithm, runs: &[SeedRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    w.write_record(metrics_header(&seeds))?;
    let n_rows = runs.first().map_or(0, |r| r.metrics.len());
    if runs.iter().any(|r| r.metrics.len() != n_rows) {
        return Err(Error::ArtifactMismatch("seeds logged different numbers of checkpoints".into()));
    }
    for k in 0..n_rows {
        let points: Vec<&MetricPoint> = runs.iter().map(|r| &r.metrics[k]).collect();
        let means: Vec<f64> = points.iter().map(|p| p.eval.mean).collect();
        let (mean, std) = mean_std(&means);
        let mut row = vec![
            config_hash.to_string(),
            algorithm.to_string(),
            points[0].step.to_string(),
            num(points[0].epsilon),
            num(mean),
            num(std),
        ];
        row.extend(means.iter().map(|&m| num(m)));
        row.push(num(finite_mean(points.iter().map(|p| p.mean_loss))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock action-selection latency per seed and evaluation step.
pub fn write_timing_csv(path: &Path, config_hash: &str, algorithm: Algorithm, runs: &[SeedRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["config_hash", "algorithm", "seed", "step", "act_latency_ms"])?;
    for r in runs {
        for p in &r.metrics {
            w.write_record([
                config_hash.to_string(),
                algorithm.to_string(),
                r.seed.to_string(),
                p.step.to_string(),
                num(p.act_latency_ms),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Greedy evaluation of one artifact with per-cell and per-user detail.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub evaluation: Evaluation,
    pub tilts: Vec<JointAction>,
    /// Standardized reward of every cell, per drop.
    pub cell_rewards: Vec<Vec<f64>>,
    /// Serving cell and throughput (bit/s) of every user, per drop.
    pub users: Vec<Vec<(usize, f64)>>,
}

pub fn evaluate_artifact(a: &Artifact, d: &Deployment, g: &CoordinationGraph, n_drops: usize) -> Result<EvalReport> {
    if n_drops == 0 {
        return Err(Error::InvalidArgument("need at least one evaluation drop".into()));
    }
    a.check(d, g)?;
    let env = NetworkEnv::new(d.clone(), a.normalizer.clone(), 0, n_drops)?;
    let mut policy = Policy::from_checkpoint(&a.policy)?;
    let mut report = EvalReport {
        evaluation: Evaluation::from_rewards(Vec::new()),
        tilts: Vec::new(),
        cell_rewards: Vec::new(),
        users: Vec::new(),
    };
    let actions = evaluation_actions(&env, &mut |obs| policy.act(obs, g, a.max_plus_iters))?;
    let mut rewards = Vec::with_capacity(n_drops);
    for (k, tilts) in actions.into_iter().enumerate() {
        let snap = env.eval_snapshot(k, &tilts)?;
        rewards.push(a.normalizer.standardized_mean(&snap.cell_rewards));
        report.cell_rewards.push(env.standardized_rewards(&snap));
        report
            .users
            .push(snap.association.iter().copied().zip(snap.throughput.iter().copied()).collect());
        report.tilts.push(tilts);
    }
    report.evaluation = Evaluation::from_rewards(rewards);
    Ok(report)
}

/// Writes `eval_summary.csv`, `eval_drops.csv`, `eval_cells.csv` and
/// `eval_throughput.csv` into `dir`.
pub fn write_eval_report(dir: &Path, a: &Artifact, r: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let h = a.config_hash.as_str();

    let mut w = csv::Writer::from_path(dir.join("eval_summary.csv"))?;
    w.write_record(["config_hash", "algorithm", "seed", "step", "n_drops", "mean_reward", "std_reward"])?;
    w.write_record([
        h.to_string(),
        a.algorithm.to_string(),
        a.seed.to_string(),
        a.step.to_string(),
        r.evaluation.rewards.len().to_string(),
        num(r.evaluation.mean),
        num(r.evaluation.std),
    ])?;
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("eval_drops.csv"))?;
    w.write_record(["config_hash", "drop", "reward", "tilts"])?;
    for (k, (v, t)) in r.evaluation.rewards.iter().zip(&r.tilts).enumerate() {
        let tilts = t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        w.write_record([h.to_string(), k.to_string(), num(*v), tilts])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("eval_cells.csv"))?;
    w.write_record(["config_hash", "drop", "cell", "reward"])?;
    for (k, cells) in r.cell_rewards.iter().enumerate() {
        for (c, v) in cells.iter().enumerate() {
            w.write_record([h.to_string(), k.to_string(), c.to_string(), num(*v)])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("eval_throughput.csv"))?;
    w.write_record(["config_hash", "drop", "user", "cell", "throughput_bps"])?;
    for (k, users) in r.users.iter().enumerate() {
        for (u, (c, t)) in users.iter().enumerate() {
            w.write_record([h.to_string(), k.to_string(), u.to_string(), c.to_string(), num(*t)])?;
        }
    }
    w.flush()?;
    Ok(())
}
