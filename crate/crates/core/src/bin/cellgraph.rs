use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cellgraph::bench::{bench_topologies, write_latency_csv};
use cellgraph::env::{Environment, NetworkEnv};
use cellgraph::experiment::{evaluate_artifact, write_eval_report, write_metrics_csv, write_timing_csv, Algorithm, Artifact, ExperimentConfig, PolicyCheckpoint, Prepared, SeedRun};
use cellgraph::graph::{build_graph, coupling_matrix, CoordinationGraph, Topology};
use cellgraph::learner::{self, EdgeQ, Sharing};
use cellgraph::netsim::Deployment;
use cellgraph::rng::{self, Stream};
use cellgraph::DEFAULT_TILT;

#[derive(Parser)]
#[command(name = "cellgraph", version, about = "Coordinated antenna tilt optimization on coordination graphs")]
struct Cli {
    /// Relative output paths are resolved against this directory.
    #[arg(long, global = true, env = "CELLGRAPH_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Place base stations and write a deployment file.
    Generate(GenerateArgs),
    /// Build a coordination graph for a deployment.
    Graph(GraphArgs),
    /// Estimate observation and reward normalization.
    Calibrate(CalibrateArgs),
    /// Train or run an algorithm for one or more seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint on fixed evaluation drops.
    Eval(EvalArgs),
    /// Measure action-selection latency per topology.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    stations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Experiment config whose deployment section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    deployment: PathBuf,
    /// sparse, dense, tree, complete or custom.
    #[arg(long)]
    topology: Option<Topology>,
    /// Edge list for the custom topology, e.g. "0-1,1-2".
    #[arg(long)]
    edges: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    deployment: PathBuf,
    #[arg(long, default_value_t = 1000)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    deployment: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// ps-crl, crl, idqn, sdqn, sweep, csweep or random.
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Run seeds 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Environment interaction budget per seed.
    #[arg(long)]
    budget: Option<usize>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    deployment: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// If given, its hash must match the checkpoint's.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    drops: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    deployment: PathBuf,
    /// Shared-parameter checkpoint; a seeded random network otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "tree,sparse,dense,complete")]
    topologies: Vec<Topology>,
    /// Timed selections per topology.
    #[arg(short, long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.output_root.clone();
    let out = |p: &Path| -> PathBuf {
        match &root {
            Some(r) if p.is_relative() => r.join(p),
            _ => p.to_path_buf(),
        }
    };
    match cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Graph(a) => graph(a, out),
        Command::Calibrate(a) => calibrate(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_deployment(p: &Path) -> Result<Deployment> {
    let s = fs::read_to_string(p).with_context(|| format!("reading deployment {}", p.display()))?;
    Ok(Deployment::from_json(&s)?)
}

fn load_graph(p: &Path) -> Result<CoordinationGraph> {
    let s = fs::read_to_string(p).with_context(|| format!("reading graph {}", p.display()))?;
    Ok(CoordinationGraph::from_json(&s)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn generate(a: GenerateArgs, out: impl Fn(&Path) -> PathBuf) -> Result<()> {
    if a.stations == 0 {
        bail!("--stations must be at least 1");
    }
    let config = load_config(a.config.as_deref())?;
    let d = Deployment::generate(a.stations, a.seed, &config.deployment)?;
    let path = out(&a.output);
    write_file(&path, &d.to_json()?)?;
    let min_d = d.min_intersite_distance().map_or("n/a".to_string(), |m| format!("{m:.1} m"));
    println!(
        "deployment: {} stations, {} cells, area {:.1} km², min intersite distance {} -> {}",
        d.n_stations(),
        d.n_cells(),
        d.area_m2() / 1e6,
        min_d,
        path.display()
    );
    Ok(())
}

fn parse_edges(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (i, j) = t.trim().split_once('-').with_context(|| format!("edge '{t}' is not of the form i-j"))?;
            Ok((i.trim().parse()?, j.trim().parse()?))
        })
        .collect()
}

fn graph(a: GraphArgs, out: impl Fn(&Path) -> PathBuf) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let d = load_deployment(&a.deployment)?;
    let topology = a.topology.unwrap_or(config.topology);
    let g = if topology == Topology::Custom {
        let edges = a.edges.as_deref().context("--edges is required for the custom topology")?;
        CoordinationGraph::new(d.n_cells(), parse_edges(edges)?, Topology::Custom)?
    } else {
        if a.edges.is_some() {
            bail!("--edges only applies to the custom topology");
        }
        let c = coupling_matrix(&d, &config.coupling, config.coupling_seed)?;
        let b = build_graph(&c, topology, &config.graph)?;
        b.graph
    };
    let path = out(&a.output);
    write_file(&path, &g.to_json())?;
    let comps = g.components();
    println!("graph: {} topology, {} nodes, {} edges -> {}", topology, g.n_nodes(), g.n_edges(), path.display());
    if comps.len() > 1 {
        eprintln!("warning: graph is disconnected into {} components", comps.len());
        for (k, c) in comps.iter().enumerate() {
            eprintln!("  component {k}: {c:?}");
        }
    } else {
        println!("connected");
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs, out: impl Fn(&Path) -> PathBuf) -> Result<()> {
    let d = load_deployment(&a.deployment)?;
    let n = learner::calibrate(&d, a.configs, a.seed)?;
    let path = out(&a.output);
    write_file(&path, &serde_json::to_string_pretty(&n)?)?;
    println!(
        "normalizer: max SINR {:.3} dB, reward mean {:.6}, std {:.6} -> {}",
        n.max_sinr_db,
        n.reward_mean,
        n.reward_std,
        path.display()
    );
    Ok(())
}

fn train(a: TrainArgs, out: impl Fn(&Path) -> PathBuf) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(algo) = a.algo {
        config.algorithm = algo;
    }
    if let Some(n) = a.seeds {
        config.seeds = (0..n).collect();
    }
    if let Some(list) = a.seed_list {
        config.seeds = list;
    }
    if let Some(b) = a.budget {
        config.hyperparams.budget = b;
    }
    let dir = out(&a.output);
    config.output_dir = Some(dir.clone());
    let d = load_deployment(&a.deployment)?;
    let g = load_graph(&a.graph)?;
    config.topology = g.topology();
    let p = Prepared::new(config, d, g)?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let echo = serde_json::json!({
        "config_hash": p.config_hash,
        "deployment_hash": p.deployment_hash,
        "graph_hash": p.graph_hash,
        "config": p.config,
    });
    write_file(&dir.join("config.json"), &serde_json::to_string_pretty(&echo)?)?;
    write_file(&dir.join("normalizer.json"), &serde_json::to_string_pretty(&p.normalizer)?)?;

    let algo = p.config.algorithm;
    let mut runs: Vec<SeedRun> = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in p.run_all(a.jobs) {
        match r {
            Ok(run) => {
                let stem = format!("{algo}_seed{seed}");
                run.final_artifact.save(&ckpt_dir.join(format!("{stem}_final.json")))?;
                if let Some(b) = &run.best_artifact {
                    b.save(&ckpt_dir.join(format!("{stem}_best.json")))?;
                }
                if let Some(last) = run.metrics.last() {
                    println!(
                        "{algo} seed {seed}: step {} eval reward {:.4} ± {:.4}",
                        last.step, last.eval.mean, last.eval.std
                    );
                }
                runs.push(run);
            }
            Err(e) => {
                eprintln!("{algo} seed {seed} failed: {e}");
                failures.push(format!("seed {seed}: {e}"));
            }
        }
    }
    if !runs.is_empty() {
        write_metrics_csv(&dir.join("metrics.csv"), &p.config_hash, algo, &runs)?;
        write_timing_csv(&dir.join("timing.csv"), &p.config_hash, algo, &runs)?;
    }
    let marker = dir.join("INCOMPLETE");
    if failures.is_empty() {
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
        println!("config {} -> {}", p.config_hash, dir.display());
        Ok(())
    } else {
        write_file(&marker, &(failures.join("\n") + "\n"))?;
        bail!("{} of {} seeds failed; outputs in {} are partial", failures.len(), p.config.seeds.len(), dir.display())
    }
}

fn eval(a: EvalArgs, out: impl Fn(&Path) -> PathBuf) -> Result<()> {
    if a.drops == 0 {
        bail!("--drops must be at least 1");
    }
    let art = Artifact::load(&a.checkpoint).with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    if let Some(c) = &a.config {
        let h = ExperimentConfig::load(c)?.hash();
        if h != art.config_hash {
            bail!("config hash {h} does not match checkpoint config hash {}", art.config_hash);
        }
    }
    let d = load_deployment(&a.deployment)?;
    let g = load_graph(&a.graph)?;
    let report = evaluate_artifact(&art, &d, &g, a.drops)?;
    let dir = out(&a.output);
    write_eval_report(&dir, &art, &report)?;
    println!(
        "{} seed {} step {}: reward {:.4} ± {:.4} over {} drops -> {}",
        art.algorithm,
        art.seed,
        art.step,
        report.evaluation.mean,
        report.evaluation.std,
        a.drops,
        dir.display()
    );
    Ok(())
}

fn bench(a: BenchArgs, out: impl Fn(&Path) -> PathBuf) -> Result<()> {
    if a.k == 0 {
        bail!("-k must be at least 1");
    }
    let config = load_config(a.config.as_deref())?;
    let d = load_deployment(&a.deployment)?;
    let (q, normalizer, max_iters) = match &a.checkpoint {
        Some(p) => {
            let art = Artifact::load(p)?;
            let q = match &art.policy {
                PolicyCheckpoint::EdgeQ(c) if c.sharing == Sharing::Shared => c.restore()?,
                _ => bail!("bench needs a shared edge-network checkpoint (ps-crl)"),
            };
            (q, art.normalizer, art.max_plus_iters)
        }
        None => {
            let q = EdgeQ::new(
                Sharing::Shared,
                0,
                &config.hyperparams.hidden,
                config.hyperparams.learning_rate,
                &mut rng::stream(a.seed, Stream::NetworkInit),
            )?;
            let n = learner::calibrate(&d, config.calibration_configs, config.calibration_seed)?;
            (q, n, config.hyperparams.max_plus_iters)
        }
    };
    let c = coupling_matrix(&d, &config.coupling, config.coupling_seed)?;
    let graphs = a
        .topologies
        .iter()
        .map(|&t| {
            if t == Topology::Custom {
                bail!("bench derives graphs; custom topology is not supported");
            }
            Ok((t.to_string(), build_graph(&c, t, &config.graph)?.graph))
        })
        .collect::<Result<Vec<_>>>()?;
    let env = NetworkEnv::new(d, normalizer, a.seed, config.hyperparams.eval_drops)?;
    let default = vec![DEFAULT_TILT; env.n_cells()];
    let observations = (0..env.n_eval_drops())
        .map(|k| env.eval_observation(k, &default))
        .collect::<cellgraph::Result<Vec<_>>>()?;
    let rows = bench_topologies(&q, &graphs, &observations, a.k, max_iters)?;
    let path = out(&a.output);
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_latency_csv(&path, &config.hash(), &rows)?;
    for r in &rows {
        println!(
            "{:>8}: {:4} edges, mean {:.3} ms, p95 {:.3} ms, {:.1} iterations",
            r.label, r.n_edges, r.mean_ms, r.p95_ms, r.mean_iterations
        );
    }
    Ok(())
}
