//! Action-selection latency per graph topology.
//!
//! Repetitions are interleaved round-robin across topologies so slow drifts
//! of the machine affect every topology alike.

use std::path::Path;
use std::time::Instant;

use crate::graph::CoordinationGraph;
use crate::learner::EdgeQ;
use crate::{Error, Observation, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub label: String,
    pub n_edges: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub mean_iterations: f64,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile_nearest_rank(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// Times `k` greedy selections per graph, cycling through `observations`.
/// `q` must use shared parameters so it can act on any of the graphs.
pub fn bench_topologies(
    q: &EdgeQ,
    graphs: &[(String, CoordinationGraph)],
    observations: &[Vec<Observation>],
    k: usize,
    max_iters: usize,
) -> Result<Vec<LatencyRow>> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one repetition".into()));
    }
    if observations.is_empty() {
        return Err(Error::InvalidArgument("need at least one observation set".into()));
    }
    let bound: Vec<EdgeQ> = graphs.iter().map(|(_, g)| q.rebind(g.n_edges())).collect::<Result<_>>()?;
    let mut times = vec![Vec::with_capacity(k); graphs.len()];
    let mut iters = vec![0usize; graphs.len()];
    let mut unused = crate::rng::seeded(0);
    // one untimed warm-up round
    for (t, (_, g)) in graphs.iter().enumerate() {
        bound[t].act(&observations[0], g, 0.0, max_iters, &mut unused)?;
    }
    for rep in 0..k {
        let obs = &observations[rep % observations.len()];
        for (t, (_, g)) in graphs.iter().enumerate() {
            let start = Instant::now();
            let d = bound[t].act(obs, g, 0.0, max_iters, &mut unused)?;
            times[t].push(start.elapsed().as_secs_f64() * 1e3);
            iters[t] += d.diagnostics.iterations;
        }
    }
    Ok(graphs
        .iter()
        .zip(times)
        .zip(iters)
        .map(|(((label, g), ts), it)| LatencyRow {
            label: label.clone(),
            n_edges: g.n_edges(),
            mean_ms: ts.iter().sum::<f64>() / k as f64,
            p95_ms: percentile_nearest_rank(&ts, 95.0),
            mean_iterations: it as f64 / k as f64,
        })
        .collect())
}

pub fn write_latency_csv(path: &Path, config_hash: &str, rows: &[LatencyRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["config_hash", "topology", "n_edges", "mean_ms", "p95_ms", "mean_iterations"])?;
    for r in rows {
        w.write_record([
            config_hash.to_string(),
            r.label.clone(),
            r.n_edges.to_string(),
            r.mean_ms.to_string(),
            r.p95_ms.to_string(),
            r.mean_iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
