//! Exhaustive vs. greedy covering-number timing on synthetic graphs.
//!
//! Graphs with a known small covering number are planted: `c` hubs, every
//! other vertex attached to one hub, plus sparse noise edges between
//! non-hubs. Hubs end up at distance at least 3 from each other, so the
//! radius-2 packing bound usually meets the radius-1 greedy cover. Labels
//! are shuffled so hubs do not sit at the front of the exhaustive search
//! order. Each graph is binned by its exact
//! covering number, taken from the oracle when the graph is small enough
//! and otherwise from the greedy bounds when they coincide.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use srr_core::covering::{covering_oracle_with, estimate_n1c, OracleLimits};
use srr_core::filter_graph::Graph;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub max_cover: usize,
    pub per_bin: usize,
    pub oracle_max_vertices: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: usize,
    /// Exact 1-covering number of the graphs in this bin.
    pub n1c: usize,
    /// Graphs timed.
    pub graphs: usize,
    /// Mean exhaustive-search time; `None` when skipped for size.
    pub oracle_secs: Option<f64>,
    /// Mean time of the greedy `(n1, n2)` estimate.
    pub estimate_secs: f64,
    /// Largest greedy estimation error `|Ñ − N1c|` in the bin.
    pub max_estimate_error: f64,
}

/// `c` hubs on `n` vertices with noise edges at rate `q` among non-hubs.
pub fn planted_graph(n: usize, c: usize, q: f64, rng: &mut impl Rng) -> Graph {
    assert!(c >= 1 && c <= n);
    let mut label: Vec<usize> = (0..n).collect();
    label.shuffle(rng);
    let mut edges = Vec::new();
    for v in c..n {
        edges.push((label[v], label[rng.random_range(0..c)]));
        for u in c..v {
            if rng.random_bool(q) {
                edges.push((label[u], label[v]));
            }
        }
    }
    Graph::from_edges(n, edges).expect("generator emits valid edges")
}

fn time<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// One row per (size, covering number) bin that received graphs. Bins the
/// generator cannot fill within its attempt budget are left out.
pub fn run_bench(cfg: &BenchConfig) -> Vec<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let use_oracle = n <= cfg.oracle_max_vertices;
        let limits = OracleLimits {
            max_vertices: cfg.oracle_max_vertices,
            max_cover: None,
        };
        for c in 1..=cfg.max_cover.min(n) {
            let q = 2.0 / n as f64;
            let (mut oracle_total, mut est_total, mut got, mut max_err) = (0.0, 0.0, 0, 0.0f64);
            for _ in 0..cfg.per_bin * 20 {
                if got == cfg.per_bin {
                    break;
                }
                let g = planted_graph(n, c, q, &mut rng);
                let (est, est_secs) = time(|| estimate_n1c(&g));
                let (exact, oracle_secs) = if use_oracle {
                    let (v, t) = time(|| covering_oracle_with(&g, 1, limits));
                    (v.expect("size checked against the limit"), Some(t))
                } else if est.n1 == est.n2 {
                    (est.n1, None)
                } else {
                    continue;
                };
                if exact != c {
                    continue;
                }
                got += 1;
                est_total += est_secs;
                oracle_total += oracle_secs.unwrap_or(0.0);
                max_err = max_err.max((est.estimate() - exact as f64).abs());
            }
            if got == 0 {
                log::warn!("no graphs with covering number {c} at n = {n}");
                continue;
            }
            rows.push(BenchRow {
                n,
                n1c: c,
                graphs: got,
                oracle_secs: use_oracle.then(|| oracle_total / got as f64),
                estimate_secs: est_total / got as f64,
                max_estimate_error: max_err,
            });
        }
    }
    rows
}
