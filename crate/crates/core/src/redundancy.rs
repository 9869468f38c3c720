//! Layer redundancy scores and the budget allocation loop.
//!
//! A layer with `N` live filters, `k` connected components and covering
//! estimate `Ñ` scores `R = N / (w1 * k + w2 * Ñ)`. Identical filters push
//! `k` and `Ñ` towards 1 and `R` towards `N`; a layer of mutually distant
//! filters has `k = Ñ = N` and `R = 1`.
//!
//! The allocator repeatedly takes one filter from the layer with the
//! highest score, recomputes that layer's score on the reduced graph, and
//! stops once the filter budget is spent or the FLOPs target is reached.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covering::{estimate_n1c_with, CoverEstimate, DegreeMode};
use crate::filter_graph::{FilterGraph, Graph, GraphError, NormFlag};
use crate::flops::flops_after_removal;
use crate::selection::{filter_norms, NormKind};
use crate::weights_io::BoundModel;

#[derive(Debug, Error, PartialEq)]
pub enum RedundancyError {
    #[error("redundancy of an empty graph is undefined")]
    EmptyGraph,
    #[error("weights must be nonnegative and sum to 1, got w1={w1}, w2={w2}")]
    InvalidWeights { w1: f64, w2: f64 },
    #[error("layer {layer:?}: {source}")]
    Graph { layer: String, source: GraphError },
    #[error("budget of {requested} filters exceeds the {capacity} removable above per-layer floors")]
    InfeasibleFilters { requested: usize, capacity: usize },
    #[error("FLOPs target {target} unreachable: every prunable layer is at its floor at drop {reached}")]
    InfeasibleFlops { target: f64, reached: f64 },
    #[error("a FLOPs budget needs an architecture description")]
    FlopsWithoutArch,
    #[error("FLOPs drop target must lie in [0, 1), got {0}")]
    InvalidFlopsTarget(f64),
}

/// Mixing weights for components vs. covering number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedundancyWeights {
    w1: f64,
    w2: f64,
}

impl Default for RedundancyWeights {
    fn default() -> Self {
        RedundancyWeights { w1: 0.35, w2: 0.65 }
    }
}

impl RedundancyWeights {
    pub fn new(w1: f64, w2: f64) -> Result<Self, RedundancyError> {
        if !(w1 >= 0.0 && w2 >= 0.0 && (w1 + w2 - 1.0).abs() <= 1e-12) {
            return Err(RedundancyError::InvalidWeights { w1, w2 });
        }
        Ok(RedundancyWeights { w1, w2 })
    }

    pub fn w1(&self) -> f64 {
        self.w1
    }

    pub fn w2(&self) -> f64 {
        self.w2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRedundancyReport {
    pub layer: String,
    /// Live filter count.
    pub n: usize,
    /// Quotient space size (connected components).
    pub k: usize,
    pub n1: usize,
    pub n2: usize,
    pub n1c_estimate: f64,
    pub r: f64,
}

/// `N / (w1 * k + w2 * Ñ)`.
pub fn graph_redundancy(
    g: &Graph,
    w: RedundancyWeights,
    cover: &CoverEstimate,
    k: usize,
) -> Result<f64, RedundancyError> {
    if g.live_count() == 0 {
        return Err(RedundancyError::EmptyGraph);
    }
    Ok(g.live_count() as f64 / (w.w1 * k as f64 + w.w2 * cover.estimate()))
}

/// Filter-count baseline: the live vertex count.
pub fn nof_redundancy(g: &Graph) -> f64 {
    g.live_count() as f64
}

pub fn layer_report(
    layer: &str,
    g: &Graph,
    w: RedundancyWeights,
    mode: DegreeMode,
) -> Result<LayerRedundancyReport, RedundancyError> {
    let k = g.components().count;
    let cover = estimate_n1c_with(g, mode);
    let r = graph_redundancy(g, w, &cover, k)?;
    Ok(LayerRedundancyReport {
        layer: layer.to_string(),
        n: g.live_count(),
        k,
        n1: cover.n1,
        n2: cover.n2,
        n1c_estimate: cover.estimate(),
        r,
    })
}

fn build_layer_graphs(
    model: &BoundModel,
    gamma: f64,
) -> Result<Vec<(usize, FilterGraph)>, RedundancyError> {
    model
        .bindings()
        .par_iter()
        .enumerate()
        .filter(|(_, b)| b.prunable)
        .map(|(i, b)| {
            FilterGraph::from_layer(model.tensor(b), gamma)
                .map(|g| (i, g))
                .map_err(|source| RedundancyError::Graph {
                    layer: b.name.clone(),
                    source,
                })
        })
        .collect()
}

/// One report per prunable layer, in binding order.
pub fn analyze_model(
    model: &BoundModel,
    gamma: f64,
    w: RedundancyWeights,
) -> Result<Vec<LayerRedundancyReport>, RedundancyError> {
    analyze_model_with(model, gamma, w, DegreeMode::FullGraph)
}

pub fn analyze_model_with(
    model: &BoundModel,
    gamma: f64,
    w: RedundancyWeights,
    mode: DegreeMode,
) -> Result<Vec<LayerRedundancyReport>, RedundancyError> {
    build_layer_graphs(model, gamma)?
        .par_iter()
        .map(|(i, g)| layer_report(&model.bindings()[*i].name, g.graph(), w, mode))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Graph redundancy `N / (w1 k + w2 Ñ)`.
    Graph,
    /// Number of live filters.
    Nof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalPolicy {
    /// Uniform over the chosen layer's live vertices.
    Random,
    /// Live vertex with the smallest L1 norm (dead filters first, then
    /// lowest index).
    MinWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Seeded uniform choice among the tied layers.
    Random,
    /// First tied layer in binding order.
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    FilterCount(usize),
    FlopsFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationConfig {
    pub budget: Budget,
    pub gamma: f64,
    pub weights: RedundancyWeights,
    pub metric: Metric,
    pub removal: RemovalPolicy,
    pub ties: TieBreak,
    pub degree_mode: DegreeMode,
    pub seed: u64,
}

impl AllocationConfig {
    pub fn new(budget: Budget) -> Self {
        AllocationConfig {
            budget,
            gamma: 0.034,
            weights: RedundancyWeights::default(),
            metric: Metric::Graph,
            removal: RemovalPolicy::Random,
            ties: TieBreak::Random,
            degree_mode: DegreeMode::FullGraph,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationStep {
    pub step: usize,
    pub layer: String,
    /// Filter index removed from the layer's graph.
    pub vertex: usize,
    /// Scores of all candidate layers when the choice was made, in
    /// [`AllocationResult::layers`] order.
    pub r_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops_drop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub config: AllocationConfig,
    /// Candidate layers in binding order.
    pub layers: Vec<String>,
    /// Filters to remove per candidate layer.
    pub counts: BTreeMap<String, usize>,
    pub trace: Vec<AllocationStep>,
    /// Projected drop of the final counts (needs an architecture).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops_drop: Option<f64>,
    /// Amount by which a FLOPs target was exceeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overshoot: Option<f64>,
}

impl AllocationResult {
    pub fn total_removed(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("allocation serializes");
        s.push('\n');
        s
    }
}

struct LayerState {
    binding: usize,
    graph: FilterGraph,
    floor: usize,
    norms: Vec<f64>,
    removed: usize,
    score: f64,
}

impl LayerState {
    fn rescore(&mut self, cfg: &AllocationConfig, name: &str) -> Result<(), RedundancyError> {
        self.score = match cfg.metric {
            Metric::Nof => nof_redundancy(self.graph.graph()),
            Metric::Graph => {
                layer_report(name, self.graph.graph(), cfg.weights, cfg.degree_mode)?.r
            }
        };
        Ok(())
    }

    fn can_shrink(&self) -> bool {
        self.graph.live_count() > self.floor
    }

    fn pick_vertex(&self, policy: RemovalPolicy, rng: &mut ChaCha8Rng) -> usize {
        let g = self.graph.graph();
        match policy {
            RemovalPolicy::Random => {
                let live: Vec<usize> = g.vertices().collect();
                live[rng.random_range(0..live.len())]
            }
            RemovalPolicy::MinWeight => g
                .vertices()
                .min_by(|&a, &b| {
                    let dead = |v: usize| self.graph.vectors()[v].norm == NormFlag::Zero;
                    dead(b)
                        .cmp(&dead(a))
                        .then(self.norms[a].total_cmp(&self.norms[b]))
                        .then(a.cmp(&b))
                })
                .unwrap(),
        }
    }
}

/// Spend the budget one filter at a time on the most redundant layer.
pub fn allocate(model: &BoundModel, cfg: &AllocationConfig) -> Result<AllocationResult, RedundancyError> {
    let arch = model.arch();
    let flops_target = match cfg.budget {
        Budget::FlopsFraction(f) => {
            if arch.is_none() {
                return Err(RedundancyError::FlopsWithoutArch);
            }
            if !(0.0..1.0).contains(&f) {
                return Err(RedundancyError::InvalidFlopsTarget(f));
            }
            Some(f)
        }
        Budget::FilterCount(_) => None,
    };

    let graphs = build_layer_graphs(model, cfg.gamma)?;
    let mut states = Vec::with_capacity(graphs.len());
    for (i, graph) in graphs {
        let binding = &model.bindings()[i];
        let norms = filter_norms(model.tensor(binding), NormKind::L1);
        let mut st = LayerState {
            binding: i,
            graph,
            floor: binding.floor,
            norms,
            removed: 0,
            score: 0.0,
        };
        st.rescore(cfg, &binding.name)?;
        states.push(st);
    }
    let names: Vec<String> = states
        .iter()
        .map(|s| model.bindings()[s.binding].name.clone())
        .collect();

    if let Budget::FilterCount(n) = cfg.budget {
        let capacity: usize = states
            .iter()
            .map(|s| s.graph.live_count().saturating_sub(s.floor))
            .sum();
        if n > capacity {
            return Err(RedundancyError::InfeasibleFilters {
                requested: n,
                capacity,
            });
        }
    }

    // Arch position of each candidate, for FLOPs projection.
    let arch_pos: Vec<Option<usize>> = states
        .iter()
        .map(|s| model.bindings()[s.binding].arch_index)
        .collect();
    let project = |states: &[LayerState]| -> Option<f64> {
        let arch = arch?;
        let mut removed = vec![0usize; arch.layers().len()];
        for (s, pos) in states.iter().zip(&arch_pos) {
            removed[pos.expect("bound layers carry an arch index")] = s.removed;
        }
        flops_after_removal(arch, &removed).drop_fraction
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let mut drop = project(&states);
    loop {
        match (cfg.budget, flops_target) {
            (Budget::FilterCount(n), _) if trace.len() >= n => break,
            (_, Some(f)) if drop.unwrap_or(0.0) >= f => break,
            _ => {}
        }

        let best = states
            .iter()
            .filter(|s| s.can_shrink())
            .map(|s| s.score)
            .max_by(f64::total_cmp);
        let Some(best) = best else {
            return Err(RedundancyError::InfeasibleFlops {
                target: flops_target.unwrap_or(f64::NAN),
                reached: drop.unwrap_or(0.0),
            });
        };
        let tied: Vec<usize> = (0..states.len())
            .filter(|&i| states[i].can_shrink() && states[i].score == best)
            .collect();
        let chosen = match (tied.len(), cfg.ties) {
            (1, _) | (_, TieBreak::LowestIndex) => tied[0],
            (n, TieBreak::Random) => tied[rng.random_range(0..n)],
        };

        let r_values = states.iter().map(|s| s.score).collect();
        let st = &mut states[chosen];
        let vertex = st.pick_vertex(cfg.removal, &mut rng);
        st.graph
            .remove_vertex_in_place(vertex)
            .expect("picked vertex is live");
        st.removed += 1;
        st.rescore(cfg, &names[chosen])?;

        drop = project(&states);
        trace.push(AllocationStep {
            step: trace.len(),
            layer: names[chosen].clone(),
            vertex,
            r_values,
            flops_drop: drop,
        });
    }

    let counts = names
        .iter()
        .zip(&states)
        .map(|(n, s)| (n.clone(), s.removed))
        .collect();
    Ok(AllocationResult {
        config: *cfg,
        layers: names,
        counts,
        trace,
        flops_drop: drop,
        overshoot: flops_target.zip(drop).map(|(f, d)| d - f),
    })
}
