//! Per-layer filter ranking, pruning plans and plan application.
//!
//! Rankings never compare filters across layers: the allocator decides how
//! many filters each layer loses, the criterion only decides which.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter_graph::ZERO_NORM_EPS;
use crate::redundancy::{AllocationResult, Budget, Metric, RemovalPolicy};
use crate::weights_io::{ArchLayer, ArchSpec, BoundModel, LayerTensor, ModelWeights};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan names unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("layer {layer:?}: filter index {index} out of range (layer has {out} filters)")]
    IndexOutOfRange {
        layer: String,
        index: usize,
        out: usize,
    },
    #[error("layer {0:?}: removal indices must be strictly ascending")]
    Unsorted(String),
    #[error("layer {layer:?}: removing {remove} of {out} filters leaves fewer than the floor of {floor}")]
    BelowFloor {
        layer: String,
        remove: usize,
        out: usize,
        floor: usize,
    },
    #[error("layer {0:?} is marked non-prunable")]
    NotPrunable(String),
    #[error("coupling group {group:?}: {layer:?} is not pruned identically to {other:?}")]
    CouplingMismatch {
        group: String,
        layer: String,
        other: String,
    },
    #[error("plan was computed from weights {expected}, these weights hash to {actual}")]
    StaleDigest { expected: String, actual: String },
    #[error("layer {layer:?}: count {count} exceeds the layer's {out} filters")]
    CountExceedsLayer {
        layer: String,
        count: usize,
        out: usize,
    },
    #[error("plan JSON: {0}")]
    Parse(String),
    #[error("reading plan {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    MinWeight,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    #[default]
    L1,
    L2,
}

/// One norm per filter, accumulated in f64.
pub fn filter_norms(layer: &LayerTensor, kind: NormKind) -> Vec<f64> {
    layer
        .filters()
        .map(|f| match kind {
            NormKind::L1 => f.iter().map(|&v| (v as f64).abs()).sum(),
            NormKind::L2 => f.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt(),
        })
        .collect()
}

/// Filter indices by ascending L1 norm; all-zero filters first, ties to
/// the lower index.
pub fn rank_filters_min_weight(layer: &LayerTensor) -> Vec<usize> {
    rank_filters_by_norm(layer, NormKind::L1)
}

pub fn rank_filters_by_norm(layer: &LayerTensor, kind: NormKind) -> Vec<usize> {
    let norms = filter_norms(layer, kind);
    let l2 = filter_norms(layer, NormKind::L2);
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| {
        let za = l2[a] < ZERO_NORM_EPS;
        let zb = l2[b] < ZERO_NORM_EPS;
        zb.cmp(&za)
            .then(norms[a].total_cmp(&norms[b]))
            .then(a.cmp(&b))
    });
    order
}

/// Seeded uniform permutation of the filter indices.
pub fn rank_filters_random(layer: &LayerTensor, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..layer.out_channels()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Settings a plan was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub gamma: f64,
    pub w1: f64,
    pub w2: f64,
    pub seed: u64,
    pub metric: Metric,
    pub removal: RemovalPolicy,
    pub budget: Budget,
    /// Digest of the weights the plan was computed from.
    pub source_digest: String,
}

/// Per-layer sorted filter indices to delete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    layers: BTreeMap<String, Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    criterion: Option<Criterion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl PruningPlan {
    /// Plan from explicit removal lists; layers with empty lists are dropped.
    pub fn from_layers(layers: BTreeMap<String, Vec<usize>>) -> Self {
        PruningPlan {
            layers: layers.into_iter().filter(|(_, v)| !v.is_empty()).collect(),
            criterion: None,
            provenance: None,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn removal(&self, layer: &str) -> &[usize] {
        self.layers.get(layer).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn total_removed(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }

    pub fn criterion(&self) -> Option<Criterion> {
        self.criterion
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let plan: PruningPlan =
            serde_json::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))?;
        for (name, idx) in &plan.layers {
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(PlanError::Unsorted(name.clone()));
            }
        }
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PlanError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    fn check_list(name: &str, idx: &[usize], out: usize, floor: usize) -> Result<(), PlanError> {
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PlanError::Unsorted(name.to_string()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out) {
            return Err(PlanError::IndexOutOfRange {
                layer: name.to_string(),
                index: bad,
                out,
            });
        }
        if out - idx.len() < floor {
            return Err(PlanError::BelowFloor {
                layer: name.to_string(),
                remove: idx.len(),
                out,
                floor,
            });
        }
        Ok(())
    }

    /// Structural checks against an architecture: known layers, sorted
    /// in-range indices, floors, prunability and coupling groups.
    pub fn validate_against(&self, arch: &ArchSpec) -> Result<(), PlanError> {
        for (name, idx) in &self.layers {
            let layer = arch
                .layer(name)
                .ok_or_else(|| PlanError::UnknownLayer(name.clone()))?;
            if !layer.prunable {
                return Err(PlanError::NotPrunable(name.clone()));
            }
            Self::check_list(name, idx, layer.out_channels, layer.min_filters_floor)?;
        }
        // Every member of a touched group must carry the same list.
        let mut groups: HashMap<&str, Vec<&ArchLayer>> = HashMap::new();
        for l in arch.layers() {
            if let Some(g) = &l.coupling_group {
                groups.entry(g).or_default().push(l);
            }
        }
        for (group, members) in groups {
            let first = &members[0];
            for m in &members[1..] {
                if self.removal(&first.name) != self.removal(&m.name) {
                    return Err(PlanError::CouplingMismatch {
                        group: group.to_string(),
                        layer: m.name.clone(),
                        other: first.name.clone(),
                    });
                }
            }
            if !self.removal(&first.name).is_empty() {
                if let Some(np) = members.iter().find(|m| !m.prunable) {
                    return Err(PlanError::NotPrunable(np.name.clone()));
                }
            }
        }
        Ok(())
    }

    /// Checks against bare weights (floor 1 everywhere).
    pub fn validate_against_weights(&self, weights: &ModelWeights) -> Result<(), PlanError> {
        for (name, idx) in &self.layers {
            let t = weights
                .get(name)
                .ok_or_else(|| PlanError::UnknownLayer(name.clone()))?;
            Self::check_list(name, idx, t.out_channels(), 1)?;
        }
        Ok(())
    }

    /// Full check for a bound model, including the source digest when the
    /// plan records one.
    pub fn validate_for(&self, model: &BoundModel) -> Result<(), PlanError> {
        if let Some(p) = &self.provenance {
            let actual = model.weights().digest();
            if p.source_digest != actual {
                return Err(PlanError::StaleDigest {
                    expected: p.source_digest.clone(),
                    actual,
                });
            }
        }
        match model.arch() {
            Some(arch) => self.validate_against(arch),
            None => self.validate_against_weights(model.weights()),
        }
    }
}

/// Turn allocation counts into removal lists using `criterion`. Each layer
/// is ranked on its own; random rankings draw from a per-layer stream.
pub fn make_plan(
    counts: &AllocationResult,
    model: &BoundModel,
    criterion: Criterion,
    seed: u64,
) -> Result<PruningPlan, PlanError> {
    let mut layers = BTreeMap::new();
    for (pos, b) in model.bindings().iter().enumerate() {
        let count = counts.counts.get(&b.name).copied().unwrap_or(0);
        if count == 0 {
            continue;
        }
        let t = model.tensor(b);
        let out = t.out_channels();
        if count > out {
            return Err(PlanError::CountExceedsLayer {
                layer: b.name.clone(),
                count,
                out,
            });
        }
        if out - count < b.floor {
            return Err(PlanError::BelowFloor {
                layer: b.name.clone(),
                remove: count,
                out,
                floor: b.floor,
            });
        }
        let ranking = match criterion {
            Criterion::MinWeight => rank_filters_min_weight(t),
            Criterion::Random => rank_filters_random(t, layer_seed(seed, pos)),
        };
        let mut idx = ranking[..count].to_vec();
        idx.sort_unstable();
        layers.insert(b.name.clone(), idx);
    }
    if let Some(name) = counts.counts.keys().find(|n| model.binding(n).is_none()) {
        return Err(PlanError::UnknownLayer(name.clone()));
    }
    let cfg = &counts.config;
    Ok(PruningPlan {
        layers,
        criterion: Some(criterion),
        provenance: Some(Provenance {
            gamma: cfg.gamma,
            w1: cfg.weights.w1(),
            w2: cfg.weights.w2(),
            seed: cfg.seed,
            metric: cfg.metric,
            removal: cfg.removal,
            budget: cfg.budget,
            source_digest: model.weights().digest(),
        }),
    })
}

fn layer_seed(seed: u64, pos: usize) -> u64 {
    // splitmix64 step so neighbouring positions get unrelated streams
    let mut z = seed ^ (pos as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Slimmed weights plus the architecture describing them.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedModel {
    pub weights: ModelWeights,
    pub arch: Option<ArchSpec>,
}

fn complement(n: usize, removed: &[usize]) -> Vec<usize> {
    let mut keep = Vec::with_capacity(n - removed.len());
    let mut r = removed.iter().peekable();
    for i in 0..n {
        if r.peek() == Some(&&i) {
            r.next();
        } else {
            keep.push(i);
        }
    }
    keep
}

/// Delete the planned filters and, through the architecture's connectivity,
/// the matching in-channel slices of every consumer. Without an
/// architecture only out-channels change. Layers outside the architecture
/// are copied unchanged.
pub fn apply_plan(model: &BoundModel, plan: &PruningPlan) -> Result<PrunedModel, PlanError> {
    plan.validate_for(model)?;
    let weights = model.weights();
    let Some(arch) = model.arch() else {
        let layers = weights
            .layers()
            .iter()
            .map(|t| {
                let keep_in: Vec<usize> = (0..t.in_channels()).collect();
                t.select(&complement(t.out_channels(), plan.removal(t.name())), &keep_in)
            })
            .collect();
        return Ok(PrunedModel {
            weights: ModelWeights::new(layers).expect("names unchanged"),
            arch: None,
        });
    };

    let keep_out: Vec<Vec<usize>> = arch
        .layers()
        .iter()
        .map(|l| complement(l.out_channels, plan.removal(&l.name)))
        .collect();
    // Input channels of a layer are its inputs' outputs, concatenated.
    let keep_in: Vec<Vec<usize>> = arch
        .layers()
        .iter()
        .map(|l| {
            if l.inputs.is_empty() {
                return (0..l.in_channels).collect();
            }
            let mut keep = Vec::new();
            let mut offset = 0;
            for input in &l.inputs {
                let src = arch.position(input).unwrap();
                keep.extend(keep_out[src].iter().map(|&c| offset + c));
                offset += arch.layers()[src].out_channels;
            }
            keep
        })
        .collect();

    let layers = weights
        .layers()
        .iter()
        .map(|t| match arch.position(t.name()) {
            Some(ai) => t.select(&keep_out[ai], &keep_in[ai]),
            None => t.clone(),
        })
        .collect();
    let new_arch = arch
        .layers()
        .iter()
        .enumerate()
        .map(|(ai, l)| ArchLayer {
            in_channels: keep_in[ai].len(),
            out_channels: keep_out[ai].len(),
            min_filters_floor: l.min_filters_floor.min(keep_out[ai].len()),
            ..l.clone()
        })
        .collect();
    let new_arch = ArchSpec::new(new_arch)
        .expect("a validated plan preserves channel consistency")
        .with_verified(arch.verified());
    Ok(PrunedModel {
        weights: ModelWeights::new(layers).expect("names unchanged"),
        arch: Some(new_arch),
    })
}
