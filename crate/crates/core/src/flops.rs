//! FLOPs accounting for convolution stacks.
//!
//! A convolution costs `2 * out * in * kh * kw * out_h * out_w` (one
//! multiply and one add per MAC). Bias, normalization and activation terms
//! are not counted. Drop fractions are independent of the factor 2.

use serde::{Deserialize, Serialize};

use crate::selection::{PlanError, PruningPlan};
use crate::weights_io::{ArchLayer, ArchSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    /// Per-layer costs in architecture order.
    pub layers: Vec<LayerFlops>,
    pub total: u64,
    /// Unpruned total; present for plan reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_total: Option<u64>,
    /// `1 - total / base_total`; present for plan reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_fraction: Option<f64>,
}

fn conv_flops(out: usize, inp: usize, l: &ArchLayer) -> u64 {
    2 * out as u64 * inp as u64 * l.kh as u64 * l.kw as u64 * l.out_h as u64 * l.out_w as u64
}

pub fn layer_flops(layer: &ArchLayer) -> u64 {
    conv_flops(layer.out_channels, layer.in_channels, layer)
}

pub fn model_flops(arch: &ArchSpec) -> FlopsReport {
    let layers: Vec<LayerFlops> = arch
        .layers()
        .iter()
        .map(|l| LayerFlops {
            name: l.name.clone(),
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            flops: layer_flops(l),
        })
        .collect();
    let total = layers.iter().map(|l| l.flops).sum();
    FlopsReport {
        layers,
        total,
        base_total: None,
        drop_fraction: None,
    }
}

/// Channel widths after removing `removed[i]` filters from arch layer `i`:
/// out-channels shrink at the layer itself, in-channels at every consumer.
pub(crate) fn pruned_widths(arch: &ArchSpec, removed: &[usize]) -> Vec<(usize, usize)> {
    let layers = arch.layers();
    let outs: Vec<usize> = layers
        .iter()
        .zip(removed)
        .map(|(l, &r)| l.out_channels - r)
        .collect();
    layers
        .iter()
        .zip(&outs)
        .map(|(l, &out)| {
            let inp = if l.inputs.is_empty() {
                l.in_channels
            } else {
                l.inputs.iter().map(|n| outs[arch.position(n).unwrap()]).sum()
            };
            (inp, out)
        })
        .collect()
}

/// Report for the architecture with `removed[i]` filters taken from layer `i`.
pub fn flops_after_removal(arch: &ArchSpec, removed: &[usize]) -> FlopsReport {
    assert_eq!(removed.len(), arch.layers().len());
    let base = model_flops(arch).total;
    let layers: Vec<LayerFlops> = arch
        .layers()
        .iter()
        .zip(pruned_widths(arch, removed))
        .map(|(l, (inp, out))| LayerFlops {
            name: l.name.clone(),
            in_channels: inp,
            out_channels: out,
            flops: conv_flops(out, inp, l),
        })
        .collect();
    let total: u64 = layers.iter().map(|l| l.flops).sum();
    let drop_fraction = if base == 0 {
        0.0
    } else {
        1.0 - total as f64 / base as f64
    };
    FlopsReport {
        layers,
        total,
        base_total: Some(base),
        drop_fraction: Some(drop_fraction),
    }
}

/// FLOPs of the architecture once `plan` is applied.
pub fn plan_flops_drop(arch: &ArchSpec, plan: &PruningPlan) -> Result<FlopsReport, PlanError> {
    plan.validate_against(arch)?;
    let mut removed = vec![0usize; arch.layers().len()];
    for (name, indices) in plan.layers() {
        removed[arch.position(name).unwrap()] = indices.len();
    }
    Ok(flops_after_removal(arch, &removed))
}
