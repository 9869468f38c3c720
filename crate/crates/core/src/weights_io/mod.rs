//! Convolution weight tensors, the `.nrpw` container, architecture
//! descriptions, and the binding of one to the other.

mod arch;
mod nrpw;

use std::collections::HashSet;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use arch::{load_arch, ArchError, ArchLayer, ArchSpec};
pub use nrpw::{load_weights, parse_weights, serialize_weights, write_weights, MAGIC, VERSION};

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("file too short: expected {expected} bytes, found {actual}")]
    ShortFile { expected: u64, actual: u64 },
    #[error("bad magic at offset 0: expected \"NRPW\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found} at offset 4 (expected 1)")]
    Version { found: u32 },
    #[error("malformed header at offset {offset}: {message}")]
    Header { offset: u64, message: String },
    #[error("layer {layer:?}: {message}")]
    InvalidLayer { layer: String, message: String },
    #[error("layer {layer:?}: header len {declared} bytes disagrees with its shape ({expected} bytes)")]
    LengthMismatch {
        layer: String,
        declared: u64,
        expected: u64,
    },
    #[error("layer {layer:?}: data region overlaps a previous tensor at offset {offset}")]
    Overlap { layer: String, offset: u64 },
    #[error("layer {layer:?}: unclaimed payload bytes at offset {offset}")]
    Gap { layer: String, offset: u64 },
    #[error("trailing garbage: {count} bytes at offset {offset} after the last tensor")]
    TrailingBytes { offset: u64, count: u64 },
    #[error("layer {layer:?}: non-finite value at element {index} (offset {offset})")]
    NonFinite {
        layer: String,
        index: u64,
        offset: u64,
    },
    #[error("duplicate layer name {0:?}")]
    DuplicateName(String),
}

/// One convolution's weights, `[out][in][kh][kw]` row-major.
///
/// Equality is bitwise on the stored values.
#[derive(Debug, Clone)]
pub struct LayerTensor {
    name: String,
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    values: Vec<f32>,
}

impl PartialEq for LayerTensor {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.shape() == other.shape()
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl LayerTensor {
    pub fn new(
        name: impl Into<String>,
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        values: Vec<f32>,
    ) -> Result<Self, WeightsError> {
        let name = name.into();
        let dims = [out_channels, in_channels, kh, kw];
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|_| dims.iter().all(|&d| d > 0));
        match expected {
            Some(n) if n == values.len() => {}
            Some(n) => {
                return Err(WeightsError::InvalidLayer {
                    layer: name,
                    message: format!("{} values for shape {:?} ({} expected)", values.len(), dims, n),
                })
            }
            None => {
                return Err(WeightsError::InvalidLayer {
                    layer: name,
                    message: format!("invalid shape {dims:?}"),
                })
            }
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(WeightsError::NonFinite {
                layer: name,
                index: index as u64,
                offset: 4 * index as u64,
            });
        }
        Ok(LayerTensor {
            name,
            out_channels,
            in_channels,
            kh,
            kw,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    /// `(out, in, kh, kw)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.out_channels, self.in_channels, self.kh, self.kw)
    }

    /// Length of one flattened filter, `in * kh * kw`.
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Weights of output filter `i`, flattened.
    pub fn filter(&self, i: usize) -> &[f32] {
        let n = self.filter_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn filters(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.filter_len())
    }

    /// Copy keeping only the listed output filters and input channels, in
    /// the order given.
    pub(crate) fn select(&self, keep_out: &[usize], keep_in: &[usize]) -> LayerTensor {
        let spatial = self.kh * self.kw;
        let mut values = Vec::with_capacity(keep_out.len() * keep_in.len() * spatial);
        for &o in keep_out {
            let filter = self.filter(o);
            for &c in keep_in {
                values.extend_from_slice(&filter[c * spatial..(c + 1) * spatial]);
            }
        }
        LayerTensor {
            name: self.name.clone(),
            out_channels: keep_out.len(),
            in_channels: keep_in.len(),
            kh: self.kh,
            kw: self.kw,
            values,
        }
    }
}

/// Ordered collection of layer tensors with unique names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelWeights {
    layers: Vec<LayerTensor>,
}

impl ModelWeights {
    pub fn new(layers: Vec<LayerTensor>) -> Result<Self, WeightsError> {
        let mut seen = HashSet::with_capacity(layers.len());
        for l in &layers {
            if !seen.insert(l.name.as_str()) {
                return Err(WeightsError::DuplicateName(l.name.clone()));
            }
        }
        Ok(ModelWeights { layers })
    }

    pub fn layers(&self) -> &[LayerTensor] {
        &self.layers
    }

    pub fn get(&self, name: &str) -> Option<&LayerTensor> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Hex SHA-256 of the canonical serialization. Identifies the exact
    /// weights a plan was computed from.
    pub fn digest(&self) -> String {
        let bytes = serialize_weights(self);
        let hash = Sha256::digest(&bytes);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Error)]
pub enum BindError {
    #[error("architecture layer {0:?} has no tensor in the weights file")]
    MissingLayer(String),
    #[error(
        "layer {layer:?}: architecture expects (out, in, kh, kw) = {expected:?}, tensor has {actual:?}"
    )]
    DimensionMismatch {
        layer: String,
        expected: (usize, usize, usize, usize),
        actual: (usize, usize, usize, usize),
    },
}

/// A weights tensor paired with the architecture entry it implements.
#[derive(Debug, Clone)]
pub struct Binding {
    pub name: String,
    pub weight_index: usize,
    pub arch_index: Option<usize>,
    /// Eligible for filter removal by the allocator.
    pub prunable: bool,
    pub floor: usize,
}

/// Weights bound to an (optional) architecture. Without an architecture
/// every tensor is treated as an independent prunable layer with floor 1.
#[derive(Debug, Clone)]
pub struct BoundModel {
    weights: ModelWeights,
    arch: Option<ArchSpec>,
    bindings: Vec<Binding>,
    unreferenced: Vec<String>,
}

impl BoundModel {
    pub fn unbound(weights: ModelWeights) -> Self {
        let bindings = weights
            .layers()
            .iter()
            .enumerate()
            .map(|(i, t)| Binding {
                name: t.name().to_string(),
                weight_index: i,
                arch_index: None,
                prunable: true,
                floor: 1,
            })
            .collect();
        BoundModel {
            weights,
            arch: None,
            bindings,
            unreferenced: Vec::new(),
        }
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn arch(&self) -> Option<&ArchSpec> {
        self.arch.as_ref()
    }

    /// Bound layers, in architecture order (weights order when unbound).
    pub fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    pub fn binding(&self, name: &str) -> Option<&Binding> {
        self.bindings.iter().find(|b| b.name == name)
    }

    pub fn tensor(&self, binding: &Binding) -> &LayerTensor {
        &self.weights.layers()[binding.weight_index]
    }

    /// Weights layers not referenced by the architecture.
    pub fn unreferenced(&self) -> &[String] {
        &self.unreferenced
    }
}

/// Pair every architecture layer with its tensor. Extra tensors in the
/// weights file are accepted and reported through [`BoundModel::unreferenced`].
pub fn bind(weights: ModelWeights, arch: ArchSpec) -> Result<BoundModel, BindError> {
    let mut bindings = Vec::with_capacity(arch.layers().len());
    for (ai, layer) in arch.layers().iter().enumerate() {
        let wi = weights
            .position(&layer.name)
            .ok_or_else(|| BindError::MissingLayer(layer.name.clone()))?;
        let t = &weights.layers()[wi];
        let expected = (layer.out_channels, layer.in_channels, layer.kh, layer.kw);
        if t.shape() != expected {
            return Err(BindError::DimensionMismatch {
                layer: layer.name.clone(),
                expected,
                actual: t.shape(),
            });
        }
        bindings.push(Binding {
            name: layer.name.clone(),
            weight_index: wi,
            arch_index: Some(ai),
            prunable: layer.is_independently_prunable(),
            floor: layer.min_filters_floor,
        });
    }
    let unreferenced: Vec<String> = weights
        .layers()
        .iter()
        .filter(|t| arch.layer(t.name()).is_none())
        .map(|t| t.name().to_string())
        .collect();
    if !unreferenced.is_empty() {
        log::warn!(
            "weights contain layers not referenced by the architecture: {}",
            unreferenced.join(", ")
        );
    }
    Ok(BoundModel {
        weights,
        arch: Some(arch),
        bindings,
        unreferenced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(name: &str, out: usize, inp: usize) -> LayerTensor {
        let n = out * inp * 9;
        LayerTensor::new(name, out, inp, 3, 3, (0..n).map(|i| i as f32 * 0.01).collect()).unwrap()
    }

    fn arch() -> ArchSpec {
        ArchSpec::new(vec![
            ArchLayer::conv("c1", 3, 16, (3, 3), (8, 8), &[]),
            ArchLayer::conv("c2", 16, 32, (3, 3), (8, 8), &["c1"]),
        ])
        .unwrap()
    }

    #[test]
    fn binds_matching_pair() {
        let w = ModelWeights::new(vec![tensor("c1", 16, 3), tensor("c2", 32, 16)]).unwrap();
        let m = bind(w, arch()).unwrap();
        assert_eq!(m.bindings().len(), 2);
        assert!(m.unreferenced().is_empty());
    }

    #[test]
    fn bind_is_independent_of_file_order() {
        let w = ModelWeights::new(vec![tensor("c2", 32, 16), tensor("c1", 16, 3)]).unwrap();
        let m = bind(w, arch()).unwrap();
        assert_eq!(m.bindings()[0].name, "c1");
        assert_eq!(m.tensor(&m.bindings()[0]).name(), "c1");
    }

    #[test]
    fn dimension_mismatch() {
        let w = ModelWeights::new(vec![tensor("c1", 15, 3), tensor("c2", 32, 16)]).unwrap();
        assert!(matches!(
            bind(w, arch()),
            Err(BindError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn missing_layer() {
        let w = ModelWeights::new(vec![tensor("c1", 16, 3)]).unwrap();
        assert!(matches!(bind(w, arch()), Err(BindError::MissingLayer(n)) if n == "c2"));
    }

    #[test]
    fn extra_layer_is_reported_not_rejected() {
        let w = ModelWeights::new(vec![
            tensor("c1", 16, 3),
            tensor("c2", 32, 16),
            tensor("fc", 10, 32),
        ])
        .unwrap();
        let m = bind(w, arch()).unwrap();
        assert_eq!(m.unreferenced(), &["fc".to_string()]);
    }

    #[test]
    fn tensor_rejects_nan_and_bad_length() {
        assert!(LayerTensor::new("x", 1, 1, 1, 2, vec![1.0, f32::NAN]).is_err());
        assert!(LayerTensor::new("x", 1, 1, 1, 2, vec![1.0]).is_err());
        assert!(LayerTensor::new("x", 0, 1, 1, 1, vec![]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(matches!(
            ModelWeights::new(vec![tensor("a", 1, 1), tensor("a", 1, 1)]),
            Err(WeightsError::DuplicateName(_))
        ));
    }

    #[test]
    fn select_slices_filters_and_channels() {
        let t = LayerTensor::new("t", 2, 3, 1, 1, vec![0., 1., 2., 10., 11., 12.]).unwrap();
        let s = t.select(&[1], &[0, 2]);
        assert_eq!(s.shape(), (1, 2, 1, 1));
        assert_eq!(s.values(), &[10., 12.]);
    }
}
