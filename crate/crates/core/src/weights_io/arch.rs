//! Architecture description: layer shapes, connectivity and pruning flags.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("malformed architecture document: {0}")]
    Parse(String),
    #[error("duplicate layer name {0:?}")]
    DuplicateName(String),
    #[error("layer {layer:?}: {field} must be positive")]
    ZeroDimension { layer: String, field: &'static str },
    #[error("layer {layer:?} lists unknown input {input:?}")]
    UnknownInput { layer: String, input: String },
    #[error("connectivity has a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error(
        "channel mismatch: layer {layer:?} declares in_channels {declared} but its inputs {inputs:?} provide {provided}"
    )]
    ChannelMismatch {
        layer: String,
        declared: usize,
        inputs: Vec<String>,
        provided: usize,
    },
    #[error(
        "coupling group {group:?}: {first:?} has {first_out} out channels, {second:?} has {second_out}"
    )]
    CouplingMismatch {
        group: String,
        first: String,
        first_out: usize,
        second: String,
        second_out: usize,
    },
    #[error("layer {layer:?}: min_filters_floor {floor} outside [1, {out}]")]
    Floor {
        layer: String,
        floor: usize,
        out: usize,
    },
}

fn default_true() -> bool {
    true
}

fn default_floor() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default = "default_true")]
    pub prunable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_group: Option<String>,
    #[serde(default = "default_floor")]
    pub min_filters_floor: usize,
}

impl ArchLayer {
    /// A prunable, uncoupled layer with floor 1.
    pub fn conv(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        out_size: (usize, usize),
        inputs: &[&str],
    ) -> Self {
        ArchLayer {
            name: name.into(),
            in_channels,
            out_channels,
            kh: kernel.0,
            kw: kernel.1,
            out_h: out_size.0,
            out_w: out_size.1,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            prunable: true,
            coupling_group: None,
            min_filters_floor: 1,
        }
    }

    /// Eligible for redundancy-driven filter removal: flagged prunable and
    /// not tied to other layers through a coupling group.
    pub fn is_independently_prunable(&self) -> bool {
        self.prunable && self.coupling_group.is_none()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchDocument {
    layers: Vec<ArchLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    verified: Option<bool>,
}

/// Validated architecture. Immutable; derived lookup tables are built once.
#[derive(Debug, Clone)]
pub struct ArchSpec {
    layers: Vec<ArchLayer>,
    index: HashMap<String, usize>,
    topo: Vec<usize>,
    consumers: Vec<Vec<usize>>,
    verified: Option<bool>,
}

impl PartialEq for ArchSpec {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl ArchSpec {
    pub fn new(layers: Vec<ArchLayer>) -> Result<Self, ArchError> {
        let mut index = HashMap::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            for (field, v) in [
                ("in_channels", l.in_channels),
                ("out_channels", l.out_channels),
                ("kh", l.kh),
                ("kw", l.kw),
                ("out_h", l.out_h),
                ("out_w", l.out_w),
            ] {
                if v == 0 {
                    return Err(ArchError::ZeroDimension {
                        layer: l.name.clone(),
                        field,
                    });
                }
            }
            if l.min_filters_floor == 0 || l.min_filters_floor > l.out_channels {
                return Err(ArchError::Floor {
                    layer: l.name.clone(),
                    floor: l.min_filters_floor,
                    out: l.out_channels,
                });
            }
            if index.insert(l.name.clone(), i).is_some() {
                return Err(ArchError::DuplicateName(l.name.clone()));
            }
        }

        let mut consumers = vec![Vec::new(); layers.len()];
        let mut indegree = vec![0usize; layers.len()];
        for (i, l) in layers.iter().enumerate() {
            for input in &l.inputs {
                let &src = index.get(input).ok_or_else(|| ArchError::UnknownInput {
                    layer: l.name.clone(),
                    input: input.clone(),
                })?;
                consumers[src].push(i);
                indegree[i] += 1;
            }
        }

        // Kahn's algorithm; ties resolved by declaration order.
        let mut queue: VecDeque<usize> = (0..layers.len()).filter(|&i| indegree[i] == 0).collect();
        let mut topo = Vec::with_capacity(layers.len());
        while let Some(i) = queue.pop_front() {
            topo.push(i);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if topo.len() != layers.len() {
            let stuck = (0..layers.len())
                .filter(|&i| indegree[i] > 0)
                .map(|i| layers[i].name.clone())
                .collect();
            return Err(ArchError::Cycle(stuck));
        }

        for l in &layers {
            if l.inputs.is_empty() {
                continue;
            }
            let provided: usize = l.inputs.iter().map(|n| layers[index[n]].out_channels).sum();
            if provided != l.in_channels {
                return Err(ArchError::ChannelMismatch {
                    layer: l.name.clone(),
                    declared: l.in_channels,
                    inputs: l.inputs.clone(),
                    provided,
                });
            }
        }

        let mut groups: HashMap<&str, &ArchLayer> = HashMap::new();
        for l in &layers {
            if let Some(g) = &l.coupling_group {
                match groups.get(g.as_str()) {
                    Some(first) if first.out_channels != l.out_channels => {
                        return Err(ArchError::CouplingMismatch {
                            group: g.clone(),
                            first: first.name.clone(),
                            first_out: first.out_channels,
                            second: l.name.clone(),
                            second_out: l.out_channels,
                        });
                    }
                    Some(_) => {}
                    None => {
                        groups.insert(g, l);
                    }
                }
            }
        }

        Ok(ArchSpec {
            layers,
            index,
            topo,
            consumers,
            verified: None,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let doc: ArchDocument =
            serde_json::from_str(text).map_err(|e| ArchError::Parse(e.to_string()))?;
        let mut spec = ArchSpec::new(doc.layers)?;
        spec.verified = doc.verified;
        Ok(spec)
    }

    /// Pretty JSON (`{"layers": [...]}`), newline-terminated.
    pub fn to_json(&self) -> String {
        let doc = ArchDocument {
            layers: self.layers.clone(),
            verified: self.verified,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("arch serialization is infallible");
        s.push('\n');
        s
    }

    pub fn layers(&self) -> &[ArchLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&ArchLayer> {
        self.index.get(name).map(|&i| &self.layers[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Layer indices in a topological order of the connectivity graph.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Indices of layers that list layer `i` among their inputs.
    pub fn consumers(&self, i: usize) -> &[usize] {
        &self.consumers[i]
    }

    /// `Some(false)` for skeletons emitted by the checkpoint exporter.
    pub fn verified(&self) -> Option<bool> {
        self.verified
    }

    pub fn with_verified(mut self, verified: Option<bool>) -> Self {
        self.verified = verified;
        self
    }
}

pub fn load_arch(path: impl AsRef<Path>) -> Result<ArchSpec, ArchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ArchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = ArchSpec::from_json(&text)?;
    if spec.verified == Some(false) {
        log::warn!(
            "{}: architecture connectivity is marked unverified; check residual coupling by hand",
            path.display()
        );
    }
    Ok(spec)
}
