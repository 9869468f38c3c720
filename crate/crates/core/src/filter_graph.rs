//! Per-layer filter graphs.
//!
//! Every output filter of a layer is flattened to a vector of length
//! `n = in * kh * kw` and scaled to unit length. Two filters are joined when
//! their Euclidean distance divided by `sqrt(n)` is at most `gamma`. The
//! resulting undirected graph carries the hop metric, degrees and connected
//! components that the covering and redundancy modules consume.

use std::collections::VecDeque;

use rayon::prelude::*;
use thiserror::Error;

use crate::weights_io::LayerTensor;

/// Filters whose L2 norm falls below this are treated as dead.
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("vertex {0} is not a live vertex of the graph")]
    UnknownVertex(usize),
    #[error("vector {index} has dimension {found}, expected {expected}")]
    MixedDimensions {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("gamma must be a positive number, got {0}")]
    InvalidGamma(f64),
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references a vertex outside the graph")]
    VertexOutOfRange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormFlag {
    Unit,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterVector {
    pub index: usize,
    pub coords: Vec<f64>,
    pub norm: NormFlag,
}

impl FilterVector {
    /// Scale `coords` to unit length, or flag the vector as zero when its
    /// norm is below [`ZERO_NORM_EPS`].
    pub fn from_coords(index: usize, mut coords: Vec<f64>) -> Self {
        let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm < ZERO_NORM_EPS {
            coords.iter_mut().for_each(|c| *c = 0.0);
            FilterVector {
                index,
                coords,
                norm: NormFlag::Zero,
            }
        } else {
            coords.iter_mut().for_each(|c| *c /= norm);
            FilterVector {
                index,
                coords,
                norm: NormFlag::Unit,
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// One unit (or zero-flagged) vector per output filter.
pub fn flatten_normalize(layer: &LayerTensor) -> Vec<FilterVector> {
    layer
        .filters()
        .enumerate()
        .map(|(i, f)| FilterVector::from_coords(i, f.iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Simple undirected graph over the vertex universe `0..universe`, of which
/// a subset is live. Removed vertices keep their ids so that vertex `i`
/// always refers to the same filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
    live: Vec<bool>,
    live_count: usize,
    edge_count: usize,
}

/// Connected components of the live vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// Quotient space size.
    pub count: usize,
    /// Component id per vertex id; `None` for removed vertices. Ids are
    /// assigned in order of each component's lowest vertex.
    pub labels: Vec<Option<usize>>,
}

impl Components {
    /// Live vertex ids grouped by component, each group ascending.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.count];
        for (v, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                groups[*c].push(v);
            }
        }
        groups
    }
}

impl Graph {
    /// Graph on `universe` vertices, all live. Duplicate edges are merged.
    pub fn from_edges(
        universe: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let mut adj = vec![Vec::new(); universe];
        for (u, v) in edges {
            if u >= universe || v >= universe {
                return Err(GraphError::VertexOutOfRange(u, v));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let edge_count = adj.iter().map(Vec::len).sum::<usize>() / 2;
        Ok(Graph {
            adj,
            live: vec![true; universe],
            live_count: universe,
            edge_count,
        })
    }

    pub fn empty(universe: usize) -> Self {
        Graph::from_edges(universe, std::iter::empty()).unwrap()
    }

    /// Size of the vertex id space, including removed vertices.
    pub fn universe(&self) -> usize {
        self.adj.len()
    }

    pub fn live_count(&self) -> usize {
        self.live_count
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_live(&self, v: usize) -> bool {
        self.live.get(v).copied().unwrap_or(false)
    }

    pub fn vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.adj.len()).filter(move |&v| self.live[v])
    }

    /// Live neighbours of `v`, ascending. Empty for removed vertices.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.is_live(u) && self.adj[u].binary_search(&v).is_ok()
    }

    fn check(&self, v: usize) -> Result<(), GraphError> {
        if self.is_live(v) {
            Ok(())
        } else {
            Err(GraphError::UnknownVertex(v))
        }
    }

    pub fn degree(&self, v: usize) -> Result<usize, GraphError> {
        self.check(v)?;
        Ok(self.adj[v].len())
    }

    /// Hop distances from `src` to every vertex id; `None` where unreachable
    /// or removed.
    pub fn distances_from(&self, src: usize) -> Result<Vec<Option<usize>>, GraphError> {
        self.check(src)?;
        let mut dist = vec![None; self.adj.len()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap() + 1;
            for &w in &self.adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(d);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Shortest-path edge count, `None` when `u` and `v` are disconnected.
    pub fn distance(&self, u: usize, v: usize) -> Result<Option<usize>, GraphError> {
        self.check(v)?;
        if u == v {
            self.check(u)?;
            return Ok(Some(0));
        }
        Ok(self.distances_from(u)?[v])
    }

    /// Closed ball `{x : d(center, x) <= radius}`, ascending.
    pub fn ball(&self, center: usize, radius: usize) -> Result<Vec<usize>, GraphError> {
        self.check(center)?;
        let mut seen = vec![false; self.adj.len()];
        let mut frontier = vec![center];
        seen[center] = true;
        let mut out = vec![center];
        for _ in 0..radius {
            let mut next = Vec::new();
            for u in frontier {
                for &w in &self.adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        next.push(w);
                        out.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Components by union-find over the edge list.
    pub fn components(&self) -> Components {
        let mut uf = UnionFind::new(self.adj.len());
        for u in self.vertices() {
            for &w in &self.adj[u] {
                if w > u {
                    uf.union(u, w);
                }
            }
        }
        let mut root_label = vec![usize::MAX; self.adj.len()];
        let mut labels = vec![None; self.adj.len()];
        let mut count = 0;
        for v in self.vertices() {
            let r = uf.find(v);
            if root_label[r] == usize::MAX {
                root_label[r] = count;
                count += 1;
            }
            labels[v] = Some(root_label[r]);
        }
        Components { count, labels }
    }

    /// Induced subgraph without `v`.
    pub fn remove_vertex(&self, v: usize) -> Result<Graph, GraphError> {
        let mut g = self.clone();
        g.remove_vertex_in_place(v)?;
        Ok(g)
    }

    pub(crate) fn remove_vertex_in_place(&mut self, v: usize) -> Result<(), GraphError> {
        self.check(v)?;
        let nbrs = std::mem::take(&mut self.adj[v]);
        for &w in &nbrs {
            let list = &mut self.adj[w];
            if let Ok(pos) = list.binary_search(&v) {
                list.remove(pos);
            }
        }
        self.edge_count -= nbrs.len();
        self.live[v] = false;
        self.live_count -= 1;
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Threshold graph over a layer's normalized filters.
#[derive(Debug, Clone)]
pub struct FilterGraph {
    graph: Graph,
    vectors: Vec<FilterVector>,
    gamma: f64,
    dim: usize,
}

/// `|x - y| / sqrt(n)`, accumulated in f64.
pub fn normalized_distance(x: &[f64], y: &[f64]) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    sq.sqrt() / (x.len() as f64).sqrt()
}

/// Join every pair of unit vectors at normalized distance `<= gamma`.
/// Zero-flagged vectors stay isolated. Vertex `i` is `vectors[i]`.
pub fn build_graph(vectors: Vec<FilterVector>, gamma: f64) -> Result<FilterGraph, GraphError> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(GraphError::InvalidGamma(gamma));
    }
    let dim = vectors.first().map_or(0, FilterVector::dim);
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.dim() != dim) {
        return Err(GraphError::MixedDimensions {
            index,
            expected: dim,
            found: v.dim(),
        });
    }

    let upper: Vec<Vec<usize>> = (0..vectors.len())
        .into_par_iter()
        .map(|i| {
            if vectors[i].norm == NormFlag::Zero {
                return Vec::new();
            }
            ((i + 1)..vectors.len())
                .filter(|&j| {
                    vectors[j].norm == NormFlag::Unit
                        && normalized_distance(&vectors[i].coords, &vectors[j].coords) <= gamma
                })
                .collect()
        })
        .collect();
    let edges = upper
        .iter()
        .enumerate()
        .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)));
    let graph = Graph::from_edges(vectors.len(), edges)?;
    Ok(FilterGraph {
        graph,
        vectors,
        gamma,
        dim,
    })
}

impl FilterGraph {
    /// Convenience: normalize a layer's filters and build its graph.
    pub fn from_layer(layer: &LayerTensor, gamma: f64) -> Result<Self, GraphError> {
        build_graph(flatten_normalize(layer), gamma)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn vectors(&self) -> &[FilterVector] {
        &self.vectors
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn live_count(&self) -> usize {
        self.graph.live_count()
    }

    pub fn distance(&self, u: usize, v: usize) -> Result<Option<usize>, GraphError> {
        self.graph.distance(u, v)
    }

    pub fn degree(&self, v: usize) -> Result<usize, GraphError> {
        self.graph.degree(v)
    }

    pub fn components(&self) -> Components {
        self.graph.components()
    }

    pub fn remove_vertex(&self, v: usize) -> Result<FilterGraph, GraphError> {
        Ok(FilterGraph {
            graph: self.graph.remove_vertex(v)?,
            vectors: self.vectors.clone(),
            gamma: self.gamma,
            dim: self.dim,
        })
    }

    pub(crate) fn remove_vertex_in_place(&mut self, v: usize) -> Result<(), GraphError> {
        self.graph.remove_vertex_in_place(v)
    }
}
