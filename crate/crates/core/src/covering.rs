//! Covering numbers of filter graphs.
//!
//! The exact ℓ-covering number is the minimum number of radius-ℓ balls (in
//! the hop metric) whose union is every live vertex. It is NP-hard, so the
//! planner works from two greedy sequences instead:
//!
//! * `n1`: centres picked in decreasing-degree order among still-uncovered
//!   vertices until the radius-1 balls cover the graph. Always a valid
//!   1-cover, so `N1c <= n1`.
//! * `n2`: the same procedure with radius-2 balls. Consecutive centres lie
//!   outside each other's radius-2 balls, so the centres are pairwise at
//!   distance >= 3 and no radius-1 ball can hold two of them: `n2 <= N1c`.
//!
//! The estimate used downstream is the midpoint `(n1 + n2) / 2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter_graph::Graph;

/// Default vertex limit for [`covering_oracle`].
pub const DEFAULT_ORACLE_MAX_VERTICES: usize = 25;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoverError {
    #[error("graph has {vertices} live vertices; exhaustive search is limited to {limit}")]
    TooLarge { vertices: usize, limit: usize },
    #[error("no cover with at most {limit} balls exists")]
    CoverAboveLimit { limit: usize },
}

/// How "degree" is read when choosing the next greedy centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeMode {
    /// Degree in the whole graph.
    #[default]
    FullGraph,
    /// Degree inside the subgraph induced by the still-uncovered vertices.
    Residual,
}

/// Greedy centre sequence for one radius.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyCover {
    pub radius: usize,
    pub centers: Vec<usize>,
}

impl GreedyCover {
    pub fn size(&self) -> usize {
        self.centers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverEstimate {
    pub n1: usize,
    pub n2: usize,
}

impl CoverEstimate {
    /// `(n1 + n2) / 2`, unrounded.
    pub fn estimate(&self) -> f64 {
        (self.n1 + self.n2) as f64 / 2.0
    }

    pub fn gap(&self) -> usize {
        self.n1 - self.n2
    }
}

/// Marks the radius-`r` ball around a centre, reusing buffers across calls.
struct BallMarker {
    stamp: Vec<u32>,
    epoch: u32,
    frontier: Vec<usize>,
    next: Vec<usize>,
}

impl BallMarker {
    fn new(universe: usize) -> Self {
        BallMarker {
            stamp: vec![0; universe],
            epoch: 0,
            frontier: Vec::new(),
            next: Vec::new(),
        }
    }

    /// Calls `visit` once for every vertex within `radius` of `center`.
    fn for_each(&mut self, g: &Graph, center: usize, radius: usize, mut visit: impl FnMut(usize)) {
        self.epoch += 1;
        let epoch = self.epoch;
        self.stamp[center] = epoch;
        visit(center);
        self.frontier.clear();
        self.frontier.push(center);
        for _ in 0..radius {
            self.next.clear();
            for &u in &self.frontier {
                for &w in g.neighbors(u) {
                    if self.stamp[w] != epoch {
                        self.stamp[w] = epoch;
                        visit(w);
                        self.next.push(w);
                    }
                }
            }
            if self.next.is_empty() {
                break;
            }
            std::mem::swap(&mut self.frontier, &mut self.next);
        }
    }
}

/// Greedy ball sequence with full-graph degrees.
pub fn greedy_cover(g: &Graph, radius: usize) -> GreedyCover {
    greedy_cover_with(g, radius, DegreeMode::FullGraph)
}

/// Greedy ball sequence. The next centre is the uncovered vertex of
/// maximum degree (per `mode`); ties go to the lowest vertex id.
pub fn greedy_cover_with(g: &Graph, radius: usize, mode: DegreeMode) -> GreedyCover {
    let mut covered = vec![false; g.universe()];
    let mut marker = BallMarker::new(g.universe());
    let mut centers = Vec::new();
    let mut mark = |c: usize, covered: &mut Vec<bool>| {
        marker.for_each(g, c, radius, |v| covered[v] = true);
    };

    match mode {
        DegreeMode::FullGraph => {
            // Degrees never change, so scanning in (degree desc, id asc)
            // order and taking each uncovered vertex reproduces the
            // max-degree-among-uncovered choice at every step.
            let mut order: Vec<usize> = g.vertices().collect();
            order.sort_by_key(|&v| (std::cmp::Reverse(g.neighbors(v).len()), v));
            for v in order {
                if !covered[v] {
                    centers.push(v);
                    mark(v, &mut covered);
                }
            }
        }
        DegreeMode::Residual => {
            let mut remaining = g.live_count();
            while remaining > 0 {
                let best = g
                    .vertices()
                    .filter(|&v| !covered[v])
                    .max_by_key(|&v| {
                        let d = g.neighbors(v).iter().filter(|&&w| !covered[w]).count();
                        (d, std::cmp::Reverse(v))
                    })
                    .expect("an uncovered vertex exists");
                centers.push(best);
                mark(best, &mut covered);
                remaining = g.vertices().filter(|&v| !covered[v]).count();
            }
        }
    }
    GreedyCover { radius, centers }
}

/// `n1`/`n2` sandwich for the 1-covering number.
pub fn estimate_n1c(g: &Graph) -> CoverEstimate {
    estimate_n1c_with(g, DegreeMode::FullGraph)
}

pub fn estimate_n1c_with(g: &Graph, mode: DegreeMode) -> CoverEstimate {
    CoverEstimate {
        n1: greedy_cover_with(g, 1, mode).size(),
        n2: greedy_cover_with(g, 2, mode).size(),
    }
}

/// Bounds on exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    /// Refuse graphs with more live vertices than this.
    pub max_vertices: usize,
    /// Give up once every subset of this many centres has failed.
    pub max_cover: Option<usize>,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_vertices: DEFAULT_ORACLE_MAX_VERTICES,
            max_cover: None,
        }
    }
}

/// Exact ℓ-covering number under the default size guard.
pub fn covering_oracle(g: &Graph, radius: usize) -> Result<usize, CoverError> {
    covering_oracle_with(g, radius, OracleLimits::default())
}

/// Exact ℓ-covering number by exhaustive search.
///
/// The graph is split into connected components first (a ball never
/// crosses components, so the covering number is the sum over them). In
/// each component, subsets of centres are tried in increasing cardinality
/// and lexicographic order; the first subset whose balls cover the
/// component ends the search.
pub fn covering_oracle_with(
    g: &Graph,
    radius: usize,
    limits: OracleLimits,
) -> Result<usize, CoverError> {
    if g.live_count() > limits.max_vertices {
        return Err(CoverError::TooLarge {
            vertices: g.live_count(),
            limit: limits.max_vertices,
        });
    }
    let mut marker = BallMarker::new(g.universe());
    let mut total = 0;
    for members in g.components().groups() {
        let budget = limits.max_cover.map(|m| m.saturating_sub(total));
        total += component_cover(g, &members, radius, &mut marker, budget).ok_or(
            CoverError::CoverAboveLimit {
                limit: limits.max_cover.unwrap_or(usize::MAX),
            },
        )?;
    }
    Ok(total)
}

fn component_cover(
    g: &Graph,
    members: &[usize],
    radius: usize,
    marker: &mut BallMarker,
    budget: Option<usize>,
) -> Option<usize> {
    // Balls as lists of local (component) indices.
    let mut local = vec![usize::MAX; g.universe()];
    for (i, &v) in members.iter().enumerate() {
        local[v] = i;
    }
    let balls: Vec<Vec<usize>> = members
        .iter()
        .map(|&c| {
            let mut ball = Vec::new();
            marker.for_each(g, c, radius, |v| ball.push(local[v]));
            ball
        })
        .collect();

    let n = members.len();
    let max_size = budget.unwrap_or(n).min(n);
    let mut hit = vec![0u32; n];
    let mut epoch = 0u32;
    for size in 1..=max_size {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            epoch += 1;
            let mut count = 0;
            for &c in &idx {
                for &v in &balls[c] {
                    if hit[v] != epoch {
                        hit[v] = epoch;
                        count += 1;
                    }
                }
            }
            if count == n {
                return Some(size);
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    None
}

/// Advance `idx` (strictly increasing, values < n) to the next
/// combination in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in (i + 1)..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
