//! Finite graphs, graph-distance queries and growth checks.
//!
//! Vertices are `0..vertex_count`. Lattices use row-major order: for side
//! lengths `[d0, d1, .., dk]` the vertex with coordinates `(c0, .., ck)` has
//! index `((c0 * d1 + c1) * d2 + c2) ...`, i.e. the last coordinate varies
//! fastest.

mod partition;

pub use partition::{partition_cover, BlockHalves, Partition};

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

/// Marker for "not reached" in BFS distance rows.
pub const UNREACHED: u32 = u32::MAX;

/// Above this many vertices the distance oracle never caches more rows
/// than [`DistanceOracle::MAX_CACHED_ROWS`].
pub const ALL_PAIRS_LIMIT: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("lattice needs at least one dimension")]
    ZeroDimensional,
    #[error("lattice side {side} too short (need >= {min})")]
    SideTooShort { side: usize, min: usize },
    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("vertex set is empty")]
    EmptySet,
    #[error("vertex set is not connected")]
    SetDisconnected,
    #[error("block {0} has a single vertex and cannot be halved")]
    UnsplittableBlock(usize),
    #[error("malformed edge list at line {line}: {msg}")]
    EdgeList { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Undirected simple connected graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    label: String,
    adjacency: Vec<Vec<usize>>,
    lattice: Option<LatticeShape>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LatticeShape {
    pub dims: Vec<usize>,
    pub periodic: bool,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Duplicate edges are
    /// merged; self-loops and disconnected inputs are rejected.
    pub fn from_edges(
        vertex_count: usize,
        edges: &[(usize, usize)],
        label: impl Into<String>,
    ) -> Result<Self, GraphError> {
        if vertex_count == 0 {
            return Err(GraphError::EmptySet);
        }
        let mut adjacency = vec![Vec::new(); vertex_count];
        for &(u, v) in edges {
            if u >= vertex_count {
                return Err(GraphError::VertexOutOfRange(u));
            }
            if v >= vertex_count {
                return Err(GraphError::VertexOutOfRange(v));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let graph = Graph {
            label: label.into(),
            adjacency,
            lattice: None,
        };
        if !graph.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(graph)
    }

    /// Nearest-neighbour lattice on a box with the given side lengths.
    pub fn lattice(dims: &[usize], periodic: bool) -> Result<Self, GraphError> {
        if dims.is_empty() {
            return Err(GraphError::ZeroDimensional);
        }
        let min = if periodic { 3 } else { 2 };
        if let Some(&side) = dims.iter().find(|&&d| d < min) {
            return Err(GraphError::SideTooShort { side, min });
        }
        let n: usize = dims.iter().product();
        let mut edges = Vec::with_capacity(n * dims.len());
        let mut coords = vec![0usize; dims.len()];
        for v in 0..n {
            for axis in 0..dims.len() {
                let c = coords[axis];
                let next = if c + 1 < dims[axis] {
                    Some(c + 1)
                } else if periodic {
                    Some(0)
                } else {
                    None
                };
                if let Some(nc) = next {
                    let mut other = coords.clone();
                    other[axis] = nc;
                    edges.push((v, lattice_index(dims, &other)));
                }
            }
            increment(&mut coords, dims);
        }
        let label = format!(
            "Z{}-{}-{}",
            dims.len(),
            if periodic { "torus" } else { "box" },
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x")
        );
        let mut g = Graph::from_edges(n, &edges, label)?;
        g.lattice = Some(LatticeShape {
            dims: dims.to_vec(),
            periodic,
        });
        Ok(g)
    }

    /// Path graph on `n` vertices.
    pub fn path(n: usize) -> Result<Self, GraphError> {
        Self::lattice(&[n], false)
    }

    /// Reads a plain-text edge list: one `u v` pair per line, 0-indexed.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_edge_list_file(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io(e.to_string()))?;
        Self::from_edge_list_str(&text, path.display().to_string())
    }

    pub fn from_edge_list_str(text: &str, label: impl Into<String>) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        let mut max_vertex = 0usize;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut parse = |what: &str| -> Result<usize, GraphError> {
                parts
                    .next()
                    .ok_or_else(|| GraphError::EdgeList {
                        line: i + 1,
                        msg: format!("missing {what} vertex"),
                    })?
                    .parse()
                    .map_err(|e| GraphError::EdgeList {
                        line: i + 1,
                        msg: format!("bad {what} vertex: {e}"),
                    })
            };
            let u = parse("first")?;
            let v = parse("second")?;
            if parts.next().is_some() {
                return Err(GraphError::EdgeList {
                    line: i + 1,
                    msg: "expected exactly two vertices".into(),
                });
            }
            max_vertex = max_vertex.max(u).max(v);
            edges.push((u, v));
        }
        if edges.is_empty() {
            return Err(GraphError::EmptySet);
        }
        Self::from_edges(max_vertex + 1, &edges, label)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lattice_shape(&self) -> Option<&LatticeShape> {
        self.lattice.as_ref()
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, x: usize) -> &[usize] {
        &self.adjacency[x]
    }

    pub fn degree(&self, x: usize) -> usize {
        self.adjacency[x].len()
    }

    /// Row-major index of lattice coordinates. Panics on non-lattice graphs.
    pub fn vertex_at(&self, coords: &[usize]) -> usize {
        let shape = self.lattice.as_ref().expect("vertex_at on a non-lattice graph");
        lattice_index(&shape.dims, coords)
    }

    /// Coordinates of a lattice vertex.
    pub fn coords_of(&self, x: usize) -> Vec<usize> {
        let shape = self.lattice.as_ref().expect("coords_of on a non-lattice graph");
        let mut out = vec![0; shape.dims.len()];
        let mut rest = x;
        for axis in (0..shape.dims.len()).rev() {
            out[axis] = rest % shape.dims[axis];
            rest /= shape.dims[axis];
        }
        out
    }

    fn is_connected(&self) -> bool {
        self.distances_from(0).iter().all(|&d| d != UNREACHED)
    }

    /// Full BFS distance row from `x`; unreachable vertices get [`UNREACHED`].
    pub fn distances_from(&self, x: usize) -> Vec<u32> {
        self.bfs_limited(x, u32::MAX, |_| true)
    }

    /// BFS from `x` up to depth `max_depth`, only entering vertices accepted
    /// by `allowed` (the source is always entered).
    pub fn bfs_limited(&self, x: usize, max_depth: u32, allowed: impl Fn(usize) -> bool) -> Vec<u32> {
        let mut dist = vec![UNREACHED; self.vertex_count()];
        dist[x] = 0;
        let mut queue = VecDeque::from([x]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u];
            if du >= max_depth {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v] == UNREACHED && allowed(v) {
                    dist[v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn distance(&self, x: usize, y: usize) -> u32 {
        self.distances_from(x)[y]
    }

    /// `B(x, r)` as a sorted vertex list.
    pub fn ball(&self, x: usize, r: u32) -> Vec<usize> {
        let mut out = Vec::new();
        let mut seen = vec![false; self.vertex_count()];
        seen[x] = true;
        let mut frontier = vec![x];
        out.push(x);
        for _ in 0..r {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            out.extend_from_slice(&next);
            frontier = next;
        }
        out.sort_unstable();
        out
    }

    /// `F(r) = max_x |B(x, r)|`.
    pub fn growth_function(&self, r: u32) -> usize {
        (0..self.vertex_count())
            .map(|x| self.ball(x, r).len())
            .max()
            .unwrap_or(0)
    }

    /// Checks `F(r) <= k r^D` for `1 <= r <= r_max`.
    pub fn check_polynomial_growth(
        &self,
        k: f64,
        dimension: f64,
        r_max: u32,
    ) -> Result<GrowthCertificate, GrowthViolation> {
        let mut observed = Vec::with_capacity(r_max as usize);
        for r in 1..=r_max {
            let f = self.growth_function(r);
            let bound = k * f64::from(r).powf(dimension);
            if f as f64 > bound {
                return Err(GrowthViolation {
                    r,
                    value: f,
                    bound,
                });
            }
            observed.push((r, f));
        }
        Ok(GrowthCertificate {
            k,
            dimension,
            r_max,
            observed,
        })
    }

    /// Whether `set` induces a connected subgraph.
    pub fn is_connected_subset(&self, set: &[usize]) -> bool {
        if set.is_empty() {
            return false;
        }
        let mut member = vec![false; self.vertex_count()];
        for &v in set {
            member[v] = true;
        }
        let dist = self.bfs_limited(set[0], u32::MAX, |v| member[v]);
        set.iter().all(|&v| dist[v] != UNREACHED)
    }

    /// Maximum pairwise graph distance between vertices of `set`.
    pub fn diameter_of(&self, set: &[usize]) -> u32 {
        set.iter()
            .map(|&x| {
                let row = self.distances_from(x);
                set.iter().map(|&y| row[y]).max().unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }

    /// Outer boundary `{y not in set : d(y, set) = 1}`, sorted.
    pub fn outer_boundary(&self, set: &[usize]) -> Vec<usize> {
        let mut member = vec![false; self.vertex_count()];
        for &v in set {
            member[v] = true;
        }
        let mut out: Vec<usize> = set
            .iter()
            .flat_map(|&v| self.adjacency[v].iter().copied())
            .filter(|&y| !member[y])
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn lattice_index(dims: &[usize], coords: &[usize]) -> usize {
    coords
        .iter()
        .zip(dims)
        .fold(0, |acc, (&c, &d)| acc * d + c)
}

fn increment(coords: &mut [usize], dims: &[usize]) {
    for axis in (0..dims.len()).rev() {
        coords[axis] += 1;
        if coords[axis] < dims[axis] {
            return;
        }
        coords[axis] = 0;
    }
}

/// Witness that `F(r) <= k r^D` held for every `1 <= r <= r_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthCertificate {
    pub k: f64,
    pub dimension: f64,
    pub r_max: u32,
    /// `(r, F(r))` pairs.
    pub observed: Vec<(u32, usize)>,
}

/// Smallest radius at which the growth bound fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthViolation {
    pub r: u32,
    pub value: usize,
    pub bound: f64,
}

/// Memoised BFS rows. Small graphs may cache every row; larger ones keep at
/// most [`Self::MAX_CACHED_ROWS`] rows and recompute the rest on demand.
#[derive(Debug)]
pub struct DistanceOracle {
    graph: Arc<Graph>,
    rows: Mutex<HashMap<usize, Arc<[u32]>>>,
}

impl DistanceOracle {
    pub const MAX_CACHED_ROWS: usize = 256;

    pub fn new(graph: Arc<Graph>) -> Self {
        Self {
            graph,
            rows: Mutex::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn row(&self, x: usize) -> Arc<[u32]> {
        if let Some(row) = self.rows.lock().expect("oracle poisoned").get(&x) {
            return Arc::clone(row);
        }
        let row: Arc<[u32]> = self.graph.distances_from(x).into();
        let mut rows = self.rows.lock().expect("oracle poisoned");
        let cap = if self.graph.vertex_count() <= ALL_PAIRS_LIMIT {
            usize::MAX
        } else {
            Self::MAX_CACHED_ROWS
        };
        if rows.len() < cap {
            rows.insert(x, Arc::clone(&row));
        }
        row
    }

    pub fn distance(&self, x: usize, y: usize) -> u32 {
        self.row(x)[y]
    }
}
