//! Network graphs: random geometric generation, incidence structures and
//! the honest-subgraph component partition induced by a corrupt set.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::TopologyError;

/// Default number of placement attempts before giving up on connectivity.
pub const DEFAULT_RETRY_BUDGET: usize = 1000;

/// A neighbor entry: the adjacent node and the index of the shared edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    pub edge: usize,
}

/// Undirected simple graph with a lexicographically sorted edge list.
///
/// Edge `k` is `edges[k] = (i, j)` with `i < j`. Each undirected edge carries
/// two directed slots in a `2m` edge field: slot `k` is held by the smaller
/// endpoint `i` (value `z_{i|j}`), slot `m + k` by the larger endpoint `j`
/// (value `z_{j|i}`). This matches the row layout of `C = [B+; B-]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<Neighbor>>,
    coords: Option<Vec<[f64; 3]>>,
}

impl Graph {
    /// Builds a graph from an arbitrary list of undirected pairs. Pairs are
    /// normalized to `i < j`, sorted and deduplicated.
    pub fn new(n: usize, pairs: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let mut edges = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(TopologyError::NodeOutOfRange { node: a.max(b), n });
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for (k, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push(Neighbor { node: j, edge: k });
            adjacency[j].push(Neighbor { node: i, edge: k });
        }
        for list in &mut adjacency {
            list.sort_unstable_by_key(|nb| nb.node);
        }
        Ok(Self {
            n,
            edges,
            adjacency,
            coords: None,
        })
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 3]>) -> Result<Self, TopologyError> {
        if coords.len() != self.n {
            return Err(TopologyError::Parse(format!(
                "expected {} coordinates, got {}",
                self.n,
                coords.len()
            )));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &pairs).expect("path edges are valid")
    }

    /// Cycle graph on `n >= 3` nodes.
    pub fn cycle(n: usize) -> Self {
        let mut pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        pairs.push((0, n - 1));
        Self::new(n, &pairs).expect("cycle edges are valid")
    }

    /// Complete graph on `n` nodes.
    pub fn complete(n: usize) -> Self {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j));
            }
        }
        Self::new(n, &pairs).expect("complete edges are valid")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coords(&self) -> Option<&[[f64; 3]]> {
        self.coords.as_deref()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    /// Neighbors of `i` in increasing node order.
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.adjacency[i]
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        self.edge_index(i, j).is_some()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n {
            return None;
        }
        self.adjacency[i]
            .binary_search_by_key(&j, |nb| nb.node)
            .ok()
            .map(|pos| self.adjacency[i][pos].edge)
    }

    /// `B_{i|j}`: +1 when `i < j`, -1 otherwise.
    pub fn edge_weight(i: usize, j: usize) -> f64 {
        if i < j {
            1.0
        } else {
            -1.0
        }
    }

    /// Number of directed slots, `2m`.
    pub fn slot_count(&self) -> usize {
        2 * self.edges.len()
    }

    /// Slot of the directed value `z_{holder|neighbor}`.
    ///
    /// Panics if the two nodes are not adjacent.
    pub fn slot(&self, holder: usize, neighbor: usize) -> usize {
        let k = self
            .edge_index(holder, neighbor)
            .unwrap_or_else(|| panic!("nodes {holder} and {neighbor} are not adjacent"));
        if holder < neighbor {
            k
        } else {
            self.edges.len() + k
        }
    }

    /// Inverse of [`Graph::slot`]: `(holder, neighbor)`.
    pub fn slot_endpoints(&self, slot: usize) -> (usize, usize) {
        let m = self.edges.len();
        if slot < m {
            self.edges[slot]
        } else {
            let (i, j) = self.edges[slot - m];
            (j, i)
        }
    }

    /// The slot of the same edge in the opposite direction (the action of `P`).
    pub fn mirror_slot(&self, slot: usize) -> usize {
        let m = self.edges.len();
        if slot < m {
            slot + m
        } else {
            slot - m
        }
    }

    /// Serializes to the line format: `n m`, then `i j` per edge, then
    /// `i x y z` per node when coordinates are present.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n, self.edges.len());
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        if let Some(coords) = &self.coords {
            for (i, c) in coords.iter().enumerate() {
                let _ = writeln!(out, "{i} {:?} {:?} {:?}", c[0], c[1], c[2]);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| TopologyError::Parse("missing header".into()))?;
        let head: Vec<usize> = parse_fields(header)?;
        if head.len() != 2 {
            return Err(TopologyError::Parse(format!("bad header `{header}`")));
        }
        let (n, m) = (head[0], head[1]);
        let mut pairs = Vec::with_capacity(m);
        let mut coords = vec![None; n];
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.len() {
                2 => {
                    let v: Vec<usize> = parse_fields(line)?;
                    pairs.push((v[0], v[1]));
                }
                4 => {
                    let i: usize = fields[0]
                        .parse()
                        .map_err(|_| TopologyError::Parse(format!("bad node id in `{line}`")))?;
                    if i >= n {
                        return Err(TopologyError::NodeOutOfRange { node: i, n });
                    }
                    let mut c = [0.0; 3];
                    for (slot, f) in c.iter_mut().zip(&fields[1..]) {
                        *slot = f.parse().map_err(|_| {
                            TopologyError::Parse(format!("bad coordinate in `{line}`"))
                        })?;
                    }
                    coords[i] = Some(c);
                }
                _ => return Err(TopologyError::Parse(format!("unexpected line `{line}`"))),
            }
        }
        if pairs.len() != m {
            return Err(TopologyError::Parse(format!(
                "header declares {m} edges, found {}",
                pairs.len()
            )));
        }
        let graph = Self::new(n, &pairs)?;
        if coords.iter().any(Option::is_some) {
            let coords: Option<Vec<_>> = coords.into_iter().collect();
            let coords = coords
                .ok_or_else(|| TopologyError::Parse("coordinates missing for some nodes".into()))?;
            graph.with_coords(coords)
        } else {
            Ok(graph)
        }
    }
}

fn parse_fields(line: &str) -> Result<Vec<usize>, TopologyError> {
    line.split_whitespace()
        .map(|f| {
            f.parse()
                .map_err(|_| TopologyError::Parse(format!("bad integer `{f}` in `{line}`")))
        })
        .collect()
}

/// Connectivity radius `sqrt(2 ln n / n)` used for the geometric graphs.
pub fn default_radius(n: usize) -> f64 {
    let n = n as f64;
    (2.0 * n.ln() / n).sqrt()
}

/// Places `n` nodes uniformly in the unit cube and joins pairs within
/// `radius`. Placements are redrawn until the graph is connected.
pub fn generate_geometric_graph<R: Rng + ?Sized>(
    n: usize,
    radius: f64,
    rng: &mut R,
) -> Result<Graph, TopologyError> {
    generate_geometric_graph_with_budget(n, radius, DEFAULT_RETRY_BUDGET, rng)
}

pub fn generate_geometric_graph_with_budget<R: Rng + ?Sized>(
    n: usize,
    radius: f64,
    budget: usize,
    rng: &mut R,
) -> Result<Graph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::TooFewNodes(n));
    }
    if !(radius > 0.0) {
        return Err(TopologyError::BadRadius(radius));
    }
    for _ in 0..budget {
        let coords: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                ]
            })
            .collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d2: f64 = (0..3).map(|a| (coords[i][a] - coords[j][a]).powi(2)).sum();
                if d2.sqrt() <= radius {
                    pairs.push((i, j));
                }
            }
        }
        let graph = Graph::new(n, &pairs)?.with_coords(coords)?;
        if is_connected(&graph) {
            return Ok(graph);
        }
    }
    Err(TopologyError::RetriesExhausted {
        attempts: budget,
        n,
        radius,
    })
}

/// True iff a traversal from node 0 reaches every node.
pub fn is_connected(g: &Graph) -> bool {
    if g.n == 0 {
        return true;
    }
    let mut seen = vec![false; g.n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for nb in g.neighbors(u) {
            if !seen[nb.node] {
                seen[nb.node] = true;
                count += 1;
                queue.push_back(nb.node);
            }
        }
    }
    count == g.n
}

/// Incidence structures of a graph.
///
/// Row `k` of `b` is the `k`-th edge `(i, j)`: `+1` at column `i`, `-1` at
/// column `j`. `c` stacks the positive and negative parts, `[B+; B-]`.
#[derive(Debug, Clone)]
pub struct IncidenceData {
    pub b: DMatrix<f64>,
    pub b_plus: DMatrix<f64>,
    pub b_minus: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl IncidenceData {
    pub fn edge_count(&self) -> usize {
        self.b.nrows()
    }

    /// Applies the row swap `P` (top `m` rows exchanged with bottom `m`).
    pub fn permute(&self, mat: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.edge_count();
        assert_eq!(mat.nrows(), 2 * m, "P acts on 2m-row matrices");
        let mut out = mat.clone();
        out.rows_mut(0, m).copy_from(&mat.rows(m, m));
        out.rows_mut(m, m).copy_from(&mat.rows(0, m));
        out
    }

    /// The `2m x 2m` permutation matrix `P`.
    pub fn permutation_matrix(&self) -> DMatrix<f64> {
        let m = self.edge_count();
        let mut p = DMatrix::zeros(2 * m, 2 * m);
        for k in 0..m {
            p[(k, m + k)] = 1.0;
            p[(m + k, k)] = 1.0;
        }
        p
    }

    /// `P C = [B-; B+]`.
    pub fn pc(&self) -> DMatrix<f64> {
        self.permute(&self.c)
    }
}

pub fn incidence(g: &Graph) -> IncidenceData {
    let (n, m) = (g.node_count(), g.edge_count());
    let mut b_plus = DMatrix::zeros(m, n);
    let mut b_minus = DMatrix::zeros(m, n);
    for (k, &(i, j)) in g.edges().iter().enumerate() {
        b_plus[(k, i)] = Graph::edge_weight(i, j);
        b_minus[(k, j)] = Graph::edge_weight(j, i);
    }
    let b = &b_plus + &b_minus;
    let mut c = DMatrix::zeros(2 * m, n);
    c.rows_mut(0, m).copy_from(&b_plus);
    c.rows_mut(m, m).copy_from(&b_minus);
    IncidenceData {
        b,
        b_plus,
        b_minus,
        c,
    }
}

/// Split of the graph into honest and corrupt parts.
#[derive(Debug, Clone, PartialEq)]
pub struct HonestPartition {
    pub corrupt: BTreeSet<usize>,
    pub honest: Vec<usize>,
    /// Indices of edges whose endpoints are both honest.
    pub honest_edges: Vec<usize>,
    /// Indices of edges touching at least one corrupt node.
    pub corrupt_edges: Vec<usize>,
    /// Connected components of the honest subgraph, each sorted, ordered by
    /// their smallest node.
    pub components: Vec<Vec<usize>>,
    honest_adjacency: Vec<Vec<usize>>,
    component_of: Vec<Option<usize>>,
}

impl HonestPartition {
    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn is_corrupt(&self, i: usize) -> bool {
        self.corrupt.contains(&i)
    }

    /// `N_{i,h}`: honest neighbors of `i`.
    pub fn honest_neighbors(&self, i: usize) -> &[usize] {
        &self.honest_adjacency[i]
    }

    /// Index of the component containing honest node `i`.
    pub fn component_of(&self, i: usize) -> Option<usize> {
        self.component_of[i]
    }
}

pub fn honest_partition<I>(g: &Graph, corrupt: I) -> Result<HonestPartition, TopologyError>
where
    I: IntoIterator<Item = usize>,
{
    let n = g.node_count();
    let corrupt: BTreeSet<usize> = corrupt.into_iter().collect();
    if let Some(&bad) = corrupt.iter().find(|&&c| c >= n) {
        return Err(TopologyError::NodeOutOfRange { node: bad, n });
    }
    let honest: Vec<usize> = (0..n).filter(|i| !corrupt.contains(i)).collect();
    let mut honest_edges = Vec::new();
    let mut corrupt_edges = Vec::new();
    let mut honest_adjacency = vec![Vec::new(); n];
    for (k, &(i, j)) in g.edges().iter().enumerate() {
        if corrupt.contains(&i) || corrupt.contains(&j) {
            corrupt_edges.push(k);
        } else {
            honest_edges.push(k);
            honest_adjacency[i].push(j);
            honest_adjacency[j].push(i);
        }
    }
    let mut component_of = vec![None; n];
    let mut components = Vec::new();
    for &start in &honest {
        if component_of[start].is_some() {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        component_of[start] = Some(id);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &honest_adjacency[u] {
                if component_of[v].is_none() {
                    component_of[v] = Some(id);
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    Ok(HonestPartition {
        corrupt,
        honest,
        honest_edges,
        corrupt_edges,
        components,
        honest_adjacency,
        component_of,
    })
}

/// Sum of `s` over each honest component, in component order.
pub fn component_sums(p: &HonestPartition, s: &[f64]) -> Vec<f64> {
    p.components
        .iter()
        .map(|comp| comp.iter().map(|&i| s[i]).sum())
        .collect()
}
