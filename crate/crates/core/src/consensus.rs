//! Unquantized PDMM/ADMM averaging, the `Psi`/`Psi-perp` subspace split of
//! the auxiliary variable, and accuracy metrics.
//!
//! Node `i` updates
//!
//! ```text
//! x_i     = (s_i - sum_j B_{i|j} z_{i|j}) / (1 + c d_i)
//! z_{j|i} = theta z_{j|i} + (1 - theta) (z_{i|j} + 2 c B_{i|j} x_i)
//! ```
//!
//! with `theta = 0` giving PDMM and `theta = 0.5` ADMM.

use std::fmt::Write as _;
use std::ops::{Index, IndexMut};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ProtocolError;
use crate::topology::{Graph, IncidenceData};
use crate::transcript::{Message, MessageKind, Payload, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub c: f64,
    pub theta: f64,
    pub t_max: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            theta: 0.0,
            t_max: 500,
        }
    }
}

impl ConsensusConfig {
    pub fn new(c: f64, theta: f64, t_max: usize) -> Result<Self, ProtocolError> {
        let cfg = Self { c, theta, t_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(ProtocolError::InvalidConfig {
                field: "consensus.c",
                reason: format!("must be positive, got {}", self.c),
            });
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(ProtocolError::InvalidConfig {
                field: "consensus.theta",
                reason: format!("must lie in [0, 1), got {}", self.theta),
            });
        }
        Ok(())
    }
}

/// One real value per directed edge, laid out by [`Graph::slot`].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    values: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(g: &Graph) -> Self {
        Self {
            values: vec![0.0; g.slot_count()],
        }
    }

    pub fn from_vec(g: &Graph, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), g.slot_count(), "edge field needs 2m entries");
        Self { values }
    }

    pub fn from_fn(g: &Graph, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..g.slot_count())
            .map(|slot| {
                let (holder, nb) = g.slot_endpoints(slot);
                f(holder, nb)
            })
            .collect();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `z_{holder|neighbor}`.
    pub fn get(&self, g: &Graph, holder: usize, neighbor: usize) -> f64 {
        self.values[g.slot(holder, neighbor)]
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        Self {
            values: v.iter().copied().collect(),
        }
    }

    /// Applies the direction swap `P`.
    pub fn permuted(&self) -> Self {
        let m = self.values.len() / 2;
        let mut values = Vec::with_capacity(self.values.len());
        values.extend_from_slice(&self.values[m..]);
        values.extend_from_slice(&self.values[..m]);
        Self { values }
    }

    pub fn add(&self, other: &EdgeField) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &EdgeField) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|a| a * k).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &EdgeField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Index<usize> for EdgeField {
    type Output = f64;
    fn index(&self, slot: usize) -> &f64 {
        &self.values[slot]
    }
}

impl IndexMut<usize> for EdgeField {
    fn index_mut(&mut self, slot: usize) -> &mut f64 {
        &mut self.values[slot]
    }
}

/// `x^(1), ..., x^(t_max)`; `x^(t)` is stored at index `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self { states: Vec::new() }
    }

    pub fn push(&mut self, x: Vec<f64>) {
        self.states.push(x);
    }

    /// `x^(t)` for `t >= 1`.
    pub fn at(&self, t: usize) -> &[f64] {
        assert!(t >= 1, "trajectories start at t = 1");
        &self.states[t - 1]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// `mse(x^(t), target)` for every stored iteration.
    pub fn mse_curve(&self, target: &[f64]) -> Vec<f64> {
        self.states.iter().map(|x| mse(x, target)).collect()
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    /// CSV `t,node,x`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,node,x\n");
        for (idx, x) in self.states.iter().enumerate() {
            for (node, v) in x.iter().enumerate() {
                let _ = writeln!(out, "{},{},{:?}", idx + 1, node, v);
            }
        }
        out
    }
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

/// CSV `t,mse` for a curve whose first entry is iteration 1.
pub fn mse_curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("t,mse\n");
    for (idx, v) in curve.iter().enumerate() {
        let _ = writeln!(out, "{},{:?}", idx + 1, v);
    }
    out
}

pub fn x_update(s: &[f64], z: &EdgeField, cfg: &ConsensusConfig, g: &Graph) -> Vec<f64> {
    (0..g.node_count())
        .map(|i| {
            let coupling: f64 = g
                .neighbors(i)
                .iter()
                .map(|nb| Graph::edge_weight(i, nb.node) * z[g.slot(i, nb.node)])
                .sum();
            (s[i] - coupling) / (1.0 + cfg.c * g.degree(i) as f64)
        })
        .collect()
}

pub fn z_update(z: &EdgeField, x: &[f64], cfg: &ConsensusConfig, g: &Graph) -> EdgeField {
    let mut next = EdgeField::zeros(g);
    for i in 0..g.node_count() {
        for nb in g.neighbors(i) {
            let j = nb.node;
            // z_{j|i} is computed at node i and sent to j.
            let out = g.slot(j, i);
            let own = g.slot(i, j);
            next[out] = cfg.theta * z[out]
                + (1.0 - cfg.theta) * (z[own] + 2.0 * cfg.c * Graph::edge_weight(i, j) * x[i]);
        }
    }
    next
}

/// Per-node iteration of the plain algorithm; exposes the auxiliary variable.
#[derive(Debug, Clone)]
pub struct PlainIteration<'a> {
    graph: &'a Graph,
    cfg: ConsensusConfig,
    s: Vec<f64>,
    z: EdgeField,
    x: Vec<f64>,
}

impl<'a> PlainIteration<'a> {
    pub fn new(graph: &'a Graph, cfg: ConsensusConfig, s: &[f64], z0: EdgeField) -> Self {
        assert_eq!(s.len(), graph.node_count());
        assert_eq!(z0.len(), graph.slot_count());
        Self {
            graph,
            cfg,
            s: s.to_vec(),
            z: z0,
            x: vec![0.0; graph.node_count()],
        }
    }

    /// Advances one round; returns `x^(t+1)`.
    pub fn step(&mut self) -> &[f64] {
        self.x = x_update(&self.s, &self.z, &self.cfg, self.graph);
        self.z = z_update(&self.z, &self.x, &self.cfg, self.graph);
        &self.x
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &EdgeField {
        &self.z
    }
}

/// Runs `t_max` rounds of the plain algorithm from `z0`.
pub fn run_plain(s: &[f64], cfg: &ConsensusConfig, g: &Graph, z0: EdgeField) -> Trajectory {
    let mut it = PlainIteration::new(g, *cfg, s, z0);
    let mut traj = Trajectory::new();
    for _ in 0..cfg.t_max {
        traj.push(it.step().to_vec());
    }
    traj
}

/// Output of [`run_broadcast`].
#[derive(Debug, Clone)]
pub struct BroadcastRun {
    pub trajectory: Trajectory,
    /// One `x_broadcast` message per node per neighbor per round.
    pub transcript: Transcript,
}

/// Broadcast variant: node `i` sends only `x_i` and every endpoint keeps its
/// own copy of both directed values of each incident edge.
pub fn run_broadcast(s: &[f64], cfg: &ConsensusConfig, g: &Graph, z0: &EdgeField) -> BroadcastRun {
    let n = g.node_count();
    // local[i][p] = (z_{i|j}, z_{j|i}) for the p-th neighbor j of i
    let mut local: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|i| {
            g.neighbors(i)
                .iter()
                .map(|nb| (z0.get(g, i, nb.node), z0.get(g, nb.node, i)))
                .collect()
        })
        .collect();
    let mut trajectory = Trajectory::new();
    let mut transcript = Transcript::new();
    let (c, theta) = (cfg.c, cfg.theta);
    for t in 0..cfg.t_max {
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let coupling: f64 = g
                    .neighbors(i)
                    .iter()
                    .zip(&local[i])
                    .map(|(nb, &(own, _))| Graph::edge_weight(i, nb.node) * own)
                    .sum();
                (s[i] - coupling) / (1.0 + c * g.degree(i) as f64)
            })
            .collect();
        for i in 0..n {
            for nb in g.neighbors(i) {
                transcript.push(Message {
                    t: t + 1,
                    from: i,
                    to: nb.node,
                    kind: MessageKind::XBroadcast,
                    secure: false,
                    payload: Payload::Real(x[i]),
                    level_index: None,
                });
            }
        }
        for i in 0..n {
            for (nb, pair) in g.neighbors(i).iter().zip(local[i].iter_mut()) {
                let j = nb.node;
                let (own, other) = *pair;
                let next_other = theta * other
                    + (1.0 - theta) * (own + 2.0 * c * Graph::edge_weight(i, j) * x[i]);
                let next_own = theta * own
                    + (1.0 - theta) * (other + 2.0 * c * Graph::edge_weight(j, i) * x[j]);
                *pair = (next_own, next_other);
            }
        }
        trajectory.push(x);
    }
    BroadcastRun {
        trajectory,
        transcript,
    }
}

/// Matrix form of one round, used to cross-check the per-node updates:
/// `x+ = (I + c C^T C)^{-1} (s - C^T z)`, `z+ = theta z + (1-theta)(P z + 2c P C x+)`.
pub fn compact_step(
    z: &EdgeField,
    s: &[f64],
    cfg: &ConsensusConfig,
    inc: &IncidenceData,
) -> (Vec<f64>, EdgeField) {
    let c_mat = &inc.c;
    let ctc = c_mat.transpose() * c_mat;
    let n = ctc.nrows();
    for r in 0..n {
        for col in 0..n {
            if r != col {
                assert_eq!(ctc[(r, col)], 0.0, "C^T C must be diagonal");
            }
        }
    }
    let zv = z.to_dvector();
    let rhs = DVector::from_column_slice(s) - c_mat.transpose() * &zv;
    let x = DVector::from_iterator(n, (0..n).map(|i| rhs[i] / (1.0 + cfg.c * ctc[(i, i)])));
    let p = inc.permutation_matrix();
    let z_next = cfg.theta * &zv + (1.0 - cfg.theta) * (&p * &zv + 2.0 * cfg.c * inc.pc() * &x);
    (
        x.iter().copied().collect(),
        EdgeField::from_dvector(&z_next),
    )
}

/// Orthonormal basis of `Psi = ran(C) + ran(PC)`, stored as columns.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub basis: DMatrix<f64>,
    pub rank: usize,
    pub tol: f64,
}

impl SubspaceBasis {
    /// Dimension of the ambient space, `2m`.
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn complement_dim(&self) -> usize {
        self.ambient_dim() - self.rank
    }
}

/// Gram-Schmidt over the columns of `C` then `PC`, dropping columns whose
/// residual norm falls below `tol`. `None` selects `1e-10` times the largest
/// column norm.
pub fn subspace_basis(inc: &IncidenceData, tol: Option<f64>) -> SubspaceBasis {
    let c = &inc.c;
    let pc = inc.pc();
    let columns: Vec<DVector<f64>> = c
        .column_iter()
        .chain(pc.column_iter())
        .map(|col| col.into_owned())
        .collect();
    let largest = columns.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tol = tol.unwrap_or(1e-10 * largest);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for col in columns {
        let mut v = col;
        // two passes of modified Gram-Schmidt keep the basis orthogonal to
        // machine precision
        for _ in 0..2 {
            for q in &kept {
                let proj = q.dot(&v);
                v -= q * proj;
            }
        }
        let norm = v.norm();
        if norm >= tol {
            kept.push(v / norm);
        }
    }
    let rows = c.nrows();
    let rank = kept.len();
    let basis = if rank == 0 {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(&kept)
    };
    SubspaceBasis { basis, rank, tol }
}

/// Splits `z` into its `Psi` and `Psi-perp` parts.
pub fn project(z: &EdgeField, basis: &SubspaceBasis) -> (EdgeField, EdgeField) {
    let zv = z.to_dvector();
    let coeffs = basis.basis.transpose() * &zv;
    let psi = &basis.basis * coeffs;
    let perp = &zv - &psi;
    (
        EdgeField::from_dvector(&psi),
        EdgeField::from_dvector(&perp),
    )
}

/// `z_perp(t) = (z0 + P z0)/2 + (2 theta - 1)^t (z0 - P z0)/2` for `z0` in `Psi-perp`.
pub fn closed_form_zperp(z0_perp: &EdgeField, t: usize, theta: f64) -> EdgeField {
    let swapped = z0_perp.permuted();
    let sym = z0_perp.add(&swapped).scale(0.5);
    let anti = z0_perp.sub(&swapped).scale(0.5);
    let factor = (2.0 * theta - 1.0).powi(t as i32);
    sym.add(&anti.scale(factor))
}

/// `(1/n) ||x - target||^2`.
pub fn mse(x: &[f64], target: &[f64]) -> f64 {
    assert_eq!(x.len(), target.len(), "mse needs equal lengths");
    let n = x.len() as f64;
    x.iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

pub fn average(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}
