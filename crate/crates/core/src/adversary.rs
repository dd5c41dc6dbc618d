//! Passive adversary: what the corrupt coalition (and optionally an
//! eavesdropper) observes, and the reconstruction attacks run on it.
//!
//! Attacks take an [`AdversaryView`] and public parameters only. Ground
//! truth is never an input; tests compare against it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusConfig, Trajectory};
use crate::error::AttackError;
use crate::protocols::adqsp::{AdqspConfig, DiffReference};
use crate::protocols::smpc::{add_mod, decode_signed, sub_mod, SmpcConfig, LIMB_BITS};
use crate::topology::{Graph, HonestPartition};
use crate::transcript::{Message, MessageKind, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptModel {
    pub corrupt: BTreeSet<usize>,
    /// Whether every non-secure channel is read as well.
    pub eavesdrop: bool,
}

impl CorruptModel {
    pub fn new(corrupt: impl IntoIterator<Item = usize>, eavesdrop: bool) -> Self {
        Self {
            corrupt: corrupt.into_iter().collect(),
            eavesdrop,
        }
    }

    /// Every node except `target`.
    pub fn all_but(n: usize, target: usize, eavesdrop: bool) -> Self {
        Self::new((0..n).filter(|&j| j != target), eavesdrop)
    }

    pub fn is_corrupt(&self, i: usize) -> bool {
        self.corrupt.contains(&i)
    }

    pub fn validate(&self, n: usize) -> Result<(), AttackError> {
        if let Some(&bad) = self.corrupt.iter().find(|&&c| c >= n) {
            return Err(AttackError::Precondition(format!(
                "corrupt node {bad} out of range (n = {n})"
            )));
        }
        if self.corrupt.len() >= n {
            return Err(AttackError::Precondition(
                "at least one node must be honest".into(),
            ));
        }
        Ok(())
    }

    /// Visibility rule: corrupt-incident channels always, honest-honest ones
    /// only when non-secure and eavesdropped.
    pub fn sees(&self, m: &Message) -> bool {
        self.is_corrupt(m.from) || self.is_corrupt(m.to) || (self.eavesdrop && !m.secure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Adqsp,
    Smpc,
    Dp,
}

#[derive(Debug, Clone)]
pub struct AdversaryView {
    pub kind: ProtocolKind,
    pub model: CorruptModel,
    /// `s_j` for corrupt `j`.
    pub known_inputs: BTreeMap<usize, f64>,
    pub observed: Transcript,
}

impl AdversaryView {
    fn find(
        &self,
        kind: MessageKind,
        t: usize,
        from: usize,
        to: usize,
        lane: Option<i64>,
    ) -> Option<&Message> {
        self.observed.iter().find(|m| {
            m.kind == kind
                && m.t == t
                && m.from == from
                && m.to == to
                && (lane.is_none() || m.level_index == lane)
        })
    }

    fn require_kind(&self, kind: ProtocolKind) -> Result<(), AttackError> {
        if self.kind != kind {
            return Err(AttackError::Precondition(format!(
                "view is of a {:?} run, attack needs {kind:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn collect_view(
    transcript: &Transcript,
    model: &CorruptModel,
    kind: ProtocolKind,
    inputs: &[f64],
) -> AdversaryView {
    let observed = Transcript {
        messages: transcript
            .iter()
            .filter(|m| model.sees(m))
            .cloned()
            .collect(),
    };
    let known_inputs = model
        .corrupt
        .iter()
        .filter(|&&j| j < inputs.len())
        .map(|&j| (j, inputs[j]))
        .collect();
    AdversaryView {
        kind,
        model: model.clone(),
        known_inputs,
        observed,
    }
}

/// Extrapolates an unquantized trajectory from its first two iterates:
///
/// `x^(t+2) = 2 theta x^(t+1) - (2 theta - 1) x^(t)
///   - 2c(1-theta)/(1+c d_i) sum_j ((1-theta) x_i^(t) + theta x_j^(t) - x_j^(t+1))`.
///
/// Returns `x^(1) ..= x^(t_max)`; the first two entries are the inputs.
pub fn predict_trajectory(x1: &[f64], x2: &[f64], g: &Graph, cfg: &ConsensusConfig) -> Trajectory {
    let (c, theta) = (cfg.c, cfg.theta);
    let mut out = Trajectory::new();
    out.push(x1.to_vec());
    if cfg.t_max >= 2 {
        out.push(x2.to_vec());
    }
    for t in 3..=cfg.t_max {
        let prev2 = out.at(t - 2).to_vec();
        let prev1 = out.at(t - 1).to_vec();
        let next = (0..g.node_count())
            .map(|i| {
                let a = 1.0 + c * g.degree(i) as f64;
                let coupling: f64 = g
                    .neighbors(i)
                    .iter()
                    .map(|nb| (1.0 - theta) * prev2[i] + theta * prev2[nb.node] - prev1[nb.node])
                    .sum();
                2.0 * theta * prev1[i]
                    - (2.0 * theta - 1.0) * prev2[i]
                    - 2.0 * c * (1.0 - theta) / a * coupling
            })
            .collect();
        out.push(next);
    }
    out
}

/// One honest component's sum as recovered by the adversary.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSum {
    pub members: Vec<usize>,
    /// Fixed-point sum in `Z_p`.
    pub field: u64,
    pub value: f64,
}

/// Any broadcast value of `x_j` at iteration `t` in lane `lane`.
fn broadcast_value(view: &AdversaryView, g: &Graph, j: usize, t: usize, lane: i64) -> Option<f64> {
    g.neighbors(j)
        .iter()
        .find_map(|nb| view.find(MessageKind::XBroadcast, t, j, nb.node, Some(lane)))
        .and_then(|m| m.payload.real())
}

fn share_value(view: &AdversaryView, from: usize, to: usize) -> Option<u64> {
    view.find(MessageKind::Share, 0, from, to, None)
        .and_then(|m| m.payload.field())
}

/// SMPC attack: recovers every masked input `s'_j = (1 + c d_j) x_j^(1)`
/// lane by lane (with `z^(0) = 0`), sums them over each honest component
/// and strips the masks on edges to corrupt nodes. Internal masks cancel.
pub fn extract_component_sums(
    view: &AdversaryView,
    g: &Graph,
    partition: &HonestPartition,
    cfg: &SmpcConfig,
) -> Result<Vec<ComponentSum>, AttackError> {
    view.require_kind(ProtocolKind::Smpc)?;
    let p = cfg.p;
    let lanes = cfg.lanes();
    let c = cfg.consensus.c;
    let masked = |j: usize| -> Result<u64, AttackError> {
        let a = 1.0 + c * g.degree(j) as f64;
        let mut value: u128 = 0;
        for lane in 0..lanes {
            let x = broadcast_value(view, g, j, 1, lane as i64).ok_or_else(|| {
                AttackError::MissingObservation(format!("x_{j}^(1) in lane {lane}"))
            })?;
            let limb = (a * x).round() as u128;
            value += limb << (LIMB_BITS * lane as u32);
        }
        Ok((value % p as u128) as u64)
    };
    partition
        .components
        .iter()
        .map(|members| {
            let mut sum = 0u64;
            for &j in members {
                sum = add_mod(sum, masked(j)?, p);
                for nb in g.neighbors(j) {
                    let k = nb.node;
                    if !partition.is_corrupt(k) {
                        continue;
                    }
                    let incoming = share_value(view, k, j).ok_or_else(|| {
                        AttackError::MissingObservation(format!("share r_{k}^{j}"))
                    })?;
                    let outgoing = share_value(view, j, k).ok_or_else(|| {
                        AttackError::MissingObservation(format!("share r_{j}^{k}"))
                    })?;
                    sum = sub_mod(sum, incoming, p);
                    sum = add_mod(sum, outgoing, p);
                }
            }
            Ok(ComponentSum {
                members: members.clone(),
                field: sum,
                value: decode_signed(sum, p) as f64 / cfg.scale,
            })
        })
        .collect()
}

/// `zhat` on the directed slot `(holder|sender)` for `t = 0..=t_max`, rebuilt
/// from the observed `z_init` and `delta_hat` messages.
pub fn zhat_history(
    view: &AdversaryView,
    g: &Graph,
    holder: usize,
    sender: usize,
    reference: DiffReference,
    t_max: usize,
) -> Result<Vec<f64>, AttackError> {
    if !g.are_adjacent(holder, sender) {
        return Err(AttackError::Precondition(format!(
            "{holder} and {sender} are not adjacent"
        )));
    }
    let z0 = view
        .find(MessageKind::ZInit, 0, holder, sender, None)
        .and_then(|m| m.payload.real())
        .ok_or_else(|| AttackError::MissingObservation(format!("z_{holder}|{sender}^(0)")))?;
    let mut deltas = vec![None; t_max + 1];
    for m in view.observed.of_kind(MessageKind::DeltaHat) {
        if m.from == sender && m.to == holder && (1..=t_max).contains(&m.t) {
            deltas[m.t] = m.payload.real();
        }
    }
    let mut hist = Vec::with_capacity(t_max + 1);
    hist.push(z0);
    for t in 1..=t_max {
        let d = deltas[t].ok_or_else(|| {
            AttackError::MissingObservation(format!("delta_hat {sender}->{holder} at t={t}"))
        })?;
        let base = match reference {
            DiffReference::Previous => hist[t - 1],
            DiffReference::TwoBack => hist[t.saturating_sub(2)],
        };
        hist.push(base + d);
    }
    Ok(hist)
}

/// Reconstruction of target `i` by a coalition holding every other node.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySecret {
    pub neighbor: usize,
    /// `s_i + c_{i,k} n_{k|i}^(t+1)`.
    pub value: f64,
    /// `c_{i,k} = (1 + c d_i) / ((1 - theta) 2c B_{i|k})`.
    pub coefficient: f64,
}

pub fn noise_coefficient(g: &Graph, i: usize, k: usize, cfg: &ConsensusConfig) -> f64 {
    (1.0 + cfg.c * g.degree(i) as f64)
        / ((1.0 - cfg.theta) * 2.0 * cfg.c * Graph::edge_weight(i, k))
}

/// ADQSP attack at iteration `t` (uses `zhat^(t)` and `zhat^(t+1)`).
///
/// The `x_i^(t+1)` that node `i` must have used is read off the update of
/// `z_{k|i}`, and the x-update residual then exposes `s_i` up to the
/// quantization noise on that edge.
pub fn reconstruct_noisy_secret(
    view: &AdversaryView,
    g: &Graph,
    target: usize,
    cfg: &AdqspConfig,
    t: usize,
) -> Result<Vec<NoisySecret>, AttackError> {
    let hist = AttackHistories::collect(view, g, target, cfg, t + 1)?;
    Ok(hist.at(g, target, cfg, t))
}

/// [`reconstruct_noisy_secret`] for every `t = 0 .. t_max - 1`, index `t`.
pub fn reconstruct_noisy_secret_series(
    view: &AdversaryView,
    g: &Graph,
    target: usize,
    cfg: &AdqspConfig,
) -> Result<Vec<Vec<NoisySecret>>, AttackError> {
    let t_max = cfg.consensus.t_max;
    let hist = AttackHistories::collect(view, g, target, cfg, t_max)?;
    Ok((0..t_max).map(|t| hist.at(g, target, cfg, t)).collect())
}

/// `zhat` histories on both directions of every edge at the target.
struct AttackHistories {
    own: Vec<Vec<f64>>,
    other: Vec<Vec<f64>>,
}

impl AttackHistories {
    fn collect(
        view: &AdversaryView,
        g: &Graph,
        target: usize,
        cfg: &AdqspConfig,
        upto: usize,
    ) -> Result<Self, AttackError> {
        view.require_kind(ProtocolKind::Adqsp)?;
        let cons = cfg.consensus;
        if upto > cons.t_max {
            return Err(AttackError::Precondition(format!(
                "t + 1 = {upto} exceeds t_max = {}",
                cons.t_max
            )));
        }
        if cons.theta >= 1.0 {
            return Err(AttackError::Precondition("theta must be < 1".into()));
        }
        if g.neighbors(target)
            .iter()
            .any(|nb| !view.model.is_corrupt(nb.node))
            || view.model.is_corrupt(target)
        {
            return Err(AttackError::HonestNeighbors { node: target });
        }
        let mut own = Vec::new();
        let mut other = Vec::new();
        for nb in g.neighbors(target) {
            own.push(zhat_history(view, g, target, nb.node, cfg.reference, upto)?);
            other.push(zhat_history(view, g, nb.node, target, cfg.reference, upto)?);
        }
        Ok(Self { own, other })
    }

    fn at(&self, g: &Graph, target: usize, cfg: &AdqspConfig, t: usize) -> Vec<NoisySecret> {
        let cons = cfg.consensus;
        let (c, theta) = (cons.c, cons.theta);
        let a = 1.0 + c * g.degree(target) as f64;
        let coupling: f64 = g
            .neighbors(target)
            .iter()
            .zip(&self.own)
            .map(|(nb, h)| Graph::edge_weight(target, nb.node) * h[t])
            .sum();
        g.neighbors(target)
            .iter()
            .enumerate()
            .map(|(idx, nb)| {
                let k = nb.node;
                let b = Graph::edge_weight(target, k);
                let known = (self.other[idx][t + 1] - theta * self.other[idx][t])
                    / ((1.0 - theta) * 2.0 * c * b)
                    - self.own[idx][t] / (2.0 * c * b);
                NoisySecret {
                    neighbor: k,
                    value: a * known + coupling,
                    coefficient: noise_coefficient(g, target, k, &cons),
                }
            })
            .collect()
    }
}

/// Pairs `(S_i, sum over i's honest component)` from joint input draws.
pub fn ideal_leakage_samples(
    partition: &HonestPartition,
    target: usize,
    samples: &[Vec<f64>],
) -> Result<Vec<(f64, f64)>, AttackError> {
    let comp = partition
        .component_of(target)
        .ok_or_else(|| AttackError::Precondition(format!("node {target} is corrupt")))?;
    let members = &partition.components[comp];
    Ok(samples
        .iter()
        .map(|s| (s[target], members.iter().map(|&j| s[j]).sum()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::run_plain;
    use crate::consensus::EdgeField;
    use crate::protocols::adqsp::run_adqsp;
    use crate::protocols::smpc::smpc_mask_and_average;
    use crate::seed::rng_for;
    use crate::topology::honest_partition;

    #[test]
    fn empty_view_without_corruption_or_eavesdropping() {
        let g = Graph::cycle(4);
        let cfg = AdqspConfig::with_defaults(10.0, 0.0, ConsensusConfig::new(1.0, 0.5, 5).unwrap())
            .unwrap();
        let run = run_adqsp(&[1.0; 4], &g, &cfg, 1, &mut rng_for(1, &[])).unwrap();
        let view = collect_view(
            &run.transcript,
            &CorruptModel::new([], false),
            ProtocolKind::Adqsp,
            &[1.0; 4],
        );
        assert!(view.observed.is_empty());
        let view = collect_view(
            &run.transcript,
            &CorruptModel::new([], true),
            ProtocolKind::Adqsp,
            &[1.0; 4],
        );
        assert!(view.observed.of_kind(MessageKind::ZInit).next().is_none());
        assert_eq!(view.observed.of_kind(MessageKind::DeltaHat).count(), 8 * 5);
    }

    #[test]
    fn recursion_is_stationary_at_fixed_point() {
        let g = Graph::path(4);
        let x = vec![0.7; 4];
        let cfg = ConsensusConfig::new(1.0, 0.2, 10).unwrap();
        let pred = predict_trajectory(&x, &x, &g, &cfg);
        for t in 1..=10 {
            assert!(pred.at(t).iter().all(|v| (v - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn recursion_matches_simulation() {
        let g = Graph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 4)]).unwrap();
        let s = [1.0, -0.5, 2.0, 0.3, 4.0];
        for theta in [0.0, 0.2, 0.5] {
            let cfg = ConsensusConfig::new(1.0, theta, 20).unwrap();
            let truth = run_plain(&s, &cfg, &g, EdgeField::zeros(&g));
            let pred = predict_trajectory(truth.at(1), truth.at(2), &g, &cfg);
            assert!(pred.max_abs_diff(&truth) < 1e-10, "theta {theta}");
        }
    }

    #[test]
    fn smpc_path_singletons() {
        let g = Graph::path(3);
        let cfg = SmpcConfig::new(ConsensusConfig::new(1.0, 0.0, 50).unwrap());
        let s = [1.25, -7.0, 3.5];
        let run = smpc_mask_and_average(&s, &g, &cfg, &mut rng_for(2, &[])).unwrap();
        let model = CorruptModel::new([1], true);
        let view = collect_view(&run.transcript, &model, ProtocolKind::Smpc, &s);
        assert!(view
            .observed
            .iter()
            .filter(|m| m.kind == MessageKind::Share)
            .all(|m| m.from == 1 || m.to == 1));
        let part = honest_partition(&g, [1]).unwrap();
        let sums = extract_component_sums(&view, &g, &part, &cfg).unwrap();
        assert_eq!(
            sums.iter().map(|c| c.value).collect::<Vec<_>>(),
            vec![1.25, 3.5]
        );
    }

    #[test]
    fn adqsp_attack_needs_all_neighbors_corrupt() {
        let g = Graph::cycle(4);
        let cfg = AdqspConfig::with_defaults(1.0, 0.0, ConsensusConfig::new(1.0, 0.0, 5).unwrap())
            .unwrap();
        let run = run_adqsp(&[0.0; 4], &g, &cfg, 1, &mut rng_for(3, &[])).unwrap();
        let view = collect_view(
            &run.transcript,
            &CorruptModel::new([1, 2], true),
            ProtocolKind::Adqsp,
            &[0.0; 4],
        );
        assert_eq!(
            reconstruct_noisy_secret(&view, &g, 0, &cfg, 1).unwrap_err(),
            AttackError::HonestNeighbors { node: 0 }
        );
    }

    #[test]
    fn ideal_pairs_use_component_sum() {
        let g = Graph::path(4);
        let part = honest_partition(&g, [2]).unwrap();
        let pairs = ideal_leakage_samples(&part, 0, &[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(pairs, vec![(1.0, 3.0)]);
    }
}
