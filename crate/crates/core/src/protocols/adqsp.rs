//! Adaptive differentially quantized subspace perturbation.
//!
//! At `t = 0` every node draws Gaussian `z_{i|j}^(0)` and hands them to its
//! neighbors over secure channels. From then on only quantized differences
//! `delta_hat` travel in the clear; both endpoints of a directed edge rebuild
//! `zhat` from the shared dither stream.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusConfig, EdgeField, Trajectory};
use crate::error::ProtocolError;
use crate::quantizer::{decode_level_width, diff_encode_width, DitherStream, QuantizerSchedule};
use crate::topology::{is_connected, Graph};
use crate::transcript::{Message, MessageKind, Payload, Transcript};

/// Which receiver-synchronized value the transmitted difference refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffReference {
    /// `z^(t+1) - zhat^(t)`.
    #[default]
    Previous,
    /// `z^(t+1) - zhat^(t-1)`; `zhat^(-1) = z^(0)`.
    ///
    /// With `theta = 0` the `Psi-perp` part of `z` alternates between two
    /// values forever, so one-step differences never shrink while two-step
    /// differences do.
    TwoBack,
}

impl DiffReference {
    /// `TwoBack` for PDMM (`theta = 0`), `Previous` otherwise.
    pub fn for_theta(theta: f64) -> Self {
        if theta == 0.0 {
            DiffReference::TwoBack
        } else {
            DiffReference::Previous
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdqspConfig {
    /// Variance of the Gaussian `z^(0)` entries.
    pub sigma_z2: f64,
    pub sched: QuantizerSchedule,
    pub consensus: ConsensusConfig,
    pub reference: DiffReference,
    /// Maximum tolerated saturation events; `None` disables the check.
    pub saturation_budget: Option<usize>,
    /// Keep the message transcript. Accuracy-only sweeps turn this off.
    #[serde(default = "yes")]
    pub record_transcript: bool,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_GAMMA: f64 = 0.95;
pub const DEFAULT_BITS: u32 = 5;

impl AdqspConfig {
    /// Default schedule for the given spread: `delta0` from
    /// [`default_delta0`], [`DEFAULT_GAMMA`], [`DEFAULT_BITS`], and the
    /// difference reference picked from `theta`.
    pub fn with_defaults(
        sigma_z: f64,
        delta_min: f64,
        consensus: ConsensusConfig,
    ) -> Result<Self, ProtocolError> {
        let cfg = Self {
            sigma_z2: sigma_z * sigma_z,
            sched: QuantizerSchedule::new(
                default_delta0(sigma_z, consensus.c),
                DEFAULT_GAMMA,
                delta_min,
                DEFAULT_BITS,
            )?,
            consensus,
            reference: DiffReference::for_theta(consensus.theta),
            saturation_budget: Some(0),
            record_transcript: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.sigma_z2 >= 0.0) || !self.sigma_z2.is_finite() {
            return Err(ProtocolError::InvalidConfig {
                field: "adqsp.sigma_z",
                reason: format!("variance must be >= 0, got {}", self.sigma_z2),
            });
        }
        self.sched.validate()?;
        self.consensus.validate()
    }
}

/// Default initial cell width: `4 sigma_z max(1, 2c)`, with `sigma_z`
/// floored at the unit data scale.
pub fn default_delta0(sigma_z: f64, c: f64) -> f64 {
    4.0 * sigma_z.max(1.0) * (2.0 * c).max(1.0)
}

#[derive(Debug, Clone)]
pub struct AdqspRun {
    pub trajectory: Trajectory,
    pub transcript: Transcript,
    pub z0: EdgeField,
    /// `n^(t) = zhat^(t) - z^(t)` for `t = 1..=t_max`, index `t - 1`.
    pub noise_log: Vec<EdgeField>,
    pub saturations: usize,
    /// Saturation events per iteration, index `t - 1`.
    pub saturations_per_step: Vec<usize>,
}

impl AdqspRun {
    pub fn noise(&self, t: usize) -> &EdgeField {
        &self.noise_log[t - 1]
    }
}

/// Per-slot endpoint state. The sender of slot `(j|i)` is node `i`, the
/// holder is node `j`; each keeps its own `zhat` history and dither stream.
#[derive(Debug, Clone)]
struct Endpoint {
    zhat: f64,
    zhat_prev: f64,
    dither: DitherStream,
}

/// Runs ADQSP for `cfg.consensus.t_max` rounds.
///
/// `dither_seed` seeds the per-edge dither streams shared implicitly by the
/// endpoints; `rng` draws the `z^(0)` perturbation.
pub fn run_adqsp<R: Rng + ?Sized>(
    s: &[f64],
    g: &Graph,
    cfg: &AdqspConfig,
    dither_seed: u64,
    rng: &mut R,
) -> Result<AdqspRun, ProtocolError> {
    cfg.validate()?;
    if !is_connected(g) {
        return Err(crate::error::TopologyError::Disconnected.into());
    }
    let sigma = cfg.sigma_z2.sqrt();
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let z0 = EdgeField::from_fn(g, |_, _| normal.sample(rng));
    run_adqsp_from(s, g, cfg, dither_seed, z0)
}

/// ADQSP from a given perturbation `z0`.
pub fn run_adqsp_from(
    s: &[f64],
    g: &Graph,
    cfg: &AdqspConfig,
    dither_seed: u64,
    z0: EdgeField,
) -> Result<AdqspRun, ProtocolError> {
    cfg.validate()?;
    let n = g.node_count();
    let slots = g.slot_count();
    let ConsensusConfig { c, theta, t_max } = cfg.consensus;

    let mut transcript = Transcript::new();
    for slot in 0..slots {
        let (holder, sender) = g.slot_endpoints(slot);
        transcript.push(Message {
            t: 0,
            from: holder,
            to: sender,
            kind: MessageKind::ZInit,
            secure: true,
            payload: Payload::Real(z0[slot]),
            level_index: None,
        });
    }

    let fresh = |slot: usize| Endpoint {
        zhat: z0[slot],
        zhat_prev: z0[slot],
        dither: DitherStream::new(dither_seed, slot),
    };
    let mut tx: Vec<Endpoint> = (0..slots).map(fresh).collect();
    let mut rx: Vec<Endpoint> = (0..slots).map(fresh).collect();

    let mut trajectory = Trajectory::new();
    let mut noise_log = Vec::with_capacity(t_max);
    let mut saturations_per_step = Vec::with_capacity(t_max);
    let mut z_next = vec![0.0; slots];

    // per node: (neighbor, slot of z_{i|j}, slot of z_{j|i}, B_{i|j})
    let incident: Vec<Vec<(usize, usize, usize, f64)>> = (0..n)
        .map(|i| {
            g.neighbors(i)
                .iter()
                .map(|nb| {
                    (
                        nb.node,
                        g.slot(i, nb.node),
                        g.slot(nb.node, i),
                        Graph::edge_weight(i, nb.node),
                    )
                })
                .collect()
        })
        .collect();
    let endpoints: Vec<(usize, usize)> = (0..slots).map(|k| g.slot_endpoints(k)).collect();

    for t in 0..t_max {
        // x-update at every node from its own (holder-side) zhat_{i|j}
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let coupling: f64 = incident[i]
                    .iter()
                    .map(|&(_, own, _, b)| b * rx[own].zhat)
                    .sum();
                (s[i] - coupling) / (1.0 + c * incident[i].len() as f64)
            })
            .collect();
        // node i computes z_{j|i}^(t+1) from zhat_{j|i} (sender copy) and zhat_{i|j}
        for (i, inc) in incident.iter().enumerate() {
            for &(_, own, out, b) in inc {
                z_next[out] =
                    theta * tx[out].zhat + (1.0 - theta) * (rx[own].zhat + 2.0 * c * b * x[i]);
            }
        }
        let step = t + 1;
        let width = cfg.sched.cell_width(step);
        let mut noise = vec![0.0; slots];
        let mut saturated_now = 0;
        for slot in 0..slots {
            let (holder, sender) = endpoints[slot];
            let reference = match cfg.reference {
                DiffReference::Previous => tx[slot].zhat,
                DiffReference::TwoBack => tx[slot].zhat_prev,
            };
            let enc = diff_encode_width(
                z_next[slot],
                reference,
                width,
                &cfg.sched,
                &mut tx[slot].dither,
            );
            saturated_now += usize::from(enc.saturated);
            let sent = &mut tx[slot];
            sent.zhat_prev = sent.zhat;
            sent.zhat = reference + enc.delta_hat;
            noise[slot] = sent.zhat - z_next[slot];

            let recv = &mut rx[slot];
            let received = decode_level_width(enc.level, width, &mut recv.dither);
            let base = match cfg.reference {
                DiffReference::Previous => recv.zhat,
                DiffReference::TwoBack => recv.zhat_prev,
            };
            recv.zhat_prev = recv.zhat;
            recv.zhat = base + received;
            debug_assert_eq!(recv.zhat.to_bits(), sent.zhat.to_bits());

            if !cfg.record_transcript {
                continue;
            }
            transcript.push(Message {
                t: step,
                from: sender,
                to: holder,
                kind: MessageKind::DeltaHat,
                secure: false,
                payload: Payload::Real(enc.delta_hat),
                level_index: Some(enc.level),
            });
        }
        saturations_per_step.push(saturated_now);
        noise_log.push(EdgeField::from_vec(g, noise));
        trajectory.push(x);
    }

    let saturations = saturations_per_step.iter().sum();
    if let Some(budget) = cfg.saturation_budget {
        if saturations > budget {
            return Err(ProtocolError::SaturationBudgetExceeded {
                count: saturations,
                budget,
            });
        }
    }
    Ok(AdqspRun {
        trajectory,
        transcript,
        z0,
        noise_log,
        saturations,
        saturations_per_step,
    })
}

/// Predicted converged MSE for `delta_min > 0`:
/// `(1/n) sum_i d_i (delta_min^2 / 12) / (1 + c d_i)^2`.
pub fn adqsp_mse_floor_prediction(g: &Graph, cfg: &AdqspConfig) -> f64 {
    let var = cfg.sched.delta_min.powi(2) / 12.0;
    let c = cfg.consensus.c;
    let n = g.node_count() as f64;
    g.degrees()
        .iter()
        .map(|&d| {
            let d = d as f64;
            d * var / (1.0 + c * d).powi(2)
        })
        .sum::<f64>()
        / n
}

/// Rebuilds `z^(0)` from the secure `z_init` messages of a transcript.
pub fn z0_from_transcript(g: &Graph, transcript: &Transcript) -> Option<EdgeField> {
    let mut values = vec![None; g.slot_count()];
    for m in transcript.of_kind(MessageKind::ZInit) {
        if !g.are_adjacent(m.from, m.to) {
            return None;
        }
        values[g.slot(m.from, m.to)] = m.payload.real();
    }
    let values: Option<Vec<f64>> = values.into_iter().collect();
    values.map(|v| EdgeField::from_vec(g, v))
}

/// Passive recomputation: reruns the protocol from the transcript's
/// `z_init` messages and checks every message matches bit for bit.
pub fn replay_matches(
    s: &[f64],
    g: &Graph,
    cfg: &AdqspConfig,
    dither_seed: u64,
    transcript: &Transcript,
) -> bool {
    let Some(z0) = z0_from_transcript(g, transcript) else {
        return false;
    };
    match run_adqsp_from(s, g, cfg, dither_seed, z0) {
        Ok(run) => run.transcript == *transcript,
        Err(_) => false,
    }
}
