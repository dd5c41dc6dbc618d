//! Additive secret sharing over `Z_p` followed by a non-private consensus
//! on the masked values.
//!
//! Masked values are uniform in `Z_p`, far beyond what an `f64` consensus
//! can average exactly. They are split into 16-bit limbs and each limb lane
//! runs its own consensus; every node rounds `n * x` per lane and recombines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{run_broadcast, ConsensusConfig, EdgeField, Trajectory};
use crate::error::ProtocolError;
use crate::topology::{is_connected, Graph};
use crate::transcript::{Message, MessageKind, Payload, Transcript};

/// Mersenne prime `2^61 - 1`.
pub const DEFAULT_MODULUS: u64 = (1 << 61) - 1;
pub const DEFAULT_SCALE: f64 = 1e6;
pub const LIMB_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmpcConfig {
    pub p: u64,
    pub scale: f64,
    pub consensus: ConsensusConfig,
}

impl SmpcConfig {
    pub fn new(consensus: ConsensusConfig) -> Self {
        Self {
            p: DEFAULT_MODULUS,
            scale: DEFAULT_SCALE,
            consensus,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.p < 2 || self.p >= 1 << 62 {
            return Err(ProtocolError::InvalidConfig {
                field: "smpc.p",
                reason: format!("modulus must lie in [2, 2^62), got {}", self.p),
            });
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(ProtocolError::InvalidConfig {
                field: "smpc.scale",
                reason: format!("must be positive, got {}", self.scale),
            });
        }
        self.consensus.validate()
    }

    /// Number of 16-bit limbs needed for an element of `Z_p`.
    pub fn lanes(&self) -> usize {
        let bits = 64 - (self.p - 1).leading_zeros();
        bits.div_ceil(LIMB_BITS).max(1) as usize
    }
}

pub fn add_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 + b as u128) % p as u128) as u64
}

pub fn sub_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 + p as u128 - (b % p) as u128) % p as u128) as u64
}

/// Fixed-point encoding `round(v * scale)` mapped into `Z_p`.
pub fn encode_fixed(v: f64, scale: f64, p: u64) -> u64 {
    let q = (v * scale).round() as i128;
    q.rem_euclid(p as i128) as u64
}

/// Inverse of [`encode_fixed`] on the symmetric range `(-p/2, p/2]`.
pub fn decode_signed(a: u64, p: u64) -> i128 {
    if a > p / 2 {
        a as i128 - p as i128
    } else {
        a as i128
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shares {
    /// `(j, r_i^j)` for each neighbor `j`.
    pub to_neighbors: Vec<(usize, u64)>,
    /// `r_i^i = s_i - sum_j r_i^j mod p`.
    pub own: u64,
}

impl Shares {
    pub fn reconstruct(&self, p: u64) -> u64 {
        self.to_neighbors
            .iter()
            .fold(self.own, |acc, &(_, r)| add_mod(acc, r, p))
    }
}

/// Splits `s_i` into uniform shares for each neighbor plus the node's own.
pub fn smpc_share<R: Rng + ?Sized>(s_i: u64, neighbors: &[usize], p: u64, rng: &mut R) -> Shares {
    let to_neighbors: Vec<(usize, u64)> = neighbors
        .iter()
        .map(|&j| (j, rng.random_range(0..p)))
        .collect();
    let own = to_neighbors
        .iter()
        .fold(s_i % p, |acc, &(_, r)| sub_mod(acc, r, p));
    Shares { to_neighbors, own }
}

#[derive(Debug, Clone)]
pub struct SmpcRun {
    /// Fixed-point inputs in `Z_p`.
    pub encoded: Vec<u64>,
    pub shares: Vec<Shares>,
    /// `s'_i = s_i + sum_j (r_j^i - r_i^j) mod p`.
    pub masked: Vec<u64>,
    /// One consensus trajectory per limb lane.
    pub lanes: Vec<Trajectory>,
    /// `sum_i s'_i mod p` as recovered by each node.
    pub recovered_sum: Vec<u64>,
    /// Average at each node, `decode_signed(sum) / (n scale)`.
    pub output: Vec<f64>,
    pub transcript: Transcript,
}

impl SmpcRun {
    /// Share `r_from^to`.
    pub fn share(&self, from: usize, to: usize) -> u64 {
        if from == to {
            return self.shares[from].own;
        }
        self.shares[from]
            .to_neighbors
            .iter()
            .find(|(j, _)| *j == to)
            .map(|&(_, r)| r)
            .expect("share only exists between neighbors")
    }
}

/// Fixed-point average `(sum_i round(s_i scale)) / (n scale)`: the value an
/// exact SMPC run must reproduce.
pub fn fixed_point_average(s: &[f64], scale: f64) -> f64 {
    let total: i128 = s.iter().map(|v| (v * scale).round() as i128).sum();
    total as f64 / (s.len() as f64 * scale)
}

pub fn smpc_mask_and_average<R: Rng + ?Sized>(
    s: &[f64],
    g: &Graph,
    cfg: &SmpcConfig,
    rng: &mut R,
) -> Result<SmpcRun, ProtocolError> {
    cfg.validate()?;
    if !is_connected(g) {
        return Err(crate::error::TopologyError::Disconnected.into());
    }
    let n = g.node_count();
    let p = cfg.p;
    let max_abs = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let required = (n as f64 * (max_abs * cfg.scale).round()) as u128;
    if 2 * required >= p as u128 {
        return Err(ProtocolError::Wraparound {
            required,
            modulus: p,
        });
    }

    let encoded: Vec<u64> = s.iter().map(|&v| encode_fixed(v, cfg.scale, p)).collect();
    let mut transcript = Transcript::new();
    let shares: Vec<Shares> = (0..n)
        .map(|i| {
            let nbrs: Vec<usize> = g.neighbors(i).iter().map(|nb| nb.node).collect();
            smpc_share(encoded[i], &nbrs, p, rng)
        })
        .collect();
    for (i, sh) in shares.iter().enumerate() {
        for &(j, r) in &sh.to_neighbors {
            transcript.push(Message {
                t: 0,
                from: i,
                to: j,
                kind: MessageKind::Share,
                secure: true,
                payload: Payload::Field(r),
                level_index: None,
            });
        }
    }
    let masked: Vec<u64> = (0..n)
        .map(|i| {
            g.neighbors(i).iter().fold(shares[i].own, |acc, nb| {
                let incoming = shares[nb.node]
                    .to_neighbors
                    .iter()
                    .find(|(j, _)| *j == i)
                    .expect("neighbor relation is symmetric")
                    .1;
                add_mod(acc, incoming, p)
            })
        })
        .collect();

    let lane_count = cfg.lanes();
    let mask = (1u64 << LIMB_BITS) - 1;
    let z0 = EdgeField::zeros(g);
    let mut lanes = Vec::with_capacity(lane_count);
    let mut sums = vec![0u128; n];
    for lane in 0..lane_count {
        let shift = LIMB_BITS * lane as u32;
        let limbs: Vec<f64> = masked
            .iter()
            .map(|&v| ((v >> shift) & mask) as f64)
            .collect();
        let run = run_broadcast(&limbs, &cfg.consensus, g, &z0);
        let last = run.trajectory.last().expect("t_max >= 1");
        for (i, &x) in last.iter().enumerate() {
            let scaled = x * n as f64;
            let rounded = scaled.round();
            let residual = (scaled - rounded).abs();
            if residual > 0.25 {
                return Err(ProtocolError::Unresolved { node: i, residual });
            }
            sums[i] += (rounded as u128) << shift;
        }
        for mut msg in run.transcript.messages {
            msg.level_index = Some(lane as i64);
            transcript.push(msg);
        }
        lanes.push(run.trajectory);
    }
    let recovered_sum: Vec<u64> = sums.iter().map(|&v| (v % p as u128) as u64).collect();
    let output = recovered_sum
        .iter()
        .map(|&v| decode_signed(v, p) as f64 / (n as f64 * cfg.scale))
        .collect();
    Ok(SmpcRun {
        encoded,
        shares,
        masked,
        lanes,
        recovered_sum,
        output,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn lane_count() {
        let cfg = SmpcConfig::new(ConsensusConfig::default());
        assert_eq!(cfg.lanes(), 4);
        let small = SmpcConfig { p: 7, ..cfg };
        assert_eq!(small.lanes(), 1);
    }

    #[test]
    fn shares_sum_to_secret() {
        let mut rng = rng_for(1, &[]);
        let p = 11;
        for s in 0..p {
            let sh = smpc_share(s, &[1, 2, 3], p, &mut rng);
            assert_eq!(sh.reconstruct(p), s);
        }
    }

    #[test]
    fn small_field_example() {
        // p = 7, s = 5, r_i^j = 3 and 6 => own = 5 - 9 = -4 = 3 mod 7
        let sh = Shares {
            to_neighbors: vec![(1, 3), (2, 6)],
            own: sub_mod(sub_mod(5, 3, 7), 6, 7),
        };
        assert_eq!(sh.own, 3);
        assert_eq!(sh.reconstruct(7), 5);
    }

    #[test]
    fn fixed_point_round_trip() {
        let p = DEFAULT_MODULUS;
        for v in [-2.5, 0.0, 1e-6, 3.141592653589793] {
            let e = encode_fixed(v, 1e6, p);
            assert_eq!(decode_signed(e, p), (v * 1e6_f64).round() as i128);
        }
    }

    #[test]
    fn path_average_is_exact() {
        let g = Graph::path(3);
        let cfg = SmpcConfig::new(ConsensusConfig::new(1.0, 0.0, 300).unwrap());
        let mut rng = rng_for(5, &[]);
        let run = smpc_mask_and_average(&[1.0, 2.0, 3.0], &g, &cfg, &mut rng).unwrap();
        assert!(run.output.iter().all(|&v| v == 2.0));
        let masked_sum = run.masked.iter().fold(0, |a, &b| add_mod(a, b, cfg.p));
        let true_sum = run.encoded.iter().fold(0, |a, &b| add_mod(a, b, cfg.p));
        assert_eq!(masked_sum, true_sum);
    }

    #[test]
    fn wraparound_is_rejected() {
        let g = Graph::path(3);
        let cfg = SmpcConfig {
            p: 1_000_003,
            ..SmpcConfig::new(ConsensusConfig::default())
        };
        let mut rng = rng_for(5, &[]);
        let err = smpc_mask_and_average(&[1.0, 2.0, 3.0], &g, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, ProtocolError::Wraparound { .. }));
    }
}
