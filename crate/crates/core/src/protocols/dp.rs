//! Local-perturbation baseline: every node adds independent noise to its
//! input and a plain consensus averages the perturbed values.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::consensus::{run_broadcast, ConsensusConfig, EdgeField, Trajectory};
use crate::error::ProtocolError;
use crate::topology::{is_connected, Graph};
use crate::transcript::Transcript;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum DpMechanism {
    /// Laplace noise with scale `M / epsilon`, variance `2 M^2 / epsilon^2`.
    Laplace { sensitivity: f64, epsilon: f64 },
    /// Uniform noise on `[-width/2, width/2]`.
    Uniform { width: f64 },
}

impl DpMechanism {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |field, reason: String| Err(ProtocolError::InvalidConfig { field, reason });
        match *self {
            DpMechanism::Laplace {
                sensitivity,
                epsilon,
            } => {
                if !(sensitivity > 0.0) {
                    return bad(
                        "dp.sensitivity",
                        format!("must be positive, got {sensitivity}"),
                    );
                }
                if !(epsilon > 0.0) {
                    return bad("dp.epsilon", format!("must be positive, got {epsilon}"));
                }
            }
            DpMechanism::Uniform { width } => {
                if !(width >= 0.0) || !width.is_finite() {
                    return bad("dp.width", format!("must be >= 0, got {width}"));
                }
            }
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DpMechanism::Laplace {
                sensitivity,
                epsilon,
            } => 2.0 * (sensitivity / epsilon).powi(2),
            DpMechanism::Uniform { width } => width * width / 12.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DpMechanism::Laplace {
                sensitivity,
                epsilon,
            } => {
                // inverse CDF on u in (-1/2, 1/2)
                let b = sensitivity / epsilon;
                let u: f64 = rng.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            DpMechanism::Uniform { width } => {
                if width == 0.0 {
                    0.0
                } else {
                    Uniform::new_inclusive(-width / 2.0, width / 2.0)
                        .expect("finite width")
                        .sample(rng)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub mechanism: DpMechanism,
    pub consensus: ConsensusConfig,
}

#[derive(Debug, Clone)]
pub struct DpRun {
    pub noise: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub trajectory: Trajectory,
    pub transcript: Transcript,
}

impl DpRun {
    /// `(1/n) sum_i r_i^2`.
    pub fn mse(&self) -> f64 {
        self.noise.iter().map(|r| r * r).sum::<f64>() / self.noise.len() as f64
    }

    /// Final output error against the true average, `(1/n) sum_i r_i` up to
    /// consensus tolerance.
    pub fn output_error(&self, s_ave: f64) -> Vec<f64> {
        self.trajectory
            .last()
            .map(|x| x.iter().map(|v| v - s_ave).collect())
            .unwrap_or_default()
    }
}

pub fn run_dp<R: Rng + ?Sized>(
    s: &[f64],
    g: &Graph,
    cfg: &DpConfig,
    rng: &mut R,
) -> Result<DpRun, ProtocolError> {
    cfg.mechanism.validate()?;
    cfg.consensus.validate()?;
    if !is_connected(g) {
        return Err(crate::error::TopologyError::Disconnected.into());
    }
    let noise: Vec<f64> = s.iter().map(|_| cfg.mechanism.sample(rng)).collect();
    run_dp_with_noise(s, g, cfg, noise)
}

/// DP run with given perturbations `r`.
pub fn run_dp_with_noise(
    s: &[f64],
    g: &Graph,
    cfg: &DpConfig,
    noise: Vec<f64>,
) -> Result<DpRun, ProtocolError> {
    cfg.consensus.validate()?;
    let perturbed: Vec<f64> = s.iter().zip(&noise).map(|(a, r)| a + r).collect();
    let run = run_broadcast(&perturbed, &cfg.consensus, g, &EdgeField::zeros(g));
    Ok(DpRun {
        noise,
        perturbed,
        trajectory: run.trajectory,
        transcript: run.transcript,
    })
}
