//! Experiment configuration and the seeded Monte Carlo drivers behind the
//! `sim` binary.
//!
//! Every trial draws its graph, inputs and perturbations from streams keyed
//! by `(seed, experiment, trial, purpose)`, so results do not depend on how
//! rayon schedules the trials. Trial results are collected in order and
//! reduced sequentially.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{
    collect_view, extract_component_sums, predict_trajectory, reconstruct_noisy_secret_series,
    CorruptModel, ProtocolKind,
};
use crate::consensus::{average, run_plain, ConsensusConfig, EdgeField};
use crate::error::{Error, ProtocolError};
use crate::infotheory::{
    discrete_mi, ksg_mi_with, mi_csv, nmi, KsgOptions, MiEstimate, MiRecord, Normalization,
    SampleMatrix,
};
use crate::protocols::adqsp::{
    adqsp_mse_floor_prediction, default_delta0, run_adqsp, AdqspConfig, DiffReference,
};
use crate::protocols::dp::{run_dp, DpConfig, DpMechanism};
use crate::protocols::smpc::{
    add_mod, fixed_point_average, smpc_mask_and_average, smpc_share, SmpcConfig, DEFAULT_MODULUS,
    DEFAULT_SCALE,
};
use crate::quantizer::QuantizerSchedule;
use crate::seed::{derive_seed, rng_for};
use crate::topology::{
    default_radius, generate_geometric_graph, honest_partition, Graph, HonestPartition,
};

pub const DESK_TRIALS: usize = 2000;
pub const FULL_TRIALS: usize = 10_000;

/// Tolerance on the MI estimator used by monotonicity checks, in nats.
pub const MI_SLACK_NATS: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Convergence,
    SmpcCompare,
    DpCompare,
    AttackVerify,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::Convergence,
        Experiment::SmpcCompare,
        Experiment::DpCompare,
        Experiment::AttackVerify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::SmpcCompare => "smpc-compare",
            Experiment::DpCompare => "dp-compare",
            Experiment::AttackVerify => "attack-verify",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Experiment::Convergence => 1,
            Experiment::SmpcCompare => 2,
            Experiment::DpCompare => 3,
            Experiment::AttackVerify => 4,
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::config("experiment", format!("unknown experiment `{s}`")))
    }
}

/// Quantizer and perturbation settings. `delta0 = None` picks
/// [`default_delta0`] for each `sigma_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdqspSection {
    pub sigma_z: f64,
    pub delta0: Option<f64>,
    pub gamma: f64,
    pub delta_min: f64,
    pub bits: u32,
}

impl Default for AdqspSection {
    fn default() -> Self {
        Self {
            sigma_z: 100.0,
            delta0: None,
            gamma: crate::protocols::adqsp::DEFAULT_GAMMA,
            delta_min: 0.0,
            bits: crate::protocols::adqsp::DEFAULT_BITS,
        }
    }
}

impl AdqspSection {
    /// Protocol config at one grid point. Saturations are counted, not
    /// rejected.
    pub fn config(
        &self,
        sigma_z: f64,
        delta_min: f64,
        consensus: ConsensusConfig,
    ) -> Result<AdqspConfig, Error> {
        let delta0 = self
            .delta0
            .unwrap_or_else(|| default_delta0(sigma_z, consensus.c));
        let cfg = AdqspConfig {
            sigma_z2: sigma_z * sigma_z,
            sched: QuantizerSchedule::new(delta0, self.gamma, delta_min, self.bits)
                .map_err(config_error)?,
            consensus,
            reference: DiffReference::for_theta(consensus.theta),
            saturation_budget: None,
            record_transcript: false,
        };
        cfg.validate().map_err(config_error)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmpcSection {
    pub p: u64,
    pub scale: f64,
}

impl Default for SmpcSection {
    fn default() -> Self {
        Self {
            p: DEFAULT_MODULUS,
            scale: DEFAULT_SCALE,
        }
    }
}

/// Which nodes the adversary controls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum CorruptSpec {
    /// A uniformly drawn subset of this size, fresh per trial.
    Count(usize),
    Explicit(Vec<usize>),
    /// Every node but the target; `None` draws the target per trial.
    AllButOne(Option<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub theta: Vec<f64>,
    /// Accuracy sweep, `delta_min = 0`.
    pub sigma_z: Vec<f64>,
    /// Floor sweep at `adqsp.sigma_z`.
    pub delta_min: Vec<f64>,
    /// Leakage sweep of the SMPC comparison.
    pub mi_sigma_z: Vec<f64>,
    /// `u_r = delta_min` values of the DP comparison.
    pub dp_delta_min: Vec<f64>,
    /// Iteration stride of the NMI-versus-iteration curve.
    pub nmi_stride: usize,
    /// Iterations checked by the trajectory extrapolation.
    pub recursion_t_max: usize,
    /// Secrets drawn per case of the additive-sharing check.
    pub sharing_samples: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            theta: vec![0.0, 0.2, 0.5],
            sigma_z: vec![10.0, 100.0, 1000.0],
            delta_min: vec![1e-3, 1e-2, 1e-1],
            mi_sigma_z: vec![1.0, 10.0, 100.0, 1000.0],
            dp_delta_min: vec![0.1, 1.0],
            nmi_stride: 10,
            recursion_t_max: 50,
            sharing_samples: DESK_TRIALS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub k: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self { k: 3 }
    }
}

/// Full run configuration. Every field has a default, so `{}` is the
/// reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub consensus: ConsensusConfig,
    pub adqsp: AdqspSection,
    pub smpc: SmpcSection,
    /// Overrides the uniform `u_r = delta_min` noise of the DP comparison.
    pub dp: Option<DpMechanism>,
    /// `None` uses each experiment's own adversary.
    pub corrupt: Option<CorruptSpec>,
    pub eavesdrop: bool,
    pub grids: Grids,
    pub estimator: EstimatorSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            n: 30,
            trials: DESK_TRIALS,
            seed: 20_240_601,
            consensus: ConsensusConfig::default(),
            adqsp: AdqspSection::default(),
            smpc: SmpcSection::default(),
            dp: None,
            corrupt: None,
            eavesdrop: false,
            grids: Grids::default(),
            estimator: EstimatorSection::default(),
        }
    }
}

fn config_error(e: ProtocolError) -> Error {
    match e {
        ProtocolError::InvalidConfig { field, reason } => Error::config(field, reason),
        other => other.into(),
    }
}

fn check_field(ok: bool, field: &str, reason: impl FnOnce() -> String) -> Result<(), Error> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, reason()))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| Error::config("<json>", e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), Error> {
        check_field(self.n >= 3, "n", || {
            format!("need at least 3 nodes, got {}", self.n)
        })?;
        check_field(self.trials >= 1, "trials", || "must be >= 1".into())?;
        self.consensus.validate().map_err(config_error)?;
        let a = &self.adqsp;
        check_field(
            a.sigma_z >= 0.0 && a.sigma_z.is_finite(),
            "adqsp.sigma_z",
            || format!("must be finite and >= 0, got {}", a.sigma_z),
        )?;
        if let Some(d0) = a.delta0 {
            check_field(d0 > 0.0 && d0.is_finite(), "adqsp.delta0", || {
                format!("must be positive, got {d0}")
            })?;
        }
        QuantizerSchedule::new(a.delta0.unwrap_or(1.0), a.gamma, a.delta_min, a.bits)
            .map_err(config_error)?;
        SmpcConfig {
            p: self.smpc.p,
            scale: self.smpc.scale,
            consensus: self.consensus,
        }
        .validate()
        .map_err(config_error)?;
        if let Some(m) = &self.dp {
            m.validate().map_err(config_error)?;
        }
        if let Some(spec) = &self.corrupt {
            self.validate_corrupt(spec)?;
        }
        let g = &self.grids;
        check_field(
            !g.theta.is_empty() && g.theta.iter().all(|t| (0.0..1.0).contains(t)),
            "grids.theta",
            || format!("need values in [0, 1), got {:?}", g.theta),
        )?;
        check_field(
            !g.sigma_z.is_empty() && g.sigma_z.iter().all(|s| *s >= 0.0 && s.is_finite()),
            "grids.sigma_z",
            || format!("need finite values >= 0, got {:?}", g.sigma_z),
        )?;
        check_field(
            !g.delta_min.is_empty() && g.delta_min.iter().all(|d| *d > 0.0 && d.is_finite()),
            "grids.delta_min",
            || format!("need positive values, got {:?}", g.delta_min),
        )?;
        check_field(
            !g.mi_sigma_z.is_empty() && g.mi_sigma_z.iter().all(|s| *s >= 0.0 && s.is_finite()),
            "grids.mi_sigma_z",
            || format!("need finite values >= 0, got {:?}", g.mi_sigma_z),
        )?;
        check_field(
            !g.dp_delta_min.is_empty() && g.dp_delta_min.iter().all(|d| *d > 0.0 && d.is_finite()),
            "grids.dp_delta_min",
            || format!("need positive values, got {:?}", g.dp_delta_min),
        )?;
        check_field(g.nmi_stride >= 1, "grids.nmi_stride", || {
            "must be >= 1".into()
        })?;
        check_field(g.sharing_samples >= 2, "grids.sharing_samples", || {
            "need at least 2 draws".into()
        })?;
        check_field(g.recursion_t_max >= 3, "grids.recursion_t_max", || {
            "must be >= 3".into()
        })?;
        check_field(self.estimator.k >= 1, "estimator.k", || {
            "must be >= 1".into()
        })?;
        Ok(())
    }

    fn validate_corrupt(&self, spec: &CorruptSpec) -> Result<(), Error> {
        let n = self.n;
        match spec {
            CorruptSpec::Count(k) => check_field(*k < n, "corrupt.value", || {
                format!("count {k} leaves no honest node (n = {n})")
            }),
            CorruptSpec::Explicit(list) => {
                check_field(list.iter().all(|&j| j < n), "corrupt.value", || {
                    format!("node out of range in {list:?} (n = {n})")
                })?;
                let distinct: std::collections::BTreeSet<_> = list.iter().collect();
                check_field(distinct.len() < n, "corrupt.value", || {
                    "no honest node left".into()
                })
            }
            CorruptSpec::AllButOne(target) => match target {
                Some(t) => check_field(*t < n, "corrupt.value", || {
                    format!("target {t} out of range (n = {n})")
                }),
                None => Ok(()),
            },
        }
    }

    /// Checks the adversary each experiment needs on top of [`validate`](Self::validate).
    pub fn validate_for(&self, exp: Experiment) -> Result<(), Error> {
        self.validate()?;
        if matches!(exp, Experiment::SmpcCompare | Experiment::DpCompare) {
            check_field(self.trials > self.estimator.k, "trials", || {
                format!(
                    "MI estimation needs more than k = {} trials",
                    self.estimator.k
                )
            })?;
        }
        match (exp, &self.corrupt) {
            (_, None) | (Experiment::Convergence, _) | (Experiment::AttackVerify, _) => Ok(()),
            (Experiment::SmpcCompare, Some(spec)) => {
                let honest = match spec {
                    CorruptSpec::Count(k) => self.n - k,
                    CorruptSpec::Explicit(list) => {
                        self.n - list.iter().collect::<std::collections::BTreeSet<_>>().len()
                    }
                    CorruptSpec::AllButOne(_) => 1,
                };
                check_field(honest == 2, "corrupt", || {
                    format!(
                        "smpc-compare needs exactly two honest nodes, this spec leaves {honest}"
                    )
                })
            }
            (Experiment::DpCompare, Some(spec)) => {
                check_field(matches!(spec, CorruptSpec::AllButOne(_)), "corrupt", || {
                    "dp-compare needs mode all-but-one".into()
                })
            }
        }
    }

    fn ksg_options(&self, normalization: Normalization) -> KsgOptions {
        KsgOptions {
            k: self.estimator.k,
            normalization,
            jitter_seed: derive_seed(self.seed, &[0x6b_7367]),
            ..KsgOptions::default()
        }
    }
}

/// One pass/fail line of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

impl OutputFile {
    fn new(name: impl Into<String>, contents: String) -> Self {
        Self {
            name: name.into(),
            contents,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: Experiment,
    pub files: Vec<OutputFile>,
    pub checks: Vec<Check>,
    /// Extra manifest entries.
    pub notes: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_sha256: String,
    seed: u64,
    trials: usize,
    versions: Versions,
    config: &'a ExperimentConfig,
    files: Vec<&'a str>,
    checks: &'a [Check],
    notes: std::collections::BTreeMap<&'a str, &'a str>,
}

#[derive(Serialize)]
struct Versions {
    adqsp: &'static str,
    manifest: u32,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        out
    }

    pub fn manifest_json(&self, cfg: &ExperimentConfig) -> String {
        let manifest = Manifest {
            experiment: self.experiment.as_str(),
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            trials: cfg.trials,
            versions: Versions {
                adqsp: env!("CARGO_PKG_VERSION"),
                manifest: 1,
            },
            config: cfg,
            files: self.files.iter().map(|f| f.name.as_str()).collect(),
            checks: &self.checks,
            notes: self
                .notes
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .collect(),
        };
        serde_json::to_string_pretty(&manifest).expect("manifest serializes")
    }

    /// Writes every output file and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, Error> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for f in &self.files {
            let path = dir.join(&f.name);
            std::fs::write(&path, &f.contents)?;
            written.push(path);
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, self.manifest_json(cfg))?;
        written.push(path);
        Ok(written)
    }
}

pub fn run_experiment(exp: Experiment, cfg: &ExperimentConfig) -> Result<Report, Error> {
    cfg.validate_for(exp)?;
    let (files, checks, notes) = match exp {
        Experiment::Convergence => {
            let r = run_convergence(cfg)?;
            (r.files(), r.checks(), Vec::new())
        }
        Experiment::SmpcCompare => {
            let r = run_smpc_compare(cfg)?;
            let note = vec![("topology".to_string(), r.topology.clone())];
            (r.files(), r.checks(), note)
        }
        Experiment::DpCompare => {
            let r = run_dp_compare(cfg)?;
            (r.files(), r.checks(), Vec::new())
        }
        Experiment::AttackVerify => {
            let r = run_attack_verify(cfg)?;
            (r.files.clone(), r.checks.clone(), Vec::new())
        }
    };
    Ok(Report {
        experiment: exp,
        files,
        checks,
        notes,
    })
}

/// Runs `f` for every trial in parallel and returns the results in trial
/// order.
fn per_trial<T, F>(trials: usize, f: F) -> Result<Vec<T>, Error>
where
    T: Send,
    F: Fn(u64) -> Result<T, Error> + Sync + Send,
{
    (0..trials as u64).into_par_iter().map(f).collect()
}

fn unit_gaussians<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Geometric graph and N(0, 1) inputs of one trial.
fn trial_instance(
    cfg: &ExperimentConfig,
    exp: Experiment,
    trial: u64,
) -> Result<(Graph, Vec<f64>), Error> {
    let mut rng = rng_for(cfg.seed, &[exp.tag(), trial, 0]);
    let g = generate_geometric_graph(cfg.n, default_radius(cfg.n), &mut rng)?;
    let s = unit_gaussians(cfg.n, &mut rng);
    Ok((g, s))
}

fn elementwise_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; len];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// Iterations averaged for a converged value.
pub const CONVERGED_WINDOW: usize = 50;
/// Iterations used for the tail slope.
pub const SLOPE_WINDOW: usize = 200;

/// Mean MSE curve of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseCurve {
    pub theta: f64,
    pub sigma_z: f64,
    pub delta_min: f64,
    /// Mean over trials of `MSE(x^(t))`, index `t - 1`.
    pub mse: Vec<f64>,
    pub saturations: usize,
    /// Mean of [`adqsp_mse_floor_prediction`] over the trial graphs.
    pub predicted_floor: f64,
}

impl MseCurve {
    pub fn initial(&self) -> f64 {
        self.mse[0]
    }

    pub fn final_mse(&self) -> f64 {
        *self.mse.last().expect("non-empty curve")
    }

    /// Mean of the last [`CONVERGED_WINDOW`] iterations.
    pub fn converged(&self) -> f64 {
        let w = CONVERGED_WINDOW.min(self.mse.len());
        mean(self.mse[self.mse.len() - w..].iter().copied())
    }

    /// Least-squares slope of `ln MSE` per iteration over the tail.
    pub fn tail_slope(&self) -> f64 {
        let w = SLOPE_WINDOW.min(self.mse.len() / 2).max(2);
        let start = self.mse.len() - w;
        let pts: Vec<(f64, f64)> = (start..self.mse.len())
            .map(|i| (i as f64, self.mse[i].ln()))
            .collect();
        let mx = mean(pts.iter().map(|p| p.0));
        let my = mean(pts.iter().map(|p| p.1));
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        sxy / sxx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceResult {
    /// `theta x sigma_z` with `delta_min = 0`.
    pub accuracy: Vec<MseCurve>,
    /// `theta x delta_min` at `adqsp.sigma_z`.
    pub floor: Vec<MseCurve>,
}

fn convergence_cell(
    cfg: &ExperimentConfig,
    theta: f64,
    sigma_z: f64,
    delta_min: f64,
) -> Result<MseCurve, Error> {
    let exp = Experiment::Convergence;
    let consensus = ConsensusConfig {
        theta,
        ..cfg.consensus
    };
    let acfg = cfg.adqsp.config(sigma_z, delta_min, consensus)?;
    let per = per_trial(cfg.trials, |trial| {
        let (g, s) = trial_instance(cfg, exp, trial)?;
        let dither = derive_seed(cfg.seed, &[exp.tag(), trial, 2]);
        let run = run_adqsp(
            &s,
            &g,
            &acfg,
            dither,
            &mut rng_for(cfg.seed, &[exp.tag(), trial, 1]),
        )?;
        let target = vec![average(&s); s.len()];
        Ok((
            run.trajectory.mse_curve(&target),
            run.saturations,
            adqsp_mse_floor_prediction(&g, &acfg),
        ))
    })?;
    let curves: Vec<Vec<f64>> = per.iter().map(|p| p.0.clone()).collect();
    Ok(MseCurve {
        theta,
        sigma_z,
        delta_min,
        mse: elementwise_mean(&curves),
        saturations: per.iter().map(|p| p.1).sum(),
        predicted_floor: mean(per.iter().map(|p| p.2)),
    })
}

/// Mean MSE(t) curves over the accuracy grid (`delta_min = 0`) and the
/// quantization-floor grid.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceResult, Error> {
    cfg.validate_for(Experiment::Convergence)?;
    let g = &cfg.grids;
    let mut accuracy = Vec::new();
    let mut floor = Vec::new();
    for &theta in &g.theta {
        for &sigma_z in &g.sigma_z {
            accuracy.push(convergence_cell(cfg, theta, sigma_z, 0.0)?);
        }
        for &delta_min in &g.delta_min {
            floor.push(convergence_cell(cfg, theta, cfg.adqsp.sigma_z, delta_min)?);
        }
    }
    Ok(ConvergenceResult { accuracy, floor })
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl ConvergenceResult {
    fn thetas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for c in self.accuracy.iter().chain(&self.floor) {
            if !out.contains(&c.theta) {
                out.push(c.theta);
            }
        }
        out
    }

    pub fn accuracy_for(&self, theta: f64) -> Vec<&MseCurve> {
        self.accuracy.iter().filter(|c| c.theta == theta).collect()
    }

    pub fn floor_for(&self, theta: f64) -> Vec<&MseCurve> {
        self.floor.iter().filter(|c| c.theta == theta).collect()
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for theta in self.thetas() {
            let acc = self.accuracy_for(theta);
            let worst = acc.iter().map(|c| c.final_mse()).fold(0.0, f64::max);
            out.push(Check::new(
                format!("final_mse theta={theta}"),
                worst < 1e-8,
                format!("max MSE(t_max) = {worst:.3e} (< 1e-8)"),
            ));
            let mut sorted = acc.clone();
            sorted.sort_by(|a, b| a.sigma_z.total_cmp(&b.sigma_z));
            let increasing = sorted.windows(2).all(|w| w[0].initial() < w[1].initial());
            let initials: Vec<String> = sorted
                .iter()
                .map(|c| format!("{:.3e}", c.initial()))
                .collect();
            out.push(Check::new(
                format!("initial_mse_order theta={theta}"),
                increasing,
                format!("MSE(1) by ascending sigma_z: {}", initials.join(", ")),
            ));
            let slopes: Vec<f64> = acc.iter().map(|c| c.tail_slope()).collect();
            let (lo, hi) = slopes
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| {
                    (l.min(s), h.max(s))
                });
            let spread = (hi - lo) / mean(slopes.iter().copied()).abs();
            out.push(Check::new(
                format!("slope_agreement theta={theta}"),
                spread <= 0.2,
                format!("tail slopes {slopes:.4?}, relative spread {spread:.3} (<= 0.2)"),
            ));
            let mut fl = self.floor_for(theta);
            fl.sort_by(|a, b| a.delta_min.total_cmp(&b.delta_min));
            for c in &fl {
                let ratio = c.converged() / c.predicted_floor;
                out.push(Check::new(
                    format!("floor_prediction theta={theta} delta_min={}", c.delta_min),
                    (1.0 / 3.0..=3.0).contains(&ratio),
                    format!(
                        "converged {:.3e}, predicted {:.3e}, ratio {ratio:.3} (within a factor 3)",
                        c.converged(),
                        c.predicted_floor
                    ),
                ));
            }
            for w in fl.windows(2) {
                let gap = (w[1].converged() / w[0].converged()).log10();
                out.push(Check::new(
                    format!(
                        "floor_separation theta={theta} delta_min={}->{}",
                        w[0].delta_min, w[1].delta_min
                    ),
                    (1.7..=2.3).contains(&gap),
                    format!("{gap:.3} decades (1.7..2.3)"),
                ));
            }
        }
        let sat: usize = self
            .accuracy
            .iter()
            .chain(&self.floor)
            .map(|c| c.saturations)
            .sum();
        out.push(Check::new(
            "saturations",
            sat == 0,
            format!("{sat} saturation events"),
        ));
        out
    }

    pub fn files(&self) -> Vec<OutputFile> {
        let mut files = Vec::new();
        for theta in self.thetas() {
            let mut csv = String::from("t,sigma_z,mse\n");
            for c in self.accuracy_for(theta) {
                for (i, v) in c.mse.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{v:e}", i + 1, fmt_num(c.sigma_z));
                }
            }
            files.push(OutputFile::new(format!("fig1_theta_{theta}.csv"), csv));
            let mut csv = String::from("t,delta_min,mse,predicted_floor\n");
            for c in self.floor_for(theta) {
                for (i, v) in c.mse.iter().enumerate() {
                    let _ = writeln!(
                        csv,
                        "{},{},{v:e},{:e}",
                        i + 1,
                        fmt_num(c.delta_min),
                        c.predicted_floor
                    );
                }
            }
            files.push(OutputFile::new(format!("fig2_theta_{theta}.csv"), csv));
        }
        let mut csv =
            String::from("theta,sigma_z,delta_min,initial_mse,final_mse,converged_mse,tail_slope,predicted_floor,saturations\n");
        for c in self.accuracy.iter().chain(&self.floor) {
            let _ = writeln!(
                csv,
                "{},{},{},{:e},{:e},{:e},{},{:e},{}",
                c.theta,
                c.sigma_z,
                c.delta_min,
                c.initial(),
                c.final_mse(),
                c.converged(),
                c.tail_slope(),
                c.predicted_floor,
                c.saturations
            );
        }
        files.push(OutputFile::new("convergence_summary.csv", csv));
        files
    }
}

/// Two adjacent honest nodes `0` and `1`; every other node is corrupt and
/// adjacent to both.
pub fn honest_pair_topology(n: usize) -> Result<(Graph, HonestPartition), Error> {
    let mut pairs = vec![(0, 1)];
    for j in 2..n {
        pairs.push((0, j));
        pairs.push((1, j));
    }
    let g = Graph::new(n, &pairs)?;
    let partition = honest_partition(&g, 2..n)?;
    Ok((g, partition))
}

/// Observable bounding what the coalition learns about `target` from an
/// unquantized-limit ADQSP run: for each `j` in the honest component of
/// `target`, `s_j - sum_{k in N_{j,h}} B_{j|k} z_{j|k}`, followed by
/// `z_{j|k} - z_{k|j}` for each honest edge `(j, k)` of that component.
pub fn leakage_tuple(
    g: &Graph,
    partition: &HonestPartition,
    target: usize,
    s: &[f64],
    z0: &EdgeField,
) -> Result<Vec<f64>, Error> {
    let comp = partition
        .component_of(target)
        .ok_or_else(|| Error::config("target", format!("node {target} is corrupt")))?;
    let members = &partition.components[comp];
    let mut out = Vec::new();
    for &j in members {
        let masked: f64 = partition
            .honest_neighbors(j)
            .iter()
            .map(|&k| Graph::edge_weight(j, k) * z0.get(g, j, k))
            .sum();
        out.push(s[j] - masked);
    }
    for &e in &partition.honest_edges {
        let (j, k) = g.edges()[e];
        if partition.component_of(j) == Some(comp) {
            out.push(z0.get(g, j, k) - z0.get(g, k, j));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakagePoint {
    pub sigma_z: f64,
    pub estimate: MiEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmpcCompareResult {
    pub points: Vec<LeakagePoint>,
    /// KSG estimate of `I(S_i; sum over the honest component)`.
    pub ideal: MiEstimate,
    /// Closed form of the same for i.i.d. unit Gaussians.
    pub ideal_nmi: f64,
    pub topology: String,
}

/// Leakage of the honest-pair observable as `sigma_z` grows, against the
/// SMPC component-sum leakage.
pub fn run_smpc_compare(cfg: &ExperimentConfig) -> Result<SmpcCompareResult, Error> {
    cfg.validate_for(Experiment::SmpcCompare)?;
    let exp = Experiment::SmpcCompare;
    let (g, partition) = honest_pair_topology(cfg.n)?;
    let target = 0;
    // common random numbers across sigma_z: z^(0) = sigma_z * w
    let draws = per_trial(cfg.trials, |trial| {
        let s = unit_gaussians(cfg.n, &mut rng_for(cfg.seed, &[exp.tag(), trial, 0]));
        let w = unit_gaussians(
            g.slot_count(),
            &mut rng_for(cfg.seed, &[exp.tag(), trial, 1]),
        );
        Ok((s, w))
    })?;
    let opts = cfg.ksg_options(Normalization::Whiten);
    let x: Vec<Vec<f64>> = draws.iter().map(|(s, _)| vec![s[target]]).collect();
    let mut points = Vec::new();
    for &sigma_z in &cfg.grids.mi_sigma_z {
        let y = draws
            .iter()
            .map(|(s, w)| {
                let z0 = EdgeField::from_vec(&g, w.iter().map(|v| sigma_z * v).collect());
                leakage_tuple(&g, &partition, target, s, &z0)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let estimate = ksg_mi_with(&SampleMatrix::new(&x, &y)?, &opts)?;
        points.push(LeakagePoint { sigma_z, estimate });
    }
    let inputs: Vec<Vec<f64>> = draws.iter().map(|(s, _)| s.clone()).collect();
    let pairs = crate::adversary::ideal_leakage_samples(&partition, target, &inputs)?;
    let ideal = ksg_mi_with(
        &SampleMatrix::from_pairs(&pairs),
        &cfg.ksg_options(Normalization::Standardize),
    )?;
    let size = partition.components[partition.component_of(target).expect("target is honest")].len()
        as f64;
    Ok(SmpcCompareResult {
        points,
        ideal,
        ideal_nmi: nmi(-0.5 * (1.0 - 1.0 / size).ln()),
        topology: format!(
            "honest nodes 0 and 1 adjacent; corrupt nodes 2..{} each adjacent to both honest nodes",
            cfg.n - 1
        ),
    })
}

impl SmpcCompareResult {
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        let mut sorted = self.points.clone();
        sorted.sort_by(|a, b| a.sigma_z.total_cmp(&b.sigma_z));
        let nmis: Vec<f64> = sorted.iter().map(|p| p.estimate.nmi()).collect();
        let monotone = sorted
            .windows(2)
            .all(|w| w[1].estimate.mi_nats <= w[0].estimate.mi_nats + MI_SLACK_NATS);
        out.push(Check::new(
            "leakage_non_increasing",
            monotone,
            format!("NMI by ascending sigma_z: {nmis:.4?} (slack {MI_SLACK_NATS} nats)"),
        ));
        if let Some(last) = sorted.last() {
            let gap = (last.estimate.nmi() - self.ideal_nmi).abs();
            out.push(Check::new(
                "approaches_smpc_ideal",
                gap <= 0.05,
                format!(
                    "NMI at sigma_z={} is {:.4}, ideal {:.4} (KSG {:.4}), gap {gap:.4} (<= 0.05)",
                    last.sigma_z,
                    last.estimate.nmi(),
                    self.ideal_nmi,
                    self.ideal.nmi()
                ),
            ));
        }
        out
    }

    pub fn files(&self) -> Vec<OutputFile> {
        let mut csv = String::from("sigma_z,mi_nats,nmi,smpc_ideal_nmi,smpc_ideal_nmi_ksg\n");
        for p in &self.points {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                p.sigma_z,
                p.estimate.mi_nats,
                p.estimate.nmi(),
                self.ideal_nmi,
                self.ideal.nmi()
            );
        }
        let mut records: Vec<MiRecord> = self
            .points
            .iter()
            .map(|p| {
                MiRecord::new(
                    "smpc-compare",
                    "S_0",
                    &format!("leakage_tuple(sigma_z={})", p.sigma_z),
                    &p.estimate,
                )
            })
            .collect();
        records.push(MiRecord::new("smpc-compare", "S_0", "S_0+S_1", &self.ideal));
        vec![
            OutputFile::new("fig3.csv", csv),
            OutputFile::new("mi.csv", mi_csv(&records)),
        ]
    }
}

/// Geometric graph with at least one degree-1 node, resampled until one
/// appears. Returns the lowest-index such node as the target.
fn leaf_instance(
    cfg: &ExperimentConfig,
    exp: Experiment,
    trial: u64,
) -> Result<(Graph, Vec<f64>, usize), Error> {
    const ATTEMPTS: u64 = 100_000;
    for attempt in 0..ATTEMPTS {
        let mut rng = rng_for(cfg.seed, &[exp.tag(), trial, 0, attempt]);
        let g = generate_geometric_graph(cfg.n, default_radius(cfg.n), &mut rng)?;
        if let Some(target) = (0..cfg.n).find(|&i| g.degree(i) == 1) {
            let s = unit_gaussians(cfg.n, &mut rng);
            return Ok((g, s, target));
        }
    }
    Err(Error::CheckFailed(format!(
        "no graph with a degree-1 node in {ATTEMPTS} draws"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpComparePoint {
    pub delta_min: f64,
    pub mechanism: DpMechanism,
    /// Mean ADQSP MSE(t), index `t - 1`.
    pub adqsp_mse: Vec<f64>,
    /// Mean MSE(t) of the consensus on perturbed inputs against the true
    /// average, index `t - 1`.
    pub dp_trajectory_mse: Vec<f64>,
    /// Mean `(1/n) sum_i r_i^2`.
    pub dp_mse: f64,
    /// `(t, NMI of S_i against S_i + c_{i,k} n_{k|i}^(t+1))` as
    /// reconstructed by the coalition.
    pub adqsp_nmi: Vec<(usize, MiEstimate)>,
    /// `I(S_i; S_i + R_i)`.
    pub dp_nmi: MiEstimate,
    pub saturations: usize,
}

impl DpComparePoint {
    pub fn adqsp_converged(&self) -> f64 {
        let w = CONVERGED_WINDOW.min(self.adqsp_mse.len());
        mean(self.adqsp_mse[self.adqsp_mse.len() - w..].iter().copied())
    }

    pub fn mse_ratio(&self) -> f64 {
        self.adqsp_converged() / self.dp_mse
    }

    pub fn final_nmi(&self) -> f64 {
        self.adqsp_nmi.last().map_or(f64::NAN, |(_, e)| e.nmi())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpCompareResult {
    pub points: Vec<DpComparePoint>,
}

struct DpTrial {
    secret: f64,
    adqsp_mse: Vec<f64>,
    noisy: Vec<f64>,
    dp_curve: Vec<f64>,
    dp_mse: f64,
    dp_observed: f64,
    saturations: usize,
}

/// ADQSP with `delta_min = u_r` against uniform local noise of width `u_r`,
/// with all nodes but a degree-1 target corrupt.
pub fn run_dp_compare(cfg: &ExperimentConfig) -> Result<DpCompareResult, Error> {
    cfg.validate_for(Experiment::DpCompare)?;
    let exp = Experiment::DpCompare;
    let t_max = cfg.consensus.t_max;
    let mut sampled: Vec<usize> = (0..t_max).step_by(cfg.grids.nmi_stride).collect();
    if sampled.last() != Some(&(t_max - 1)) {
        sampled.push(t_max - 1);
    }
    let mut points = Vec::new();
    for (cell, &delta_min) in cfg.grids.dp_delta_min.iter().enumerate() {
        let mut acfg = cfg
            .adqsp
            .config(cfg.adqsp.sigma_z, delta_min, cfg.consensus)?;
        acfg.record_transcript = true;
        let mechanism = cfg.dp.unwrap_or(DpMechanism::Uniform { width: delta_min });
        let dcfg = DpConfig {
            mechanism,
            consensus: cfg.consensus,
        };
        let cell = cell as u64;
        let trials = per_trial(cfg.trials, |trial| {
            let (g, s, target) = leaf_instance(cfg, exp, trial)?;
            let avg = vec![average(&s); s.len()];
            let dither = derive_seed(cfg.seed, &[exp.tag(), trial, 2, cell]);
            let run = run_adqsp(
                &s,
                &g,
                &acfg,
                dither,
                &mut rng_for(cfg.seed, &[exp.tag(), trial, 1, cell]),
            )?;
            let model = CorruptModel::all_but(cfg.n, target, cfg.eavesdrop);
            let view = collect_view(&run.transcript, &model, ProtocolKind::Adqsp, &s);
            let series = reconstruct_noisy_secret_series(&view, &g, target, &acfg)?;
            let noisy = sampled.iter().map(|&t| series[t][0].value).collect();
            let dp = run_dp(
                &s,
                &g,
                &dcfg,
                &mut rng_for(cfg.seed, &[exp.tag(), trial, 3, cell]),
            )?;
            Ok(DpTrial {
                secret: s[target],
                adqsp_mse: run.trajectory.mse_curve(&avg),
                noisy,
                dp_curve: dp.trajectory.mse_curve(&avg),
                dp_mse: dp.mse(),
                dp_observed: dp.perturbed[target],
                saturations: run.saturations,
            })
        })?;
        let x: Vec<Vec<f64>> = trials.iter().map(|t| vec![t.secret]).collect();
        let opts = cfg.ksg_options(Normalization::Standardize);
        let adqsp_nmi = sampled
            .iter()
            .enumerate()
            .map(|(idx, &t)| {
                let y: Vec<Vec<f64>> = trials.iter().map(|tr| vec![tr.noisy[idx]]).collect();
                Ok((t, ksg_mi_with(&SampleMatrix::new(&x, &y)?, &opts)?))
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let y: Vec<Vec<f64>> = trials.iter().map(|t| vec![t.dp_observed]).collect();
        let dp_nmi = ksg_mi_with(&SampleMatrix::new(&x, &y)?, &opts)?;
        points.push(DpComparePoint {
            delta_min,
            mechanism,
            adqsp_mse: elementwise_mean(
                &trials
                    .iter()
                    .map(|t| t.adqsp_mse.clone())
                    .collect::<Vec<_>>(),
            ),
            dp_trajectory_mse: elementwise_mean(
                &trials
                    .iter()
                    .map(|t| t.dp_curve.clone())
                    .collect::<Vec<_>>(),
            ),
            dp_mse: mean(trials.iter().map(|t| t.dp_mse)),
            adqsp_nmi,
            dp_nmi,
            saturations: trials.iter().map(|t| t.saturations).sum(),
        });
    }
    Ok(DpCompareResult { points })
}

impl DpCompareResult {
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for p in &self.points {
            let ratio = p.mse_ratio();
            out.push(Check::new(
                format!("mse_ratio u_r={}", p.delta_min),
                (0.5..=2.0).contains(&ratio),
                format!(
                    "ADQSP converged {:.3e} / DP {:.3e} = {ratio:.3} (0.5..2)",
                    p.adqsp_converged(),
                    p.dp_mse
                ),
            ));
            let gap = (p.final_nmi() - p.dp_nmi.nmi()).abs();
            out.push(Check::new(
                format!("nmi_matches_dp u_r={}", p.delta_min),
                gap <= 0.05,
                format!(
                    "ADQSP NMI {:.4}, DP NMI {:.4}, gap {gap:.4} (<= 0.05)",
                    p.final_nmi(),
                    p.dp_nmi.nmi()
                ),
            ));
        }
        let sat: usize = self.points.iter().map(|p| p.saturations).sum();
        out.push(Check::new(
            "saturations",
            sat == 0,
            format!("{sat} saturation events"),
        ));
        out
    }

    pub fn files(&self) -> Vec<OutputFile> {
        let mut fig4 = String::from("t,u_r,adqsp_mse,dp_mse,dp_trajectory_mse\n");
        let mut fig5 = String::from("t,u_r,adqsp_nmi,dp_nmi\n");
        let mut records = Vec::new();
        for p in &self.points {
            for (i, (a, d)) in p.adqsp_mse.iter().zip(&p.dp_trajectory_mse).enumerate() {
                let _ = writeln!(fig4, "{},{},{a:e},{:e},{d:e}", i + 1, p.delta_min, p.dp_mse);
            }
            for (t, e) in &p.adqsp_nmi {
                let _ = writeln!(fig5, "{t},{},{},{}", p.delta_min, e.nmi(), p.dp_nmi.nmi());
                records.push(MiRecord::new(
                    "dp-compare",
                    "S_i",
                    &format!("S_i+c_ik*N_ki(t={t};u_r={})", p.delta_min),
                    e,
                ));
            }
            records.push(MiRecord::new(
                "dp-compare",
                "S_i",
                &format!("S_i+R_i(u_r={})", p.delta_min),
                &p.dp_nmi,
            ));
        }
        vec![
            OutputFile::new("fig4.csv", fig4),
            OutputFile::new("fig5.csv", fig5),
            OutputFile::new("mi.csv", mi_csv(&records)),
        ]
    }
}

/// Plug-in MI between a secret in `Z_p` and its additive shares.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharingLeakage {
    pub p: u64,
    /// Neighbor count; there are `degree + 1` shares.
    pub degree: usize,
    pub samples: usize,
    /// Largest MI over the subsets missing exactly one share, in nats.
    pub max_subset_mi: f64,
    /// Draws where the full share set did not give back the secret.
    pub reconstruction_failures: usize,
}

/// Field size and neighbor count pairs for the sharing check. The field is
/// kept small so the empirical joint alphabet is well covered.
pub const SHARING_CASES: [(u64, usize); 3] = [(7, 1), (3, 2), (3, 3)];

/// Draws uniform secrets, splits each into shares and measures what every
/// `degree`-subset of the `degree + 1` shares says about the secret.
pub fn additive_sharing_leakage(
    p: u64,
    degree: usize,
    samples: usize,
    seed: u64,
) -> Result<SharingLeakage, Error> {
    let mut rng = rng_for(seed, &[p, degree as u64]);
    let neighbors: Vec<usize> = (1..=degree).collect();
    let mut draws = Vec::with_capacity(samples);
    let mut reconstruction_failures = 0;
    for _ in 0..samples {
        let secret = rng.random_range(0..p);
        let shares = smpc_share(secret, &neighbors, p, &mut rng);
        reconstruction_failures += usize::from(shares.reconstruct(p) != secret);
        let mut all = vec![shares.own];
        all.extend(shares.to_neighbors.iter().map(|&(_, r)| r));
        draws.push((secret, all));
    }
    let mut max_subset_mi = 0.0f64;
    for omit in 0..=degree {
        let pairs: Vec<(u64, Vec<u64>)> = draws
            .iter()
            .map(|(secret, all)| {
                let rest = all
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != omit)
                    .map(|(_, &r)| r)
                    .collect();
                (*secret, rest)
            })
            .collect();
        max_subset_mi = max_subset_mi.max(discrete_mi(&pairs)?);
    }
    Ok(SharingLeakage {
        p,
        degree,
        samples,
        max_subset_mi,
        reconstruction_failures,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AttackResiduals {
    /// Trials whose SMPC output differs from the fixed-point average.
    pub smpc_output_mismatches: usize,
    /// Trials where `sum s'_i != sum s_i mod p`.
    pub smpc_sum_mismatches: usize,
    /// Component sums that differ from ground truth.
    pub component_mismatches: usize,
    pub components_checked: usize,
    /// Per theta, the largest extrapolation error.
    pub recursion_max_dev: Vec<(f64, f64)>,
    /// `max |value - s_i - c_{i,k} n_{k|i}^(t+1)|`.
    pub noise_identity_max: f64,
    /// `max |value - s_i|` at the last iteration.
    pub final_reconstruction_max: f64,
}

#[derive(Debug, Clone)]
pub struct AttackVerifyResult {
    pub residuals: AttackResiduals,
    pub sharing: Vec<SharingLeakage>,
    pub checks: Vec<Check>,
    pub files: Vec<OutputFile>,
}

struct AttackTrial {
    smpc_output_ok: bool,
    smpc_sum_ok: bool,
    components: usize,
    component_mismatches: usize,
    recursion: Vec<f64>,
    noise_identity: f64,
    final_reconstruction: f64,
    attack_rows: String,
    example: Option<Vec<OutputFile>>,
}

fn corrupt_set<R: Rng + ?Sized>(spec: Option<&CorruptSpec>, n: usize, rng: &mut R) -> Vec<usize> {
    match spec {
        Some(CorruptSpec::Count(k)) => sample_indices(rng, n, *k).into_vec(),
        Some(CorruptSpec::Explicit(list)) => list.clone(),
        Some(CorruptSpec::AllButOne(target)) => {
            let t = target.unwrap_or_else(|| rng.random_range(0..n));
            (0..n).filter(|&j| j != t).collect()
        }
        None => {
            let k = rng.random_range(1..n);
            sample_indices(rng, n, k).into_vec()
        }
    }
}

fn attack_trial(cfg: &ExperimentConfig, trial: u64) -> Result<AttackTrial, Error> {
    let exp = Experiment::AttackVerify;
    let (g, s) = trial_instance(cfg, exp, trial)?;
    let n = cfg.n;
    let mut rng = rng_for(cfg.seed, &[exp.tag(), trial, 1]);

    // SMPC exactness and the component-sum attack
    let scfg = SmpcConfig {
        p: cfg.smpc.p,
        scale: cfg.smpc.scale,
        consensus: cfg.consensus,
    };
    let smpc = smpc_mask_and_average(&s, &g, &scfg, &mut rng)?;
    let exact = fixed_point_average(&s, scfg.scale);
    let smpc_output_ok = smpc.output.iter().all(|&o| o == exact);
    let p = scfg.p;
    let masked_sum = smpc.masked.iter().fold(0, |a, &v| add_mod(a, v, p));
    let input_sum = smpc.encoded.iter().fold(0, |a, &v| add_mod(a, v, p));
    let corrupt = corrupt_set(cfg.corrupt.as_ref(), n, &mut rng);
    let partition = honest_partition(&g, corrupt.iter().copied())?;
    // the SMPC analysis assumes the non-secure x broadcasts are observed
    let model = CorruptModel::new(corrupt.iter().copied(), true);
    let view = collect_view(&smpc.transcript, &model, ProtocolKind::Smpc, &s);
    let sums = extract_component_sums(&view, &g, &partition, &scfg)?;
    let mut attack_rows = String::new();
    let mut component_mismatches = 0;
    for (idx, cs) in sums.iter().enumerate() {
        let field = cs
            .members
            .iter()
            .fold(0, |a, &j| add_mod(a, smpc.encoded[j], p));
        component_mismatches += usize::from(cs.field != field);
        let truth: f64 = cs.members.iter().map(|&j| s[j]).sum();
        let _ = writeln!(
            attack_rows,
            "{trial},{},component_sum {idx},{:e},{truth:e},{:e}",
            cs.members[0],
            cs.value,
            cs.value - truth
        );
    }

    // trajectory extrapolation from two iterates
    let sigma = cfg.adqsp.sigma_z;
    let recursion = cfg
        .grids
        .theta
        .iter()
        .map(|&theta| {
            let cons = ConsensusConfig {
                theta,
                t_max: cfg.grids.recursion_t_max,
                ..cfg.consensus
            };
            let z0 = EdgeField::from_fn(&g, |_, _| {
                let w: f64 = StandardNormal.sample(&mut rng);
                sigma * w
            });
            let traj = run_plain(&s, &cons, &g, z0);
            let pred = predict_trajectory(traj.at(1), traj.at(2), &g, &cons);
            (3..=cons.t_max)
                .flat_map(|t| {
                    traj.at(t)
                        .iter()
                        .zip(pred.at(t))
                        .map(|(a, b)| (a - b).abs())
                        .collect::<Vec<_>>()
                })
                .fold(0.0, f64::max)
        })
        .collect();

    // noisy-secret reconstruction of a node whose neighbors are all corrupt
    let target = rng.random_range(0..n);
    let mut acfg = cfg
        .adqsp
        .config(sigma, cfg.adqsp.delta_min, cfg.consensus)?;
    acfg.record_transcript = true;
    let dither = derive_seed(cfg.seed, &[exp.tag(), trial, 2]);
    let run = run_adqsp(&s, &g, &acfg, dither, &mut rng)?;
    let model = CorruptModel::all_but(n, target, cfg.eavesdrop);
    let view = collect_view(&run.transcript, &model, ProtocolKind::Adqsp, &s);
    let series = reconstruct_noisy_secret_series(&view, &g, target, &acfg)?;
    let mut noise_identity = 0.0f64;
    for (t, row) in series.iter().enumerate() {
        for ns in row {
            let noise = run.noise(t + 1).as_slice()[g.slot(ns.neighbor, target)];
            let truth = s[target] + ns.coefficient * noise;
            let residual = ns.value - truth;
            noise_identity = noise_identity.max(residual.abs());
            // full series for the first trial, the last iteration otherwise
            if trial == 0 || t + 1 == series.len() {
                let _ = writeln!(
                    attack_rows,
                    "{trial},{target},noisy_secret t={t} k={},{:e},{truth:e},{residual:e}",
                    ns.neighbor, ns.value
                );
            }
        }
    }
    let final_reconstruction = series
        .last()
        .map(|row| {
            row.iter()
                .map(|ns| (ns.value - s[target]).abs())
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::NAN);
    let example = (trial == 0).then(|| {
        vec![
            OutputFile::new("transcript.csv", run.transcript.to_csv()),
            OutputFile::new("trajectory.csv", run.trajectory.to_csv()),
            OutputFile::new("graph.txt", g.to_text()),
        ]
    });
    Ok(AttackTrial {
        smpc_output_ok,
        smpc_sum_ok: masked_sum == input_sum,
        components: sums.len(),
        component_mismatches,
        recursion,
        noise_identity,
        final_reconstruction,
        attack_rows,
        example,
    })
}

/// End-to-end run of the attacks against ground truth.
pub fn run_attack_verify(cfg: &ExperimentConfig) -> Result<AttackVerifyResult, Error> {
    cfg.validate_for(Experiment::AttackVerify)?;
    let trials = per_trial(cfg.trials, |trial| attack_trial(cfg, trial))?;
    let mut r = AttackResiduals {
        recursion_max_dev: cfg.grids.theta.iter().map(|&t| (t, 0.0)).collect(),
        ..AttackResiduals::default()
    };
    let mut files = Vec::new();
    let mut attacks =
        String::from("trial,target_node,quantity,reconstructed,ground_truth,residual\n");
    for t in &trials {
        attacks.push_str(&t.attack_rows);
        r.smpc_output_mismatches += usize::from(!t.smpc_output_ok);
        r.smpc_sum_mismatches += usize::from(!t.smpc_sum_ok);
        r.component_mismatches += t.component_mismatches;
        r.components_checked += t.components;
        for (slot, dev) in r.recursion_max_dev.iter_mut().zip(&t.recursion) {
            slot.1 = slot.1.max(*dev);
        }
        r.noise_identity_max = r.noise_identity_max.max(t.noise_identity);
        r.final_reconstruction_max = r.final_reconstruction_max.max(t.final_reconstruction);
        if let Some(ex) = &t.example {
            files.extend(ex.iter().cloned());
        }
    }
    let count = trials.len();
    let mut checks = vec![
        Check::new(
            "smpc_exact_average",
            r.smpc_output_mismatches == 0,
            format!(
                "{} of {count} runs off the fixed-point average",
                r.smpc_output_mismatches
            ),
        ),
        Check::new(
            "smpc_masked_sum",
            r.smpc_sum_mismatches == 0,
            format!(
                "{} of {count} runs with sum s' != sum s mod p",
                r.smpc_sum_mismatches
            ),
        ),
        Check::new(
            "component_sums",
            r.component_mismatches == 0,
            format!(
                "{} of {} component sums wrong",
                r.component_mismatches, r.components_checked
            ),
        ),
    ];
    for (theta, dev) in &r.recursion_max_dev {
        checks.push(Check::new(
            format!("recursion theta={theta}"),
            *dev < 1e-8,
            format!("max deviation {dev:.3e} (< 1e-8)"),
        ));
    }
    checks.push(Check::new(
        "noisy_secret_identity",
        r.noise_identity_max < 1e-9,
        format!(
            "max |value - s_i - c n| = {:.3e} (< 1e-9)",
            r.noise_identity_max
        ),
    ));
    if cfg.adqsp.delta_min == 0.0 {
        checks.push(Check::new(
            "secret_reconstruction",
            r.final_reconstruction_max < 1e-6,
            format!(
                "max |value - s_i| at t_max = {:.3e} (< 1e-6)",
                r.final_reconstruction_max
            ),
        ));
    }
    let sharing = SHARING_CASES
        .iter()
        .map(|&(p, degree)| {
            additive_sharing_leakage(
                p,
                degree,
                cfg.grids.sharing_samples,
                derive_seed(cfg.seed, &[Experiment::AttackVerify.tag(), 3]),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    for sl in &sharing {
        checks.push(Check::new(
            format!("additive_sharing p={} degree={}", sl.p, sl.degree),
            sl.max_subset_mi < 0.02 && sl.reconstruction_failures == 0,
            format!(
                "max subset MI {:.4} nats (< 0.02) over {} draws, {} reconstruction failures",
                sl.max_subset_mi, sl.samples, sl.reconstruction_failures
            ),
        ));
    }
    let mut summary = String::from("check,passed,detail\n");
    for c in &checks {
        let _ = writeln!(
            summary,
            "{},{},\"{}\"",
            c.name,
            c.passed,
            c.detail.replace('"', "'")
        );
    }
    files.push(OutputFile::new("attacks.csv", attacks));
    files.push(OutputFile::new("attack_report.csv", summary));
    Ok(AttackVerifyResult {
        residuals: r,
        sharing,
        checks,
        files,
    })
}
