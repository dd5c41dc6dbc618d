//! Mutual-information and entropy estimators.
//!
//! Continuous MI uses the Kraskov-Stoegbauer-Grassberger estimator
//! (algorithm 1, max-norm); entropy uses Kozachenko-Leonenko. Neighbor search
//! is exact brute force, parallel over query points.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::EstimatorError;

/// Paired samples: `n` rows of an `x` block (`dx` columns) and a `y` block.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n: usize,
    dx: usize,
    dy: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self, EstimatorError> {
        if x.len() != y.len() {
            return Err(EstimatorError::LengthMismatch(x.len(), y.len()));
        }
        let dx = x.first().map_or(0, Vec::len);
        let dy = y.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != dx) || y.iter().any(|r| r.len() != dy) {
            return Err(EstimatorError::Degenerate("ragged rows".into()));
        }
        if dx == 0 || dy == 0 {
            return Err(EstimatorError::Degenerate("empty block".into()));
        }
        Ok(Self {
            n: x.len(),
            dx,
            dy,
            x: x.concat(),
            y: y.concat(),
        })
    }

    /// Scalar pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self {
            n: pairs.len(),
            dx: 1,
            dy: 1,
            x: pairs.iter().map(|p| p.0).collect(),
            y: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dx, self.dy)
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dx..(i + 1) * self.dx]
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.dy..(i + 1) * self.dy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub mi_nats: f64,
    pub n_samples: usize,
    pub k: usize,
}

impl MiEstimate {
    pub fn nmi(&self) -> f64 {
        nmi(self.mi_nats)
    }
}

/// Preprocessing applied to each block before the neighbor search. Both are
/// invertible per block, so MI is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Per-column unit variance.
    Standardize,
    /// Full block whitening; directions with (numerically) zero variance
    /// are constant and dropped.
    Whiten,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsgOptions {
    pub k: usize,
    pub normalization: Normalization,
    /// Relative amplitude of the tie-breaking jitter.
    pub jitter: f64,
    pub jitter_seed: u64,
}

impl Default for KsgOptions {
    fn default() -> Self {
        Self {
            k: 3,
            normalization: Normalization::Standardize,
            jitter: 1e-10,
            jitter_seed: 0x6b73_67,
        }
    }
}

fn column_stats(data: &[f64], n: usize, d: usize, col: usize) -> (f64, f64) {
    let mean = (0..n).map(|i| data[i * d + col]).sum::<f64>() / n as f64;
    let var = (0..n)
        .map(|i| (data[i * d + col] - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt())
}

fn standardize(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let stats: Vec<(f64, f64)> = (0..d).map(|c| column_stats(data, n, d, c)).collect();
    let mut out = data.to_vec();
    for i in 0..n {
        for (c, &(mean, sd)) in stats.iter().enumerate() {
            let v = data[i * d + c] - mean;
            out[i * d + c] = if sd > 0.0 { v / sd } else { v };
        }
    }
    out
}

/// Returns the whitened block and its new dimension.
fn whiten(data: &[f64], n: usize, d: usize) -> (Vec<f64>, usize) {
    let means: Vec<f64> = (0..d).map(|c| column_stats(data, n, d, c).0).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (data[i * d + a] - means[a]) * (data[i * d + b] - means[b]);
            }
        }
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..d)
        .filter(|&a| eig.eigenvalues[a] > 1e-12 * top && top > 0.0)
        .collect();
    if keep.is_empty() {
        return (vec![0.0; n], 1);
    }
    let dk = keep.len();
    let mut out = vec![0.0; n * dk];
    for i in 0..n {
        for (o, &a) in keep.iter().enumerate() {
            let v: f64 = (0..d)
                .map(|b| eig.eigenvectors[(b, a)] * (data[i * d + b] - means[b]))
                .sum();
            out[i * dk + o] = v / eig.eigenvalues[a].sqrt();
        }
    }
    (out, dk)
}

fn prepare(
    data: &[f64],
    n: usize,
    d: usize,
    norm: Normalization,
    jitter: f64,
    rng: &mut ChaCha20Rng,
) -> (Vec<f64>, usize) {
    let (mut out, d) = match norm {
        Normalization::Standardize => (standardize(data, n, d), d),
        Normalization::Whiten => whiten(data, n, d),
    };
    for v in &mut out {
        *v += jitter * (rng.random::<f64>() - 0.5);
    }
    (out, d)
}

fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
}

/// Distance to the `k`-th nearest other point, max-norm, for every row.
fn kth_neighbor_distances(rows: &[&[f64]], k: usize) -> Vec<f64> {
    rows.par_iter()
        .enumerate()
        .map(|(i, ri)| {
            // keep the k smallest distances, sorted ascending
            let mut best = vec![f64::INFINITY; k];
            for (j, rj) in rows.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = max_dist(ri, rj);
                if d < best[k - 1] {
                    let pos = best.partition_point(|&b| b <= d);
                    best.insert(pos, d);
                    best.pop();
                }
            }
            best[k - 1]
        })
        .collect()
}

/// KSG estimate with default options except `k`.
pub fn ksg_mi(samples: &SampleMatrix, k: usize) -> Result<MiEstimate, EstimatorError> {
    ksg_mi_with(
        samples,
        &KsgOptions {
            k,
            ..KsgOptions::default()
        },
    )
}

pub fn ksg_mi_with(
    samples: &SampleMatrix,
    opts: &KsgOptions,
) -> Result<MiEstimate, EstimatorError> {
    let n = samples.n;
    let k = opts.k;
    if k == 0 {
        return Err(EstimatorError::Degenerate("k must be >= 1".into()));
    }
    if n <= k {
        return Err(EstimatorError::TooFewSamples { needed: k, got: n });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(opts.jitter_seed);
    let (x, dx) = prepare(
        &samples.x,
        n,
        samples.dx,
        opts.normalization,
        opts.jitter,
        &mut rng,
    );
    let (y, dy) = prepare(
        &samples.y,
        n,
        samples.dy,
        opts.normalization,
        opts.jitter,
        &mut rng,
    );
    let joint: Vec<Vec<f64>> = (0..n)
        .map(|i| [&x[i * dx..(i + 1) * dx], &y[i * dy..(i + 1) * dy]].concat())
        .collect();
    let joint_rows: Vec<&[f64]> = joint.iter().map(Vec::as_slice).collect();
    let eps = kth_neighbor_distances(&joint_rows, k);
    let x_rows: Vec<&[f64]> = (0..n).map(|i| &x[i * dx..(i + 1) * dx]).collect();
    let y_rows: Vec<&[f64]> = (0..n).map(|i| &y[i * dy..(i + 1) * dy]).collect();
    let marginal_terms: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut nx = 0usize;
            let mut ny = 0usize;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if max_dist(x_rows[i], x_rows[j]) < eps[i] {
                    nx += 1;
                }
                if max_dist(y_rows[i], y_rows[j]) < eps[i] {
                    ny += 1;
                }
            }
            digamma((nx + 1) as f64) + digamma((ny + 1) as f64)
        })
        .sum();
    let mi = digamma(k as f64) + digamma(n as f64) - marginal_terms / n as f64;
    Ok(MiEstimate {
        mi_nats: mi,
        n_samples: n,
        k,
    })
}

/// Kozachenko-Leonenko differential entropy (nats) with the max-norm,
/// `H = psi(N) - psi(k) + d ln 2 + (d/N) sum ln eps_i`.
pub fn knn_entropy(rows: &[Vec<f64>], k: usize) -> Result<f64, EstimatorError> {
    let n = rows.len();
    if k == 0 {
        return Err(EstimatorError::Degenerate("k must be >= 1".into()));
    }
    if n <= k {
        return Err(EstimatorError::TooFewSamples { needed: k, got: n });
    }
    let d = rows[0].len();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let eps = kth_neighbor_distances(&refs, k);
    if eps.iter().any(|&e| e <= 0.0) {
        return Err(EstimatorError::Degenerate("duplicate samples".into()));
    }
    let mean_log = eps.iter().map(|e| e.ln()).sum::<f64>() / n as f64;
    Ok(digamma(n as f64) - digamma(k as f64) + d as f64 * (2f64.ln() + mean_log))
}

/// Plug-in MI of discrete pairs, in nats.
pub fn discrete_mi<X, Y>(pairs: &[(X, Y)]) -> Result<f64, EstimatorError>
where
    X: Hash + Eq + Clone,
    Y: Hash + Eq + Clone,
{
    if pairs.is_empty() {
        return Err(EstimatorError::TooFewSamples { needed: 0, got: 0 });
    }
    let n = pairs.len() as f64;
    let mut px: HashMap<X, f64> = HashMap::new();
    let mut py: HashMap<Y, f64> = HashMap::new();
    let mut pxy: HashMap<(X, Y), f64> = HashMap::new();
    for (x, y) in pairs {
        *px.entry(x.clone()).or_default() += 1.0;
        *py.entry(y.clone()).or_default() += 1.0;
        *pxy.entry((x.clone(), y.clone())).or_default() += 1.0;
    }
    let mi = pxy
        .iter()
        .map(|((x, y), &c)| c / n * (c * n / (px[x] * py[y])).ln())
        .sum::<f64>();
    Ok(mi.max(0.0))
}

/// `1 - exp(-2 I)`, clamped to `[0, 1]`.
pub fn nmi(mi_nats: f64) -> f64 {
    (1.0 - (-2.0 * mi_nats.max(0.0)).exp()).clamp(0.0, 1.0)
}

/// MI of a bivariate Gaussian with correlation `rho`: `-ln(1 - rho^2) / 2`.
pub fn gaussian_mi(rho: f64) -> Result<f64, EstimatorError> {
    if !(rho.abs() < 1.0) {
        return Err(EstimatorError::BadCorrelation(rho));
    }
    Ok(-0.5 * (1.0 - rho * rho).ln())
}

/// One line of an MI results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiRecord {
    pub experiment: String,
    pub x_desc: String,
    pub y_desc: String,
    pub n_samples: usize,
    pub k: usize,
    pub mi_nats: f64,
    pub nmi: f64,
}

impl MiRecord {
    pub fn new(experiment: &str, x_desc: &str, y_desc: &str, est: &MiEstimate) -> Self {
        Self {
            experiment: experiment.into(),
            x_desc: x_desc.into(),
            y_desc: y_desc.into(),
            n_samples: est.n_samples,
            k: est.k,
            mi_nats: est.mi_nats,
            nmi: est.nmi(),
        }
    }
}

pub fn mi_csv(records: &[MiRecord]) -> String {
    let mut out = String::from("experiment,x_desc,y_desc,n_samples,k,mi_nats,nmi\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.experiment, r.x_desc, r.y_desc, r.n_samples, r.k, r.mi_nats, r.nmi
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_pairs(rho: f64, n: usize, seed: u64) -> SampleMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                (a, rho * a + (1.0 - rho * rho).sqrt() * b)
            })
            .collect();
        SampleMatrix::from_pairs(&pairs)
    }

    #[test]
    fn gaussian_oracle() {
        assert_eq!(gaussian_mi(0.0).unwrap(), 0.0);
        assert!((gaussian_mi(0.5).unwrap() - 0.1438410362258904).abs() < 1e-12);
        assert!(gaussian_mi(1.0).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(0.0), 0.0);
        assert!((nmi(0.5 * 2f64.ln()) - 0.5).abs() < 1e-12);
        assert!(nmi(50.0) > 0.999_999);
        assert_eq!(nmi(-0.1), 0.0);
    }

    #[test]
    fn ksg_on_moderate_correlation() {
        let est = ksg_mi(&gaussian_pairs(0.6, 2000, 1), 3).unwrap();
        let want = gaussian_mi(0.6).unwrap();
        assert!(
            (est.mi_nats - want).abs() < 0.05,
            "{} vs {want}",
            est.mi_nats
        );
    }

    #[test]
    fn whitening_matches_standardizing_for_scalars() {
        let s = gaussian_pairs(0.3, 500, 2);
        let a = ksg_mi(&s, 3).unwrap().mi_nats;
        let b = ksg_mi_with(
            &s,
            &KsgOptions {
                normalization: Normalization::Whiten,
                ..KsgOptions::default()
            },
        )
        .unwrap()
        .mi_nats;
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn kl_entropy_of_uniform() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..4000).map(|_| vec![rng.random::<f64>() * 2.0]).collect();
        let h = knn_entropy(&rows, 3).unwrap();
        assert!((h - 2f64.ln()).abs() < 0.03, "{h}");
    }

    #[test]
    fn discrete_independent_and_identical() {
        let same: Vec<(u8, u8)> = (0..4000).map(|i| ((i % 4) as u8, (i % 4) as u8)).collect();
        assert!((discrete_mi(&same).unwrap() - 4f64.ln()).abs() < 1e-12);
        let indep: Vec<(u8, u8)> = (0..4000)
            .map(|i| ((i % 4) as u8, ((i / 4) % 3) as u8))
            .collect();
        assert!(discrete_mi(&indep).unwrap() < 1e-3);
    }

    #[test]
    fn too_few_samples() {
        let s = SampleMatrix::from_pairs(&[(0.0, 1.0), (1.0, 2.0)]);
        assert!(matches!(
            ksg_mi(&s, 3),
            Err(EstimatorError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn csv_header() {
        let est = MiEstimate {
            mi_nats: 0.5,
            n_samples: 10,
            k: 3,
        };
        let csv = mi_csv(&[MiRecord::new("smpc-compare", "s_1", "view", &est)]);
        assert!(csv.starts_with(
            "experiment,x_desc,y_desc,n_samples,k,mi_nats,nmi\nsmpc-compare,s_1,view,10,3,0.5,"
        ));
    }
}
