//! One PASS/FAIL line per acceptance criterion.
//!
//! Criteria listed in `EXPECTED_FAILURES` are known not to meet their
//! tolerance and are still reported as FAIL. The run exits non-zero only
//! when the set of failing criteria differs from that list.
//!
//! `ACCEPTANCE_TRIALS` overrides the Monte Carlo trial count.

use std::process::ExitCode;

use adqsp::consensus::{
    closed_form_zperp, project, run_plain, subspace_basis, ConsensusConfig, EdgeField,
    PlainIteration,
};
use adqsp::harness::{run_experiment, Check, Experiment, ExperimentConfig, Report, DESK_TRIALS};
use adqsp::infotheory::{gaussian_mi, ksg_mi, SampleMatrix};
use adqsp::quantizer::{quantize, QuantizerSchedule};
use adqsp::seed::rng_for;
use adqsp::topology::{default_radius, generate_geometric_graph, incidence, Graph};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floor prediction for theta = 0 (measured ratio about 4.1) and the
/// ADQSP/DP MSE ratio (about 0.49).
const EXPECTED_FAILURES: [usize; 2] = [2, 12];

const ATTACK_TRIALS: usize = 100;

struct Line {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn from_checks<'a>(
    id: usize,
    title: &'static str,
    checks: impl IntoIterator<Item = &'a Check>,
) -> Line {
    let checks: Vec<&Check> = checks.into_iter().collect();
    assert!(!checks.is_empty(), "criterion {id} has no checks");
    let failing: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    let detail = if failing.is_empty() {
        format!("{} checks", checks.len())
    } else {
        format!(
            "{} of {} checks fail; {}",
            failing.len(),
            checks.len(),
            failing.join("; ")
        )
    };
    Line {
        id,
        title,
        passed: failing.is_empty(),
        detail,
    }
}

fn named<'a>(report: &'a Report, prefixes: &'a [&str]) -> impl Iterator<Item = &'a Check> {
    report
        .checks
        .iter()
        .filter(move |c| prefixes.iter().any(|p| c.name.starts_with(p)))
}

fn experiment(exp: Experiment, mut cfg: ExperimentConfig) -> Report {
    cfg.experiment = Some(exp);
    run_experiment(exp, &cfg).unwrap_or_else(|e| panic!("{exp}: {e}"))
}

fn graph(n: usize, seed: u64) -> Graph {
    generate_geometric_graph(n, default_radius(n), &mut rng_for(seed, &[])).unwrap()
}

fn gaussian_field(g: &Graph, sigma: f64, rng: &mut impl Rng) -> EdgeField {
    EdgeField::from_fn(g, |_, _| {
        let w: f64 = StandardNormal.sample(&mut *rng);
        sigma * w
    })
}

fn subspace_line() -> Line {
    let mut worst = [0.0f64; 3];
    for seed in 0..20u64 {
        let g = graph(30, seed);
        let inc = incidence(&g);
        let basis = subspace_basis(&inc, None);
        let mut rng = rng_for(seed, &[1]);
        let s: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z0 = gaussian_field(&g, 10.0, &mut rng);
        let (_, perp0) = project(&z0, &basis);
        worst[0] = worst[0].max((inc.c.transpose() * perp0.to_dvector()).norm());
        let (_, shift) = project(&gaussian_field(&g, 100.0, &mut rng), &basis);
        for theta in [0.0, 0.2, 0.5] {
            let cfg = ConsensusConfig::new(1.0, theta, 50).unwrap();
            let mut it = PlainIteration::new(&g, cfg, &s, z0.clone());
            for t in 1..=50 {
                it.step();
                let (_, perp) = project(it.z(), &basis);
                worst[1] = worst[1].max(perp.max_abs_diff(&closed_form_zperp(&perp0, t, theta)));
            }
            let a = run_plain(&s, &cfg, &g, z0.clone());
            let b = run_plain(&s, &cfg, &g, z0.add(&shift));
            worst[2] = worst[2].max(a.max_abs_diff(&b));
        }
    }
    Line {
        id: 8,
        title: "subspace properties",
        passed: worst.iter().all(|w| *w < 1e-9),
        detail: format!(
            "|C^T z_perp| {:.2e}, closed form {:.2e}, x shift invariance {:.2e} (each < 1e-9)",
            worst[0], worst[1], worst[2]
        ),
    }
}

fn quantizer_line(saturation_checks: &[&Check]) -> Line {
    let n = 100_000;
    let critical = 1.628 / (n as f64).sqrt();
    let sched = QuantizerSchedule::new(1.0, 0.95, 0.0, 5).unwrap();
    let width = sched.cell_width(0);
    let (lo, hi) = sched.level_range();
    let (a, b) = (
        lo as f64 * width + width / 2.0,
        hi as f64 * width + width / 2.0,
    );
    let mut rng = rng_for(9, &[]);
    let mut values = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    for _ in 0..n {
        let v = rng.random_range(a..b);
        let q = quantize(v, &sched, 0, rng.random_range(-width / 2.0..width / 2.0));
        values.push(v);
        errors.push(q.output - v);
    }
    let mut u: Vec<f64> = errors.iter().map(|e| e / width + 0.5).collect();
    u.sort_by(f64::total_cmp);
    let ks = u
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n as f64 - v).max(v - i as f64 / n as f64))
        .fold(0.0, f64::max);
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (mv, me) = (mean(&values), mean(&errors));
    let cov: f64 = values
        .iter()
        .zip(&errors)
        .map(|(v, e)| (v - mv) * (e - me))
        .sum();
    let var_v: f64 = values.iter().map(|v| (v - mv).powi(2)).sum();
    let var_e: f64 = errors.iter().map(|e| (e - me).powi(2)).sum();
    let corr = cov / (var_v * var_e).sqrt();
    let saturated = saturation_checks.iter().filter(|c| !c.passed).count();
    Line {
        id: 9,
        title: "dithered quantizer",
        passed: ks < critical && corr.abs() < 0.02 && saturated == 0,
        detail: format!(
            "KS {ks:.5} (< {critical:.5}), corr {corr:.4}, saturation checks failing {saturated} of {}",
            saturation_checks.len()
        ),
    }
}

fn estimator_line() -> Line {
    let mut worst = 0.0f64;
    for (i, rho) in [0.0, 0.3, 0.5, 0.8].into_iter().enumerate() {
        let mut rng = rng_for(100 + i as u64, &[]);
        let pairs: Vec<(f64, f64)> = (0..10_000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                (a, rho * a + (1.0f64 - rho * rho).sqrt() * b)
            })
            .collect();
        let est = ksg_mi(&SampleMatrix::from_pairs(&pairs), 3).unwrap();
        worst = worst.max((est.mi_nats - gaussian_mi(rho).unwrap()).abs());
    }
    Line {
        id: 10,
        title: "MI estimator calibration",
        passed: worst < 0.03,
        detail: format!("max |KSG - closed form| {worst:.4} nats (< 0.03)"),
    }
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored
    let trials = std::env::var("ACCEPTANCE_TRIALS")
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .expect("ACCEPTANCE_TRIALS must be an integer")
        })
        .unwrap_or(DESK_TRIALS);
    let base = ExperimentConfig {
        trials,
        ..ExperimentConfig::default()
    };

    let convergence = experiment(Experiment::Convergence, base.clone());
    let smpc = experiment(Experiment::SmpcCompare, base.clone());
    let dp = experiment(Experiment::DpCompare, base.clone());
    let mut attack_cfg = ExperimentConfig {
        trials: ATTACK_TRIALS.min(trials),
        ..base.clone()
    };
    attack_cfg.grids.sharing_samples = trials;
    let attack_exact = experiment(Experiment::AttackVerify, attack_cfg.clone());
    attack_cfg.adqsp.delta_min = 0.1;
    let attack_floor = experiment(Experiment::AttackVerify, attack_cfg);

    let saturations: Vec<&Check> = named(&convergence, &["saturations"])
        .chain(named(&dp, &["saturations"]))
        .collect();
    let lines = vec![
        from_checks(
            1,
            "convergence",
            named(
                &convergence,
                &["final_mse", "initial_mse_order", "slope_agreement"],
            ),
        ),
        from_checks(
            2,
            "quantization floor",
            named(&convergence, &["floor_prediction", "floor_separation"]),
        ),
        from_checks(
            3,
            "SMPC exactness",
            named(&attack_exact, &["smpc_exact_average", "smpc_masked_sum"]),
        ),
        from_checks(
            4,
            "additive-sharing privacy",
            named(&attack_exact, &["additive_sharing"]),
        ),
        from_checks(
            5,
            "component-sum attack",
            named(&attack_exact, &["component_sums"]),
        ),
        from_checks(
            6,
            "trajectory recursion",
            named(&attack_exact, &["recursion"]),
        ),
        from_checks(
            7,
            "noisy-secret attack",
            named(&attack_floor, &["noisy_secret_identity"]).chain(named(
                &attack_exact,
                &["noisy_secret_identity", "secret_reconstruction"],
            )),
        ),
        subspace_line(),
        quantizer_line(&saturations),
        estimator_line(),
        from_checks(
            11,
            "SMPC-limit leakage",
            named(&smpc, &["leakage_non_increasing", "approaches_smpc_ideal"]),
        ),
        from_checks(
            12,
            "DP-limit behavior",
            named(&dp, &["mse_ratio", "nmi_matches_dp"]),
        ),
        from_checks(
            13,
            "maximal leakage at perfect accuracy",
            named(&attack_exact, &["secret_reconstruction"]),
        ),
    ];

    println!(
        "acceptance ({trials} trials, attacks {} trials)",
        ATTACK_TRIALS.min(trials)
    );
    for l in &lines {
        println!(
            "{} {:>2} {}: {}",
            if l.passed { "PASS" } else { "FAIL" },
            l.id,
            l.title,
            l.detail
        );
    }
    let failing: Vec<usize> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    let passed = lines.len() - failing.len();
    println!("{passed} of {} criteria pass", lines.len());
    if failing == EXPECTED_FAILURES {
        println!("failing criteria match the known list {EXPECTED_FAILURES:?}");
        ExitCode::SUCCESS
    } else {
        println!("failing criteria {failing:?} differ from the known list {EXPECTED_FAILURES:?}");
        ExitCode::FAILURE
    }
}
