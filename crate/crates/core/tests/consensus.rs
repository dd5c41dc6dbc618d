use adqsp::consensus::*;
use adqsp::seed::rng_for;
use adqsp::topology::*;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

const THETAS: [f64; 3] = [0.0, 0.2, 0.5];

fn graph(n: usize, seed: u64) -> Graph {
    generate_geometric_graph(n, default_radius(n), &mut rng_for(seed, &[])).unwrap()
}

fn gaussian_field(g: &Graph, sigma: f64, seed: u64) -> EdgeField {
    let mut rng = rng_for(seed, &[7]);
    EdgeField::from_fn(g, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        sigma * v
    })
}

fn inputs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[8]);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// The MSE itself oscillates (PDMM and ADMM have complex and negative
/// eigenvalues), so the decrease is checked on the maxima of 20-iteration
/// blocks after the first 20% of the run.
#[test]
fn plain_mse_envelope_decreases_after_transient() {
    for seed in 0..5 {
        let g = graph(30, seed);
        let s = inputs(30, seed);
        let target = vec![average(&s); 30];
        for theta in THETAS {
            let cfg = ConsensusConfig::new(1.0, theta, 150).unwrap();
            let curve = run_plain(&s, &cfg, &g, EdgeField::zeros(&g)).mse_curve(&target);
            let blocks: Vec<f64> = curve[30..]
                .chunks(20)
                .map(|c| c.iter().copied().fold(0.0, f64::max))
                .collect();
            assert!(
                blocks.windows(2).all(|w| w[1] < w[0]),
                "theta {theta} seed {seed}: block maxima {blocks:?}"
            );
        }
    }
}

#[test]
fn thirty_node_pdmm_reaches_tolerance() {
    let g = graph(30, 3);
    let s = inputs(30, 3);
    let cfg = ConsensusConfig::new(1.0, 0.0, 400).unwrap();
    let traj = run_plain(&s, &cfg, &g, EdgeField::zeros(&g));
    assert!(mse(traj.last().unwrap(), &vec![average(&s); 30]) < 1e-10);
}

#[test]
fn broadcast_message_count() {
    let g = graph(12, 4);
    let s = inputs(12, 4);
    let cfg = ConsensusConfig::new(1.0, 0.2, 7).unwrap();
    let run = run_broadcast(&s, &cfg, &g, &EdgeField::zeros(&g));
    assert_eq!(run.transcript.len(), 7 * g.slot_count());
    let plain = run_plain(&s, &cfg, &g, EdgeField::zeros(&g));
    assert!(run.trajectory.max_abs_diff(&plain) < 1e-13);
}

#[test]
fn cycle_has_nontrivial_complement() {
    let b = subspace_basis(&incidence(&Graph::cycle(3)), None);
    assert!(b.rank < 6);
    assert!(b.complement_dim() > 0);
    let gram = b.basis.transpose() * &b.basis;
    for i in 0..b.rank {
        for j in 0..b.rank {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - e).abs() < 1e-12);
        }
    }
}

#[test]
fn closed_form_on_three_cycle_at_t10() {
    let g = Graph::cycle(3);
    let inc = incidence(&g);
    let basis = subspace_basis(&inc, None);
    let z0 = gaussian_field(&g, 1.0, 1);
    let (_, perp0) = project(&z0, &basis);
    let cfg = ConsensusConfig::new(1.0, 0.2, 10).unwrap();
    let mut it = PlainIteration::new(&g, cfg, &[1.0, 2.0, 3.0], z0);
    for _ in 0..10 {
        it.step();
    }
    let (_, perp) = project(it.z(), &basis);
    assert!(perp.max_abs_diff(&closed_form_zperp(&perp0, 10, 0.2)) < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn primal_ignores_complement_shift(seed in any::<u64>(), theta_idx in 0usize..3, sigma in 0.1f64..1e3) {
        let theta = THETAS[theta_idx];
        let g = graph(10, seed);
        let basis = subspace_basis(&incidence(&g), None);
        let (_, w) = project(&gaussian_field(&g, sigma, seed ^ 1), &basis);
        let z0 = gaussian_field(&g, 1.0, seed);
        let s = inputs(10, seed);
        let cfg = ConsensusConfig::new(1.0, theta, 50).unwrap();
        let a = run_plain(&s, &cfg, &g, z0.clone());
        let b = run_plain(&s, &cfg, &g, z0.add(&w));
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn complement_is_annihilated_by_c(seed in any::<u64>(), sigma in 0.1f64..1e3) {
        let g = graph(10, seed);
        let inc = incidence(&g);
        let basis = subspace_basis(&inc, None);
        let z = gaussian_field(&g, sigma, seed);
        let (psi, perp) = project(&z, &basis);
        let ctz = inc.c.transpose() * perp.to_dvector();
        prop_assert!(ctz.norm() < 1e-9 * sigma.max(1.0));
        prop_assert!(psi.add(&perp).max_abs_diff(&z) < 1e-9 * sigma.max(1.0));
    }

    #[test]
    fn closed_form_tracks_simulation(seed in any::<u64>(), theta_idx in 0usize..3) {
        let theta = THETAS[theta_idx];
        let g = graph(10, seed);
        let basis = subspace_basis(&incidence(&g), None);
        let z0 = gaussian_field(&g, 1.0, seed);
        let (_, perp0) = project(&z0, &basis);
        let s = inputs(10, seed);
        let cfg = ConsensusConfig::new(1.0, theta, 50).unwrap();
        let mut it = PlainIteration::new(&g, cfg, &s, z0);
        for t in 1..=50 {
            it.step();
            let (_, perp) = project(it.z(), &basis);
            prop_assert!(perp.max_abs_diff(&closed_form_zperp(&perp0, t, theta)) < 1e-9, "t = {}", t);
        }
    }

    #[test]
    fn compact_and_per_node_updates_agree(seed in any::<u64>(), theta in 0.0f64..0.99, c in 0.1f64..3.0) {
        let g = graph(10, seed);
        let inc = incidence(&g);
        let s = inputs(10, seed);
        let cfg = ConsensusConfig::new(c, theta, 1).unwrap();
        let mut z = gaussian_field(&g, 5.0, seed);
        for _ in 0..30 {
            let x = x_update(&s, &z, &cfg, &g);
            let z_next = z_update(&z, &x, &cfg, &g);
            let (xc, zc) = compact_step(&z, &s, &cfg, &inc);
            prop_assert!(x.iter().zip(&xc).all(|(a, b)| (a - b).abs() < 1e-12));
            prop_assert!(z_next.max_abs_diff(&zc) < 1e-12);
            z = z_next;
        }
    }

    #[test]
    fn zero_duals_give_scaled_inputs(seed in any::<u64>(), c in 0.1f64..3.0) {
        let g = graph(10, seed);
        let s = inputs(10, seed);
        let cfg = ConsensusConfig::new(c, 0.0, 1).unwrap();
        let x = x_update(&s, &EdgeField::zeros(&g), &cfg, &g);
        for i in 0..10 {
            prop_assert!((x[i] - s[i] / (1.0 + c * g.degree(i) as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn mse_is_order_independent(v in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        let target = vec![0.25; v.len()];
        let forward = mse(&v, &target);
        let rev: Vec<f64> = v.iter().rev().copied().collect();
        prop_assert!((forward - mse(&rev, &target)).abs() <= 1e-14 * forward.max(1.0));
    }
}
