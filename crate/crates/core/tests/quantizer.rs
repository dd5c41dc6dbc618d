use adqsp::quantizer::*;
use adqsp::seed::rng_for;
use proptest::prelude::*;
use rand::Rng;

/// Kolmogorov-Smirnov distance of `errors` from Uniform(-w/2, w/2).
fn ks_uniform(errors: &[f64], width: f64) -> f64 {
    let mut u: Vec<f64> = errors.iter().map(|e| e / width + 0.5).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Samples `(value, error)` for inputs spread over the unsaturated range.
fn dithered_errors(bits: u32, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, f64) {
    let sched = QuantizerSchedule::new(1.0, 0.9, 0.0, bits).unwrap();
    let width = sched.cell_width(0);
    let (lo, hi) = sched.level_range();
    let span = (
        lo as f64 * width + width / 2.0,
        hi as f64 * width + width / 2.0,
    );
    let mut rng = rng_for(seed, &[]);
    let mut values = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    for _ in 0..n {
        let v = rng.random_range(span.0..span.1);
        let d = rng.random_range(-width / 2.0..width / 2.0);
        let q = quantize(v, &sched, 0, d);
        assert!(!q.saturated);
        values.push(v);
        errors.push(q.output - v);
    }
    (values, errors, width)
}

#[test]
fn dithered_error_is_uniform_and_uncorrelated() {
    let n = 100_000;
    // 1% critical value of the one-sample KS statistic, asymptotic form
    let critical = 1.628 / (n as f64).sqrt();
    for bits in [2, 4, 5] {
        let (values, errors, width) = dithered_errors(bits, n, bits as u64);
        let d = ks_uniform(&errors, width);
        assert!(d < critical, "bits {bits}: KS {d} >= {critical}");
        let r = correlation(&errors, &values);
        assert!(r.abs() < 0.02, "bits {bits}: corr {r}");
    }
}

#[test]
fn undithered_error_fails_uniformity() {
    // control: a fixed input pattern without dither is far from uniform
    let sched = QuantizerSchedule::new(1.0, 0.9, 0.0, 4).unwrap();
    let errors: Vec<f64> = (0..10_000)
        .map(|k| {
            let v = 0.3 + (k % 3) as f64;
            quantize(v, &sched, 0, 0.0).output - v
        })
        .collect();
    assert!(ks_uniform(&errors, 1.0) > 0.1);
}

proptest! {
    #[test]
    fn in_range_noise_is_bounded(
        delta0 in 1e-3f64..1e3,
        gamma in 0.5f64..0.999,
        t in 0usize..200,
        bits in 1u32..8,
        frac in -1.0f64..1.0,
        dfrac in -0.5f64..0.5,
    ) {
        let sched = QuantizerSchedule::new(delta0, gamma, 0.0, bits).unwrap();
        let w = sched.cell_width(t);
        let (lo, hi) = sched.level_range();
        // inside the outermost cells
        let v = frac * (hi - lo) as f64 * w / 2.0;
        let q = quantize(v, &sched, t, dfrac * w);
        prop_assert!(!q.saturated);
        prop_assert!((q.output - v).abs() <= w / 2.0 * (1.0 + 1e-12));
        prop_assert!(q.level >= lo && q.level <= hi);
    }

    #[test]
    fn out_of_range_inputs_saturate_at_the_edges(v in 1e2f64..1e300, sign in prop::bool::ANY) {
        let sched = QuantizerSchedule::new(1.0, 0.9, 0.0, 3).unwrap();
        let v = if sign { v } else { -v };
        let q = quantize(v, &sched, 0, 0.0);
        let (lo, hi) = sched.level_range();
        prop_assert!(q.saturated);
        prop_assert_eq!(q.level, if sign { hi } else { lo });
    }

    #[test]
    fn encoder_and_decoder_agree(seed in any::<u64>(), slot in 0usize..500, steps in 1usize..200) {
        let sched = QuantizerSchedule::new(10.0, 0.95, 1e-3, 5).unwrap();
        let mut tx = DitherStream::new(seed, slot);
        let mut rx = DitherStream::new(seed, slot);
        let mut rng = rng_for(seed, &[slot as u64]);
        let (mut zhat_tx, mut zhat_rx) = (0.0, 0.0);
        for t in 1..=steps {
            let z_new = zhat_tx + rng.random_range(-1.0..1.0) * sched.cell_width(t);
            let enc = diff_encode(z_new, zhat_tx, t, &sched, &mut tx);
            zhat_tx = diff_decode(zhat_tx, enc.delta_hat);
            zhat_rx = diff_decode(zhat_rx, decode_level(enc.level, t, &sched, &mut rx));
            prop_assert_eq!(zhat_tx.to_bits(), zhat_rx.to_bits());
            prop_assert!((zhat_tx - z_new - enc.noise).abs() < 1e-9 * sched.cell_width(t).max(1.0));
        }
    }

    #[test]
    fn cell_width_is_monotone_and_floored(delta0 in 1e-3f64..1e3, gamma in 0.1f64..0.999, dmin in 0.0f64..1.0) {
        prop_assume!(dmin <= delta0);
        let sched = QuantizerSchedule::new(delta0, gamma, dmin, 2).unwrap();
        let mut prev = sched.cell_width(0);
        prop_assert_eq!(prev, delta0);
        for t in 1..300 {
            let w = sched.cell_width(t);
            prop_assert!(w <= prev && w >= dmin);
            prev = w;
        }
    }
}
