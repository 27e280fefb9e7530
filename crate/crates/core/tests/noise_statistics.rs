use proptest::prelude::*;
use spde_averaging::noise::{LevyMeasureSpec, MarkLaw, NoiseHasher, NoisePath, QWienerSpec};
use spde_averaging::rng::StreamRole;
use spde_averaging::stats::mean_se;

// Two-sided Kolmogorov critical value at level 0.01, large-sample form.
const KS_CRIT_01: f64 = 1.628;

fn path(law: MarkLaw, intensity: f64, steps: u64, roles: (StreamRole, StreamRole), seed: u64) -> NoisePath {
    NoisePath::new(
        seed,
        0,
        roles,
        0.01,
        steps,
        1.0,
        QWienerSpec::default_family(),
        LevyMeasureSpec::new(intensity, law).unwrap(),
        8,
    )
    .unwrap()
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn poisson_counts_have_the_right_mean() {
    let intensity = 30.0;
    let p = path(
        MarkLaw::Uniform,
        intensity,
        10_000,
        (StreamRole::SlowWiener, StreamRole::SlowJump),
        5,
    );
    let s = p.sampler();
    let counts: Vec<f64> = (0..p.steps).map(|k| s.step(k).events.len() as f64).collect();
    let m = mean_se(&counts);
    let want = intensity * p.dt;
    assert!(
        (m.mean - want).abs() < 3.0 * (want / counts.len() as f64).sqrt(),
        "{} vs {want}",
        m.mean
    );
}

#[test]
fn jump_times_fall_inside_their_step() {
    let p = path(
        MarkLaw::Normal,
        50.0,
        500,
        (StreamRole::FastWiener, StreamRole::FastJump),
        2,
    )
    .starting_at(1.0);
    let s = p.sampler();
    for k in 0..p.steps {
        let t0 = p.t0 + k as f64 * p.dt;
        let ev = s.step(k).events;
        assert!(ev.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(ev.iter().all(|e| e.time >= t0 && e.time < t0 + p.dt));
    }
}

#[test]
fn marks_pass_kolmogorov_smirnov() {
    for law in [MarkLaw::Uniform, MarkLaw::Normal] {
        let p = path(law, 100.0, 5_000, (StreamRole::SlowWiener, StreamRole::SlowJump), 11);
        let s = p.sampler();
        let marks: Vec<f64> = (0..p.steps).flat_map(|k| s.step(k).events).map(|e| e.mark).collect();
        let n = marks.len() as f64;
        let d = ks_statistic(marks, |z| law.cdf(z));
        assert!(d * n.sqrt() < KS_CRIT_01, "{law:?}: sqrt(n) D = {}", d * n.sqrt());
    }
}

#[test]
fn wiener_increments_have_covariance_lambda_squared_dt() {
    let p = path(
        MarkLaw::Uniform,
        0.0,
        20_000,
        (StreamRole::SlowWiener, StreamRole::SlowJump),
        3,
    );
    let s = p.sampler();
    let incs: Vec<Vec<f64>> = (0..p.steps).map(|k| s.step(k).dw).collect();
    let n = incs.len() as f64;
    for k in 0..p.modes {
        let var = incs.iter().map(|d| d[k] * d[k]).sum::<f64>() / n;
        let want = p.wiener.lambda(k + 1).powi(2) * p.dt;
        // variance of a chi-square(1) sample mean: 2 want² / n
        assert!(
            (var - want).abs() < 4.0 * want * (2.0 / n).sqrt(),
            "mode {k}: {var} vs {want}"
        );
    }
    let cross = incs.iter().map(|d| d[0] * d[1]).sum::<f64>() / n;
    let scale = p.wiener.lambda(1) * p.wiener.lambda(2) * p.dt / n.sqrt();
    assert!(cross.abs() < 4.0 * scale);
}

#[test]
fn distinct_streams_are_uncorrelated() {
    let a = path(
        MarkLaw::Uniform,
        0.0,
        20_000,
        (StreamRole::SlowWiener, StreamRole::SlowJump),
        4,
    );
    let b = path(
        MarkLaw::Uniform,
        0.0,
        20_000,
        (StreamRole::FastWiener, StreamRole::FastJump),
        4,
    );
    let c = a.clone().with_sub(1);
    let (sa, sb, sc) = (a.sampler(), b.sampler(), c.sampler());
    let n = a.steps as f64;
    let z = |k: u64, s: &spde_averaging::noise::NoiseSampler| s.step(k).dw[0] / (a.dt.sqrt() * a.wiener.lambda(1));
    let ab = (0..a.steps).map(|k| z(k, &sa) * z(k, &sb)).sum::<f64>() / n;
    let ac = (0..a.steps).map(|k| z(k, &sa) * z(k, &sc)).sum::<f64>() / n;
    assert!(ab.abs() < 4.0 / n.sqrt(), "role correlation {ab}");
    assert!(ac.abs() < 4.0 / n.sqrt(), "sub correlation {ac}");
}

#[test]
fn levy_moments_match_closed_forms() {
    let u = LevyMeasureSpec::new(2.0, MarkLaw::Uniform).unwrap();
    assert_eq!(u.moment_table(), [(1, 1.0), (2, 2.0 / 3.0), (4, 0.4)]);
    let g = LevyMeasureSpec::new(1.0, MarkLaw::Normal).unwrap();
    let t = g.moment_table();
    assert!((t[0].1 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    assert!((t[1].1 - 1.0).abs() < 1e-12 && (t[2].1 - 3.0).abs() < 1e-12);
    assert!((g.integrate(|z| z * z * z * z) - 3.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replay_is_bit_identical(seed in any::<u64>(), k in 0u64..1000) {
        let p = path(MarkLaw::Normal, 20.0, 1000, (StreamRole::SlowWiener, StreamRole::SlowJump), seed);
        let q = NoisePath::from_record(&p.to_record()).unwrap();
        prop_assert_eq!(p.sampler().step(k), q.sampler().step(k));
    }

    #[test]
    fn fingerprint_tracks_seed(seed in any::<u64>()) {
        let hash = |s: u64| {
            let p = path(MarkLaw::Uniform, 5.0, 50, (StreamRole::SlowWiener, StreamRole::SlowJump), s);
            let sm = p.sampler();
            let mut h = NoiseHasher::default();
            for k in 0..p.steps {
                h.absorb(&sm.step(k));
            }
            h.finish()
        };
        prop_assert_eq!(hash(seed), hash(seed));
        prop_assert_ne!(hash(seed), hash(seed.wrapping_add(1)));
    }
}
