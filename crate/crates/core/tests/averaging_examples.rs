use std::f64::consts::PI;
use std::sync::Arc;

use spde_averaging::averaging::{
    contraction_test, default_contraction, estimate_averaged_drift, estimate_mixing_rate, frozen_noise,
    simulate_averaged, simulate_frozen_fast, AnalyticDrift, AveragingParams, EstimatedDrift, FrozenConfig,
    FrozenFastProblem, MixingSetup, Observable,
};
use spde_averaging::integrator::{slow_noise, step_slow, SlowFastState, SolverConfig};
use spde_averaging::model::{FastFamily, ModelParams, ModelSpec, SlowFamily};
use spde_averaging::noise::{LevyMeasureSpec, QWienerSpec};
use spde_averaging::spectral::{OperatorId, SpectralField};
use spde_averaging::stats::mean_se;

fn small(params: ModelParams) -> ModelSpec {
    ModelParams {
        modes: 16,
        nodes: 32,
        ..params
    }
    .build()
    .unwrap()
}

fn bump(m: &ModelSpec) -> SpectralField {
    m.basis().sample(|xi| (PI * xi).sin()).unwrap()
}

#[test]
fn noiseless_linear_frozen_decay() {
    // b₂ = −y, x ≡ 0, γ ≡ 1: mode k decays like exp(−(α_{2,k} + α + 1)t)
    let m = small(ModelParams {
        fast: FastFamily::Linear { a: 0.0, c: 0.0 },
        gamma_amp: 0.0,
        transport_amp: 0.0,
        ..ModelParams::all_zero()
    });
    let b = m.basis();
    let y0 = b.field((1..=16).map(|k| 1.0 / k as f64).collect()).unwrap();
    let cfg = FrozenConfig {
        h: 0.001,
        ..FrozenConfig::default()
    };
    let noise = frozen_noise(&m, cfg.h, 300, 0, 0, 0).unwrap();
    let p = FrozenFastProblem::new(b.zero(), 0.0, y0.clone()).unwrap();
    let tr = simulate_frozen_fast(&m, &p, &cfg, 0.3, &noise).unwrap();
    let last = tr.states.last().unwrap();
    let t = *tr.times.last().unwrap();
    for k in 0..4 {
        let lam = b.eigenvalues(OperatorId::A2)[k] + cfg.alpha + 1.0;
        let want = y0.coeffs()[k] * (-lam * t).exp();
        assert!((last.coeffs()[k] - want).abs() <= 0.02 * want.abs() + 1e-14, "mode {k}");
    }
}

#[test]
fn second_moment_plateaus() {
    let m = small(ModelParams::default());
    let b = m.basis();
    let x = bump(&m);
    let cfg = FrozenConfig::default();
    let rate = default_contraction(&m, &x, &cfg, 1.0, 3).unwrap().rate.unwrap();
    // the frozen law is periodic in time, so each quarter must span whole periods
    let quarter = ((20.0 / rate / 4.0) / m.profile.period()).ceil() * m.profile.period();
    let horizon = 4.0 * quarter;
    let runs: Vec<Vec<f64>> = (0..64)
        .map(|r| {
            let steps = (horizon / cfg.h).ceil() as usize;
            let noise = frozen_noise(&m, cfg.h, steps, 9, r, 0).unwrap();
            let p = FrozenFastProblem::new(x.clone(), 0.0, b.zero()).unwrap();
            let tr = simulate_frozen_fast(&m, &p, &cfg, horizon, &noise).unwrap();
            tr.states.iter().map(|y| y.l2_norm().powi(2)).collect()
        })
        .collect();
    let n = runs[0].len();
    let curve: Vec<f64> = (0..n)
        .map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / runs.len() as f64)
        .collect();
    let q = n / 4;
    let third = curve[2 * q..3 * q].iter().sum::<f64>() / q as f64;
    let fourth = curve[3 * q..].iter().sum::<f64>() / (n - 3 * q) as f64;
    assert!((fourth - third).abs() <= 0.1 * third, "{third} vs {fourth}");
}

#[test]
fn stronger_damping_contracts_faster() {
    let m = small(ModelParams::default());
    let x = bump(&m);
    let rate = |alpha: f64| {
        let cfg = FrozenConfig {
            alpha,
            ..FrozenConfig::default()
        };
        default_contraction(&m, &x, &cfg, 1.0, 5).unwrap().rate.unwrap()
    };
    let (r1, r2) = (rate(1.0), rate(2.0));
    assert!(r2 > r1, "{r1} -> {r2}");
}

#[test]
fn contraction_is_nonincreasing_after_transient() {
    let m = small(ModelParams::default());
    let b = m.basis();
    let x = bump(&m);
    let y1 = b.sample(|xi| 2.0 * (PI * xi).sin()).unwrap();
    let y2 = b.lincomb(-1.0, &y1, 0.0, &y1);
    let cfg = FrozenConfig {
        save_stride: 5,
        ..FrozenConfig::default()
    };
    let r = contraction_test(&m, &x, &y1, &y2, &cfg, 0.6, 32, 2).unwrap();
    assert!(r.rate.unwrap() > 0.0);
    let start = r.curve.len() / 5;
    for i in start..r.curve.len() - 1 {
        let band = 2.0 * r.stderr[i].hypot(r.stderr[i + 1]);
        assert!(r.curve[i + 1] <= r.curve[i] + band, "step {i}");
    }
}

#[test]
fn quadrupling_trajectories_halves_the_error_bar() {
    let m = small(ModelParams::default());
    let x = bump(&m);
    let se = |n_traj: usize| {
        let params = AveragingParams {
            t_burn: 0.5,
            t_avg: 0.5,
            n_traj,
            frozen: FrozenConfig::default(),
        };
        let e = estimate_averaged_drift(&m, &x, &params, 21).unwrap();
        mean_se(&e.stderr).mean
    };
    let ratio = se(64) / se(16);
    assert!((ratio - 0.5).abs() <= 0.1, "ratio {ratio}");
}

#[test]
fn mixing_envelope_is_monotone_within_two_errors() {
    let m = small(ModelParams::default());
    let b = m.basis();
    let setup = MixingSetup {
        observable: Observable::FirstMode,
        lags: (0..=8).map(|i| 0.025 * i as f64).collect(),
        replicas: 128,
        y_start: b.sample(|xi| 5.0 * (PI * xi).sin()).unwrap(),
        s: 0.35,
        reference_shift: 2.0,
    };
    let r = estimate_mixing_rate(&m, &bump(&m), &setup, &FrozenConfig::default(), 4).unwrap();
    for i in 0..r.envelope.len() - 1 {
        let band = 2.0 * r.stderr[i].hypot(r.stderr[i + 1]);
        assert!(r.envelope[i + 1] <= r.envelope[i] + band, "lag {i}");
    }
}

#[test]
fn analytic_drift_reproduces_step_slow_bit_for_bit() {
    let m = small(ModelParams {
        slow: SlowFamily::FhnDecoupled,
        ..ModelParams::default()
    });
    let b = m.basis();
    let cfg = SolverConfig {
        dt: 0.01,
        h: 0.01,
        t_end: 0.1,
        ..SolverConfig::default()
    };
    let x0 = bump(&m);
    let model = m.clone();
    let bbar = AnalyticDrift(move |x: &SpectralField| {
        let mut out = vec![0.0; x.nodal().len()];
        model.slow_reaction_nodal(x.nodal(), &vec![0.0; x.nodal().len()], &mut out);
        out
    });
    let noise = slow_noise(&m, &cfg, 6, 0).unwrap();
    let avg = simulate_averaged(&m, &bbar, &cfg, &x0, &noise).unwrap();
    let again = simulate_averaged(&m, &bbar, &cfg, &x0, &noise).unwrap();
    assert_eq!(avg, again);

    let sampler = noise.sampler();
    let mut s = SlowFastState::new(x0, b.zero());
    for k in 0..cfg.macro_steps() {
        s.x = step_slow(&s, &m, &cfg, &sampler.step(k as u64)).unwrap();
        s.t += cfg.dt;
    }
    assert_eq!(avg.states.last().unwrap(), &s.x);
}

#[test]
fn estimated_drift_tracks_the_linear_oracle() {
    let m = small(ModelParams::linear_fast_oracle());
    let arc = Arc::new(m.clone());
    let frozen = FrozenConfig {
        h: 0.001,
        ..FrozenConfig::default()
    };
    let params = AveragingParams {
        t_burn: 1.0,
        t_avg: 1.0,
        n_traj: 16,
        frozen,
    };
    let burn = (params.t_burn / frozen.h - 1e-9).ceil() as usize;
    let avg = (params.t_avg / frozen.h - 1e-9).ceil() as usize;
    let model = m.clone();
    let oracle = AnalyticDrift(move |x: &SpectralField| {
        let mbar = mean_field_average(&model, x, frozen.alpha, frozen.h, burn, avg);
        x.nodal().iter().zip(&mbar).map(|(v, mb)| v - v * v * v + mb).collect()
    });
    let est = EstimatedDrift::new(arc, params, 13);
    let cfg = SolverConfig {
        dt: 0.01,
        h: 0.01,
        t_end: 0.05,
        ..SolverConfig::default()
    };
    let noise = slow_noise(&m, &cfg, 2, 0).unwrap();
    let x0 = bump(&m);
    let a = simulate_averaged(&m, &oracle, &cfg, &x0, &noise).unwrap();
    let e = simulate_averaged(&m, &est, &cfg, &x0, &noise).unwrap();
    assert_eq!(a.slow_fingerprint, e.slow_fingerprint);
    // each step moves X by dt·(drift error); a 3-SE allowance per step, doubled for Lipschitz growth
    let worst_se = e.states[..e.states.len() - 1]
        .iter()
        .map(|x| est.estimate(x).unwrap().1.stderr.iter().copied().fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let bound = 2.0 * cfg.t_end * 3.0 * worst_se;
    let gap = m
        .basis()
        .lincomb(1.0, a.states.last().unwrap(), -1.0, e.states.last().unwrap())
        .sup_norm();
    assert!(gap <= bound, "gap {gap} > {bound}");
}

/// Time-averaged mean of the linear frozen fast field, nodal.
fn mean_field_average(m: &ModelSpec, x: &SpectralField, alpha: f64, h: f64, burn: usize, avg: usize) -> Vec<f64> {
    let eig = m.basis().eigenvalues(OperatorId::A2);
    let sub = 20;
    let d = h / sub as f64;
    let mut mk = vec![0.0; eig.len()];
    let mut acc = vec![0.0; eig.len()];
    for j in 0..burn + avg {
        if j >= burn {
            acc.iter_mut().zip(&mk).for_each(|(a, v)| *a += v);
        }
        for i in 0..sub {
            let g = m.profile.gamma(j as f64 * h + (i as f64 + 0.5) * d);
            for k in 0..eig.len() {
                let a = g * eig[k] + alpha + 1.0;
                let e = (-a * d).exp();
                mk[k] = e * mk[k] + (1.0 - e) / a * x.coeffs()[k];
            }
        }
    }
    acc.iter_mut().for_each(|a| *a /= avg as f64);
    m.basis().to_nodal(&acc)
}

#[test]
fn quiet_fast_noise_gives_tiny_error_bars() {
    let m = small(ModelParams {
        f2: spde_averaging::model::DiffusionFamily::Zero,
        g2: spde_averaging::model::JumpFamily::Zero,
        wiener2: QWienerSpec::scaled(0.0),
        levy2: LevyMeasureSpec::none(),
        ..ModelParams::default()
    });
    let params = AveragingParams {
        t_burn: 0.5,
        t_avg: 0.5,
        n_traj: 4,
        frozen: FrozenConfig::default(),
    };
    let e = estimate_averaged_drift(&m, &bump(&m), &params, 1).unwrap();
    assert!(e.stderr.iter().all(|&s| s == 0.0));
    assert!(e.growth_ratio.is_finite());
}
