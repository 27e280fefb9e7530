use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use spde_averaging::averaging::{AnalyticDrift, DriftProvider};
use spde_averaging::harness::{
    fit_convergence_rate, moment_audit, regularity_probe, run_epsilon_sweep, DriftSource, SweepPlan,
};
use spde_averaging::integrator::{simulate_coupled, CoupledNoise, FastClock, SolverConfig};
use spde_averaging::model::{FastFamily, ModelParams, ModelSpec, SlowFamily};
use spde_averaging::spectral::OperatorId;

fn quiet(slow: SlowFamily, fast: FastFamily) -> ModelSpec {
    ModelParams {
        slow,
        fast,
        modes: 8,
        nodes: 16,
        gamma_amp: 0.0,
        transport_amp: 0.0,
        ..ModelParams::all_zero()
    }
    .build()
    .unwrap()
}

fn small_builtin() -> ModelSpec {
    ModelParams {
        modes: 16,
        nodes: 32,
        ..ModelParams::default()
    }
    .build()
    .unwrap()
}

#[test]
fn linear_fast_drift_is_first_order() {
    // b₂ = −y, ε = 1, γ ≡ 1: mode k decays like exp(−(α_{2,k} + α + 1)t)
    let m = quiet(SlowFamily::Zero, FastFamily::Linear { a: 0.0, c: 0.0 });
    let b = m.basis();
    let y0 = b.mode(0).unwrap();
    let lam = b.eigenvalues(OperatorId::A2)[0] + 2.0;
    let err = |h: f64| {
        let cfg = SolverConfig {
            dt: 0.1,
            h,
            t_end: 0.2,
            fast_clock: FastClock::Physical,
            ..SolverConfig::default()
        };
        let noise = CoupledNoise::new(&m, &cfg, 1, 0).unwrap();
        let tr = simulate_coupled(&m, &cfg, &b.zero(), &y0, &noise).unwrap();
        (tr.last().y.coeffs()[0] - (-lam * 0.2).exp()).abs()
    };
    let order = (err(0.01) / err(0.005)).log2();
    assert!(order > 0.9, "order {order}");
}

#[test]
fn deterministic_decoupled_model_matches_mode_odes() {
    let m = quiet(SlowFamily::Linear { rate: 0.5 }, FastFamily::Linear { a: 0.0, c: 0.0 });
    let b = m.basis();
    let x0 = b.field((1..=8).map(|k| 1.0 / k as f64).collect()).unwrap();
    let y0 = b.field(vec![0.3; 8]).unwrap();
    let a1 = b.eigenvalues(OperatorId::A1).to_vec();
    let a2 = b.eigenvalues(OperatorId::A2).to_vec();
    let worst = |dt: f64| {
        let cfg = SolverConfig {
            dt,
            h: dt / 2.0,
            eps: 0.5,
            t_end: 0.4,
            fast_clock: FastClock::Physical,
            ..SolverConfig::default()
        };
        let noise = CoupledNoise::new(&m, &cfg, 3, 0).unwrap();
        let last = simulate_coupled(&m, &cfg, &x0, &y0, &noise).unwrap().last().clone();
        (0..3)
            .map(|k| {
                let ex = x0.coeffs()[k] * (-(a1[k] + 0.5) * 0.4).exp();
                let ey = y0.coeffs()[k] * (-(a2[k] + 2.0) * 0.4 / 0.5).exp();
                (last.x.coeffs()[k] - ex).abs().max((last.y.coeffs()[k] - ey).abs())
            })
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (worst(0.01), worst(0.005));
    assert!(e1 < 0.05, "error {e1}");
    assert!(e2 < 0.6 * e1, "{e1} -> {e2}");
}

#[test]
fn hit_flag_never_clears() {
    let m = small_builtin();
    let b = m.basis();
    let x0 = b.sample(|xi| 2.0 * (PI * xi).sin()).unwrap();
    let cfg = SolverConfig {
        dt: 0.005,
        h: 0.0005,
        eps: 0.1,
        t_end: 0.2,
        n_stop: Some(2.5),
        ..SolverConfig::default()
    };
    for path in 0..4 {
        let noise = CoupledNoise::new(&m, &cfg, 8, path).unwrap();
        let tr = simulate_coupled(&m, &cfg, &x0, &b.zero(), &noise).unwrap();
        let first = tr.states.iter().position(|s| s.hit.is_some());
        if let Some(i) = first {
            let t = tr.states[i].hit;
            assert!(tr.states[i..].iter().all(|s| s.hit == t));
        }
        assert!(tr.states.iter().all(|s| s.x.is_finite() && s.y.is_finite()));
    }
}

#[test]
fn slow_moments_are_uniform_in_epsilon() {
    let m = small_builtin();
    let b = m.basis();
    let plan = SweepPlan {
        epsilons: vec![0.2, 0.1, 0.05, 0.025],
        paths: 16,
        moments: vec![2.0, 4.0],
        t_end: 0.2,
        ..SweepPlan::default()
    };
    let base = SolverConfig::default();
    let x0 = b.sample(|xi| (PI * xi).sin()).unwrap();
    let rows = moment_audit(&m, &plan, &base, &x0, &b.zero()).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().any(|r| r.p == 2.0) && rows.iter().any(|r| r.p == 4.0));
    for p in [2.0, 4.0] {
        let v: Vec<f64> = rows.iter().filter(|r| r.p == p).map(|r| r.slow_moment).collect();
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, c), &x| (a.min(x), c.max(x)));
        assert!(hi <= 3.0 * lo, "p={p}: {v:?}");
    }
}

#[test]
fn zero_model_has_zero_moments() {
    let m = ModelParams::all_zero().build().unwrap();
    let b = m.basis();
    let plan = SweepPlan {
        epsilons: vec![0.2, 0.1],
        paths: 2,
        moments: vec![2.0, 4.0],
        t_end: 0.05,
        ..SweepPlan::default()
    };
    let rows = moment_audit(&m, &plan, &SolverConfig::default(), &b.zero(), &b.zero()).unwrap();
    assert!(rows
        .iter()
        .all(|r| r.slow_moment == 0.0 && r.fast_moment == 0.0 && !r.flag));
}

#[test]
fn sweep_report_has_one_row_per_epsilon_and_moment() {
    let m = small_builtin();
    let b = m.basis();
    let bbar: Arc<dyn DriftProvider> = Arc::new(AnalyticDrift(
        |x: &spde_averaging::spectral::SpectralField| -> Vec<f64> { x.nodal().iter().map(|v| v - v * v * v).collect() },
    ));
    let plan = SweepPlan {
        epsilons: vec![0.2, 0.1, 0.05],
        paths: 2,
        moments: vec![2.0, 4.0],
        t_end: 0.05,
        ..SweepPlan::default()
    };
    let x0 = b.sample(|xi| (PI * xi).sin()).unwrap();
    let report = run_epsilon_sweep(
        &m,
        &plan,
        &SolverConfig::default(),
        &x0,
        &b.zero(),
        &DriftSource::Provider(bbar),
    )
    .unwrap();
    assert_eq!(report.rows_for(2.0).len(), 3);
    assert_eq!(report.rows_for(4.0).len(), 3);
    assert!(report.rows.iter().all(|r| r.estimate >= 0.0 && r.stderr >= 0.0));
    assert!(fit_convergence_rate(&report, 2.0).is_some());
}

#[test]
fn heat_flow_is_lipschitz_in_time() {
    let m = quiet(SlowFamily::Zero, FastFamily::Zero);
    let b = m.basis();
    let x0 = b.sample(|xi| (PI * xi).sin() + 0.3 * (3.0 * PI * xi).sin()).unwrap();
    let cfg = SolverConfig {
        dt: 0.0025,
        h: 0.0025,
        t_end: 1.0,
        ..SolverConfig::default()
    };
    let r = regularity_probe(
        &m,
        &cfg,
        &x0,
        &b.zero(),
        0.1,
        &[0.04, 0.02, 0.01, 0.005, 0.0],
        2.0,
        2,
        1,
    )
    .unwrap();
    assert_eq!(r.rows.last().unwrap().estimate, 0.0);
    let e = r.exponent.unwrap();
    assert!((e - 1.0).abs() < 0.2, "exponent {e}");
}

#[test]
fn builtin_increments_are_holder_at_least_0_4() {
    let m = ModelParams::default().build().unwrap();
    let b = m.basis();
    let x0 = b.sample(|xi| (PI * xi).sin()).unwrap();
    let cfg = SolverConfig {
        dt: 0.005,
        h: 0.001,
        eps: 0.1,
        t_end: 0.5,
        ..SolverConfig::default()
    };
    let hs = [0.16, 0.08, 0.04, 0.02, 0.01, 0.005];
    let r = regularity_probe(&m, &cfg, &x0, &b.zero(), 0.1, &hs, 2.0, 256, 2).unwrap();
    let e = r.exponent.unwrap();
    assert!((0.4..1.1).contains(&e), "exponent {e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn coupled_runs_are_deterministic(seed in any::<u64>(), path in 0u64..100) {
        let m = ModelParams { modes: 8, nodes: 16, ..ModelParams::default() }.build().unwrap();
        let b = m.basis();
        let cfg = SolverConfig { dt: 0.01, h: 0.002, eps: 0.2, t_end: 0.05, ..SolverConfig::default() };
        let x0 = b.sample(|xi| (PI * xi).sin()).unwrap();
        let run = || simulate_coupled(&m, &cfg, &x0, &b.zero(), &CoupledNoise::new(&m, &cfg, seed, path).unwrap()).unwrap();
        prop_assert_eq!(run(), run());
    }
}
