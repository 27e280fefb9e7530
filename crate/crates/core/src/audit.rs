//! Sampled spot-checks of the structural assumptions on operators, noise and
//! coefficients.
//!
//! Growth-type inequalities `|lhs| ≤ C·rhs` cannot be verified by sampling
//! alone, since any finite sample admits some `C`. The audit therefore fits
//! `C(R) = max lhs/rhs` on a sample of the ball of radius `R` and on the same
//! sample enlarged to radius `2R`; the inequality is accepted when the fitted
//! constant does not grow, `C(2R) ≤ 1.5·C(R)`. The reported margin is
//! `C(2R)/C(R) − 1.5` (positive means violated).
//!
//! The sign condition on `ϱ` is checked on samples only.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::func::Args;
use crate::model::{CoefficientKind, ModelSpec};
use crate::noise::{LevyMeasureSpec, QWienerSpec};
use crate::rng::{StreamKey, StreamRole};
use crate::spectral::OperatorId;

/// Base radius of the growth scaling test.
pub const AUDIT_RADIUS: f64 = 8.0;
/// Largest admissible `C(2R)/C(R)`.
pub const SCALING_LIMIT: f64 = 1.5;
/// Number of terms in each tail block of the series ratio test.
const TAIL_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCheck {
    pub id: String,
    pub description: String,
    pub passed: bool,
    /// Worst sampled violation; `≤ 0` when the check holds.
    pub margin: f64,
    pub fitted_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub model: String,
    pub seed: u64,
    pub sample_budget: usize,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// One sample point: time, node, four state coordinates in `[−1, 1]`, a mark.
#[derive(Debug, Clone, Copy)]
struct Sample {
    t: f64,
    xi: f64,
    u: [f64; 4],
    z: f64,
}

fn samples(budget: usize, period: f64, seed: u64, check: u64, levy: &LevyMeasureSpec) -> Vec<Sample> {
    let mut rng = StreamKey::new(seed, 0, StreamRole::Audit).stream().at(check);
    let mut out = Vec::with_capacity(budget + 81);
    // lattice {−1, 0, 1}⁴ pins the extreme and the near-origin behaviour
    for idx in 0..81usize {
        let mut u = [0.0; 4];
        let mut r = idx;
        for c in u.iter_mut() {
            *c = (r % 3) as f64 - 1.0;
            r /= 3;
        }
        out.push(Sample {
            t: period * (idx as f64 / 81.0),
            xi: (idx as f64 + 0.5) / 81.0,
            u,
            z: 1.0,
        });
    }
    for _ in 0..budget {
        let mut u = [0.0; 4];
        for c in u.iter_mut() {
            *c = rng.random_range(-1.0..=1.0);
        }
        out.push(Sample {
            t: rng.random_range(0.0..2.0 * period),
            xi: rng.random_range(0.0..=1.0),
            u,
            z: levy.law.sample(&mut rng),
        });
    }
    out
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if rhs > 0.0 && lhs.is_finite() {
        lhs / rhs
    } else {
        f64::INFINITY
    }
}

/// Fitted constant over a sample at scale `r`.
fn fit(points: &[Sample], r: f64, f: &dyn Fn(&Sample, f64) -> f64) -> f64 {
    points
        .iter()
        .map(|p| f(p, r))
        .fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

fn scaling_check(id: &str, description: &str, points: &[Sample], f: &dyn Fn(&Sample, f64) -> f64) -> AuditCheck {
    let c_small = fit(points, AUDIT_RADIUS, f);
    let c_large = c_small.max(fit(points, 2.0 * AUDIT_RADIUS, f));
    let margin = if c_small == 0.0 {
        if c_large == 0.0 {
            -SCALING_LIMIT
        } else {
            f64::INFINITY
        }
    } else if c_small.is_finite() {
        c_large / c_small - SCALING_LIMIT
    } else {
        f64::INFINITY
    };
    AuditCheck {
        id: id.into(),
        description: description.into(),
        passed: margin <= 0.0,
        margin,
        fitted_constant: Some(c_large),
    }
}

fn plain_check(id: &str, description: &str, margin: f64) -> AuditCheck {
    AuditCheck {
        id: id.into(),
        description: description.into(),
        passed: margin <= 0.0,
        margin: if margin.is_nan() { f64::INFINITY } else { margin },
        fitted_constant: None,
    }
}

/// `t₂/t₁` for the tails `Σ_{K<k≤2K}` and `Σ_{2K<k≤4K}`; `< 1` suggests convergence.
fn tail_ratio(term: impl Fn(usize) -> f64) -> f64 {
    let t1: f64 = (TAIL_BLOCK + 1..=2 * TAIL_BLOCK).map(&term).sum();
    let t2: f64 = (2 * TAIL_BLOCK + 1..=4 * TAIL_BLOCK).map(&term).sum();
    if t1 == 0.0 && t2 == 0.0 {
        0.0
    } else {
        t2 / t1
    }
}

fn lambda_power(q: &QWienerSpec, k: usize) -> f64 {
    let l = q.lambda(k);
    if q.rho.is_infinite() {
        if l < 1.0 {
            0.0
        } else if l == 1.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        l.powf(q.rho)
    }
}

/// Spot-check every structural assumption on `sample_budget` random points per check.
pub fn audit_assumptions(model: &ModelSpec, sample_budget: usize, seed: u64) -> AuditReport {
    let budget = sample_budget.max(1);
    let period = model.profile.period();
    let pts = |check: u64, levy: &LevyMeasureSpec| samples(budget, period, seed, check, levy);
    let mut checks = Vec::new();
    let b1 = &model.slow.b;
    let b2 = &model.fast.b;
    let (m1, m2, kappa) = (model.slow.m1, model.fast.m2, model.slow.kappa);

    // (A1)
    let (g0, g1) = model.profile.gamma_bounds();
    let p = pts(1, &model.levy2);
    let mut worst = -g0;
    for s in &p {
        let g = model.profile.gamma(s.t);
        worst = worst.max(g0 - g).max(g - g1);
    }
    checks.push(plain_check(
        "A1a",
        "gamma continuous with 0 < g0 <= gamma(t) <= g1",
        worst,
    ));
    let sup_l = p
        .iter()
        .map(|s| model.profile.transport(s.t, s.xi).abs())
        .fold(0.0, f64::max);
    checks.push(AuditCheck {
        fitted_constant: Some(sup_l),
        ..plain_check(
            "A1b",
            "transport coefficient l bounded",
            if sup_l.is_finite() { -1.0 } else { f64::INFINITY },
        )
    });

    // (A2)
    let basis = model.basis();
    let min_alpha = [OperatorId::A1, OperatorId::A2]
        .iter()
        .flat_map(|&op| basis.eigenvalues(op).iter().copied())
        .fold(f64::INFINITY, f64::min);
    checks.push(plain_check("A2a", "inf_k alpha_{i,k} > 0", -min_alpha));
    let sup_e2 = |k: usize| basis.basis_sup_norm(k).powi(2);
    for (i, (q, d)) in [
        (&model.wiener1, basis.diffusivity(OperatorId::A1)),
        (&model.wiener2, basis.diffusivity(OperatorId::A2)),
    ]
    .into_iter()
    .enumerate()
    {
        let r_kappa = tail_ratio(|k| lambda_power(q, k) * sup_e2(k));
        checks.push(plain_check(
            &format!("A2b{}", i + 1),
            &format!("sum_k lambda_{{{},k}}^rho |e_k|^2 converges (tail ratio < 1)", i + 1),
            r_kappa - 1.0,
        ));
        let r_zeta = tail_ratio(|k| (d * (k as f64 * PI).powi(2)).powf(-q.beta) * sup_e2(k));
        checks.push(plain_check(
            &format!("A2c{}", i + 1),
            &format!("sum_k alpha_{{{},k}}^-beta |e_k|^2 converges (tail ratio < 1)", i + 1),
            r_zeta - 1.0,
        ));
        let expo = if q.rho.is_infinite() {
            q.beta
        } else {
            q.beta * (q.rho - 2.0) / q.rho
        };
        checks.push(plain_check(
            &format!("A2d{}", i + 1),
            &format!("rho_{0} > 2 and beta_{0}(rho_{0}-2)/rho_{0} < 1", i + 1),
            (expo - 1.0).max(2.0 - q.rho),
        ));
    }

    // (A3)
    let p = pts(2, &model.levy1);
    checks.push(scaling_check(
        "A3a",
        "|b1(xi,x,y)| <= C(1 + |x|^m1 + |y|)",
        &p,
        &|s, r| {
            let (x, y) = (r * s.u[0], r * s.u[1]);
            ratio(b1.eval(0.0, s.xi, x, y).abs(), 1.0 + x.abs().powf(m1) + y.abs())
        },
    ));
    let p = pts(3, &model.levy1);
    checks.push(scaling_check(
        "A3b",
        "(b1(xi,s+h) - b1(xi,s)) h1 <= C|h1|(1 + |s| + |h|)",
        &p,
        &|s, r| {
            let (x, y, h1, h2) = (r * s.u[0], r * s.u[1], r * s.u[2], r * s.u[3]);
            let lhs = (b1.eval(0.0, s.xi, x + h1, y + h2) - b1.eval(0.0, s.xi, x, y)) * h1;
            ratio(lhs.max(0.0), h1.abs() * (1.0 + x.hypot(y) + h1.hypot(h2)))
        },
    ));
    let p = pts(4, &model.levy1);
    checks.push(scaling_check(
        "A3c",
        "|b1(s1) - b1(s2)| <= C(1 + |s1|^kappa + |s2|^kappa)|s1 - s2|",
        &p,
        &|s, r| {
            let (x1, y1, x2, y2) = (r * s.u[0], r * s.u[1], r * s.u[2], r * s.u[3]);
            let lhs = (b1.eval(0.0, s.xi, x1, y1) - b1.eval(0.0, s.xi, x2, y2)).abs();
            let d = (x1 - x2).hypot(y1 - y2);
            ratio(lhs, (1.0 + x1.hypot(y1).powf(kappa) + x2.hypot(y2).powf(kappa)) * d)
        },
    ));

    // (A4)
    let p = pts(5, &model.levy2);
    checks.push(scaling_check(
        "A4a",
        "|b2(t,xi,x,y)| <= C(1 + |x| + |y|^m2)",
        &p,
        &|s, r| {
            let (x, y) = (r * s.u[0], r * s.u[1]);
            ratio(b2.eval(s.t, s.xi, x, y).abs(), 1.0 + x.abs() + y.abs().powf(m2))
        },
    ));
    let p = pts(6, &model.levy2);
    checks.push(scaling_check(
        "A4b",
        "(b2(t,xi,s+h) - b2(t,xi,s)) h2 <= C|h2|(1 + |s| + |h|)",
        &p,
        &|s, r| {
            let (x, y, h1, h2) = (r * s.u[0], r * s.u[1], r * s.u[2], r * s.u[3]);
            let lhs = (b2.eval(s.t, s.xi, x + h1, y + h2) - b2.eval(s.t, s.xi, x, y)) * h2;
            ratio(lhs.max(0.0), h2.abs() * (1.0 + x.hypot(y) + h1.hypot(h2)))
        },
    ));
    let p = pts(7, &model.levy2);
    // ϱ(t, ξ, x, x+h, y) = b2(x) − b2(x+h), h > 0
    let (mut rho_inf, mut rho_sup) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &p {
        let (x, y, h) = (
            AUDIT_RADIUS * s.u[0],
            AUDIT_RADIUS * s.u[1],
            AUDIT_RADIUS * (s.u[2].abs() + 1e-3),
        );
        let v = b2.eval(s.t, s.xi, x, y) - b2.eval(s.t, s.xi, x + h, y);
        rho_inf = rho_inf.min(v);
        rho_sup = rho_sup.max(v);
    }
    let sign = rho_inf * rho_sup;
    checks.push(plain_check(
        "A4c-sign",
        "inf rho * sup rho >= 0 over sampled (t, xi, x, h > 0, y)",
        if sign >= 0.0 {
            -1.0
        } else if sign.is_nan() {
            f64::INFINITY
        } else {
            -sign
        },
    ));
    // L_R uniform in y: x in a fixed ball, y scaled
    checks.push(scaling_check(
        "A4c-lip",
        "|rho(t,xi,x1,x2,y)| <= L_R|x1 - x2| uniformly in y",
        &p,
        &|s, r| {
            let (x1, x2, y) = (4.0 * s.u[0], 4.0 * s.u[2], r * s.u[1]);
            let lhs = (b2.eval(s.t, s.xi, x1, y) - b2.eval(s.t, s.xi, x2, y)).abs();
            ratio(lhs, (x1 - x2).abs())
        },
    ));
    let p = pts(8, &model.levy2);
    let mut worst = f64::NEG_INFINITY;
    for s in &p {
        let (x, y1, y2) = (
            2.0 * AUDIT_RADIUS * s.u[0],
            2.0 * AUDIT_RADIUS * s.u[1],
            2.0 * AUDIT_RADIUS * s.u[2],
        );
        if y1 == y2 {
            continue;
        }
        let q = (b2.eval(s.t, s.xi, x, y1) - b2.eval(s.t, s.xi, x, y2)) / (y1 - y2);
        let scale = 1.0 + b2.eval(s.t, s.xi, x, y1).abs() + b2.eval(s.t, s.xi, x, y2).abs();
        worst = worst.max(q - 1e-12 * scale / (y1 - y2).abs());
    }
    checks.push(plain_check(
        "A4d",
        "tau = -(b2(y1) - b2(y2))/(y1 - y2) >= 0",
        worst.max(-1.0),
    ));

    // (A5)
    let fkinds = [
        (CoefficientKind::F1, CoefficientKind::G1, m1, "1"),
        (CoefficientKind::F2, CoefficientKind::G2, m2, "2"),
    ];
    for (n, &(fk, gk, m, tag)) in fkinds.iter().enumerate() {
        let levy = model.levy(gk).clone();
        let p = pts(9 + n as u64, &levy);
        let fval = |t: f64, xi: f64, s: f64| model.diffusion_jump_nodal_at(fk, t, xi, s, None);
        let gval = |t: f64, xi: f64, s: f64, z: f64| model.diffusion_jump_nodal_at(gk, t, xi, s, Some(z));
        checks.push(scaling_check(
            &format!("A5a-f{tag}"),
            &format!("f{tag} Lipschitz in the state, uniformly in (t, xi)"),
            &p,
            &|s, r| {
                let (a, b) = (r * s.u[0], r * s.u[1]);
                ratio((fval(s.t, s.xi, a) - fval(s.t, s.xi, b)).abs(), (a - b).abs())
            },
        ));
        for pw in [1.0, 2.0, 4.0] {
            checks.push(scaling_check(
                &format!("A5a-g{tag}-p{pw}"),
                &format!("int |g{tag}(s1,z) - g{tag}(s2,z)|^p nu(dz) <= C|s1 - s2|^p, p = {pw}"),
                &p,
                &|s, r| {
                    let (a, b) = (r * s.u[0], r * s.u[1]);
                    let lhs = levy.integrate(|z| (gval(s.t, s.xi, a, z) - gval(s.t, s.xi, b, z)).abs().powf(pw));
                    ratio(lhs, (a - b).abs().powf(pw))
                },
            ));
            checks.push(scaling_check(
                &format!("A5b-{tag}-p{pw}"),
                &format!("|f{tag}|^p + int |g{tag}|^p nu(dz) <= C(1 + |s|^(p/m{tag})), p = {pw}"),
                &p,
                &|s, r| {
                    let a = r * s.u[0];
                    let lhs =
                        fval(s.t, s.xi, a).abs().powf(pw) + levy.integrate(|z| gval(s.t, s.xi, a, z).abs().powf(pw));
                    ratio(lhs, 1.0 + a.abs().powf(pw / m))
                },
            ));
        }
    }

    // (A6)
    let p = pts(11, &model.levy2);
    let mut worst: f64 = 0.0;
    for s in &p {
        let (x, y) = (AUDIT_RADIUS * s.u[0], AUDIT_RADIUS * s.u[1]);
        let diffs = [
            (model.profile.gamma(s.t), model.profile.gamma(s.t + period)),
            (
                model.profile.transport(s.t, s.xi),
                model.profile.transport(s.t + period, s.xi),
            ),
            (b2.eval(s.t, s.xi, x, y), b2.eval(s.t + period, s.xi, x, y)),
            (
                model.diffusion_jump_nodal_at(CoefficientKind::F2, s.t, s.xi, y, None),
                model.diffusion_jump_nodal_at(CoefficientKind::F2, s.t + period, s.xi, y, None),
            ),
            (
                model.diffusion_jump_nodal_at(CoefficientKind::G2, s.t, s.xi, y, Some(s.z)),
                model.diffusion_jump_nodal_at(CoefficientKind::G2, s.t + period, s.xi, y, Some(s.z)),
            ),
        ];
        for (a, b) in diffs {
            worst = worst.max((a - b).abs() / (1.0 + a.abs()));
        }
    }
    checks.push(plain_check(
        "A6",
        "gamma, l, b2, f2, g2 periodic in t with the common period",
        if worst.is_nan() { f64::INFINITY } else { worst - 1e-9 },
    ));

    AuditReport {
        model: model.name.clone(),
        seed,
        sample_budget: budget,
        checks,
    }
}

/// Nodal coefficient at a single point, for callers outside the collocation grid.
impl ModelSpec {
    pub fn diffusion_jump_nodal_at(&self, kind: CoefficientKind, t: f64, xi: f64, s: f64, mark: Option<f64>) -> f64 {
        let f = match kind {
            CoefficientKind::F1 => &self.noise_coefs.f1,
            CoefficientKind::F2 => &self.noise_coefs.f2,
            CoefficientKind::G1 => &self.noise_coefs.g1.f,
            CoefficientKind::G2 => &self.noise_coefs.g2.f,
        };
        let z = mark.unwrap_or(0.0);
        let a = match kind {
            CoefficientKind::F1 | CoefficientKind::G1 => Args {
                t: 0.0,
                xi,
                x: s,
                y: 0.0,
                z,
            },
            _ => Args { t, xi, x: 0.0, y: s, z },
        };
        f.eval(&a)
    }
}
