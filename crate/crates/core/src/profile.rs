//! Time dependence of the fast operator `A₂(t) = γ(t)·A₂ + L(t)`.
//!
//! `γ` is a periodic scalar bounded in `[γ₀, γ₁]`, `l(t, ξ)` is the bounded
//! transport coefficient of the first-order term `L(t)X = l(t,·)·∂ξX`.
//! Both share the period `P`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::func::{Args, ScalarFn};

/// Relative tolerance of the adaptive Simpson rule used for `γ(t, s)`.
pub const GAMMA_QUAD_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct TimeProfile {
    gamma: ScalarFn,
    transport: ScalarFn,
    period: f64,
    gamma_min: f64,
    gamma_max: f64,
}

impl TimeProfile {
    /// Build a profile; the bounds `γ₀, γ₁` are declared by the caller and
    /// checked on a dense sample of one period.
    pub fn new(gamma: ScalarFn, transport: ScalarFn, period: f64, gamma_min: f64, gamma_max: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Config(format!("period must be positive, got {period}")));
        }
        if !(gamma_min > 0.0 && gamma_min <= gamma_max) {
            return Err(Error::Config(format!(
                "gamma bounds must satisfy 0 < gamma_min <= gamma_max, got [{gamma_min}, {gamma_max}]"
            )));
        }
        let p = TimeProfile {
            gamma,
            transport,
            period,
            gamma_min,
            gamma_max,
        };
        let (lo, hi) = p.sampled_gamma_range(512);
        if lo < gamma_min - 1e-12 || hi > gamma_max + 1e-12 {
            return Err(Error::Config(format!(
                "gamma leaves its declared bounds: sampled range [{lo}, {hi}] vs [{gamma_min}, {gamma_max}]"
            )));
        }
        Ok(p)
    }

    /// `γ ≡ 1`, `l ≡ 0`.
    pub fn constant(gamma: f64) -> Self {
        TimeProfile {
            gamma: ScalarFn::Constant(gamma),
            transport: ScalarFn::Zero,
            period: 1.0,
            gamma_min: gamma,
            gamma_max: gamma,
        }
    }

    /// `γ(t) = γ̄ + a·sin(2πt/P)`, `l(t, ξ) = l₀·sin(2πt/P)`.
    pub fn sinusoidal(gamma_mean: f64, gamma_amp: f64, transport_amp: f64, period: f64) -> Result<Self> {
        let w = 2.0 * PI / period;
        let gamma = if gamma_amp == 0.0 {
            ScalarFn::Constant(gamma_mean)
        } else {
            ScalarFn::native(
                format!("{gamma_mean} + {gamma_amp}*sin(2pi t/{period})"),
                move |a: &Args| gamma_mean + gamma_amp * (w * a.t).sin(),
            )
        };
        let transport = if transport_amp == 0.0 {
            ScalarFn::Zero
        } else {
            ScalarFn::native(format!("{transport_amp}*sin(2pi t/{period})"), move |a: &Args| {
                transport_amp * (w * a.t).sin()
            })
        };
        TimeProfile::new(
            gamma,
            transport,
            period,
            gamma_mean - gamma_amp.abs(),
            gamma_mean + gamma_amp.abs(),
        )
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn gamma_bounds(&self) -> (f64, f64) {
        (self.gamma_min, self.gamma_max)
    }

    pub fn gamma_fn(&self) -> &ScalarFn {
        &self.gamma
    }

    pub fn transport_fn(&self) -> &ScalarFn {
        &self.transport
    }

    #[inline]
    pub fn gamma(&self, t: f64) -> f64 {
        self.gamma.eval(&Args {
            t,
            ..Default::default()
        })
    }

    #[inline]
    pub fn transport(&self, t: f64, xi: f64) -> f64 {
        self.transport.eval(&Args {
            t,
            xi,
            ..Default::default()
        })
    }

    pub fn has_transport(&self) -> bool {
        !self.transport.is_zero()
    }

    /// Period average `γ̄ = (1/P) ∫₀ᴾ γ`.
    pub fn gamma_mean(&self) -> f64 {
        self.gamma_integral(0.0, self.period).expect("0 <= P") / self.period
    }

    fn sampled_gamma_range(&self, samples: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=samples {
            let g = self.gamma(self.period * i as f64 / samples as f64);
            lo = lo.min(g);
            hi = hi.max(g);
        }
        (lo, hi)
    }

    /// `γ(t, s) = ∫ₛᵗ γ(r) dr` by adaptive Simpson quadrature.
    pub fn gamma_integral(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Err(Error::Domain(format!("gamma_integral needs s <= t, got s={s}, t={t}")));
        }
        if !(s.is_finite() && t.is_finite()) {
            return Err(Error::Numeric("non-finite integration bounds".into()));
        }
        if s == t {
            return Ok(0.0);
        }
        if let ScalarFn::Constant(c) = self.gamma {
            return Ok(c * (t - s));
        }
        let f = |r: f64| self.gamma(r);
        Ok(adaptive_simpson(&f, s, t, GAMMA_QUAD_RTOL))
    }
}

/// Adaptive Simpson quadrature with a relative tolerance on the whole integral.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = (rtol * whole.abs()).max(f64::EPSILON * (b - a).abs());
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
