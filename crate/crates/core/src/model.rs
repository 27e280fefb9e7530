//! Reaction, diffusion and jump coefficients and their composition operators.
//!
//! Pointwise coefficients `b₁(ξ,x,y)`, `b₂(t,ξ,x,y)`, `f₁(ξ,x)`, `f₂(t,ξ,y)`,
//! `g₁(ξ,x,z)`, `g₂(t,ξ,y,z)` are lifted to fields by evaluating at the
//! collocation nodes and projecting back onto the retained modes.
//!
//! Argument convention for expressions: the slow coefficients `f₁, g₁` read
//! the state from `x`, the fast ones `f₂, g₂` read it from `y`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};
use crate::expr::{Expr, Var};
use crate::func::{Args, ScalarFn};
use crate::noise::{LevyMeasureSpec, MarkLaw, QWienerSpec};
use crate::profile::TimeProfile;
use crate::spectral::{BasisSpec, BoundaryCondition, SpectralField};

/// A reaction term `b(t, ξ, x, y)` with an optional radial cutoff in `(x, y)`.
#[derive(Debug, Clone)]
pub struct Reaction {
    f: ScalarFn,
    cutoff: Option<f64>,
}

impl Reaction {
    pub fn new(f: ScalarFn) -> Self {
        Reaction { f, cutoff: None }
    }

    pub fn function(&self) -> &ScalarFn {
        &self.f
    }

    pub fn cutoff_radius(&self) -> Option<f64> {
        self.cutoff
    }

    /// `b_n(σ) = b(σ)` for `|σ| ≤ n`, `b(σ·n/|σ|)` otherwise.
    pub fn cutoff(&self, n: f64) -> Result<Reaction> {
        if !(n > 0.0) {
            return Err(Error::Domain(format!("cutoff radius must be positive, got {n}")));
        }
        Ok(Reaction {
            f: self.f.clone(),
            cutoff: Some(n),
        })
    }

    #[inline]
    pub fn eval(&self, t: f64, xi: f64, x: f64, y: f64) -> f64 {
        let (x, y) = match self.cutoff {
            Some(n) => {
                let r = x.hypot(y);
                if r > n {
                    (x * n / r, y * n / r)
                } else {
                    (x, y)
                }
            }
            None => (x, y),
        };
        self.f.eval(&Args { t, xi, x, y, z: 0.0 })
    }
}

#[derive(Debug, Clone)]
pub struct SlowReactionSpec {
    pub b: Reaction,
    /// Growth exponent `m₁ ≥ 1`.
    pub m1: f64,
    /// Local Lipschitz exponent `κ > 0`.
    pub kappa: f64,
    pub depends_on_y: bool,
}

#[derive(Debug, Clone)]
pub struct FastReactionSpec {
    pub b: Reaction,
    /// Growth exponent `m₂ ≥ 1`.
    pub m2: f64,
    pub depends_on_x: bool,
}

/// A jump amplitude `g(…, z)`. When `mark_linear` is set, `g(…, z) = z·g(…, 1)`.
#[derive(Debug, Clone)]
pub struct JumpAmplitude {
    pub f: ScalarFn,
    pub mark_linear: bool,
}

#[derive(Debug, Clone)]
pub struct DiffusionJumpSpec {
    pub f1: ScalarFn,
    pub g1: JumpAmplitude,
    pub f2: ScalarFn,
    pub g2: JumpAmplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientKind {
    F1,
    G1,
    F2,
    G2,
}

/// Everything needed to simulate the slow-fast system.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub basis: Arc<BasisSpec>,
    pub profile: TimeProfile,
    pub slow: SlowReactionSpec,
    pub fast: FastReactionSpec,
    pub noise_coefs: DiffusionJumpSpec,
    pub wiener1: QWienerSpec,
    pub wiener2: QWienerSpec,
    pub levy1: LevyMeasureSpec,
    pub levy2: LevyMeasureSpec,
}

impl ModelSpec {
    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    /// Copy with both reaction terms cut off at radius `n`.
    pub fn with_cutoff(&self, n: f64) -> Result<ModelSpec> {
        let mut m = self.clone();
        m.slow.b = self.slow.b.cutoff(n)?;
        m.fast.b = self.fast.b.cutoff(n)?;
        Ok(m)
    }

    pub fn has_slow_cutoff(&self) -> bool {
        self.slow.b.cutoff.is_some()
    }

    /// Nodal `b₁(ξ_j, x_j, y_j)`.
    pub fn slow_reaction_nodal(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (((o, &xi), &xv), &yv) in out.iter_mut().zip(self.basis.nodes()).zip(x).zip(y) {
            *o = self.slow.b.eval(0.0, xi, xv, yv);
        }
    }

    /// Nodal `b₂(t, ξ_j, x_j, y_j)`.
    pub fn fast_reaction_nodal(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (((o, &xi), &xv), &yv) in out.iter_mut().zip(self.basis.nodes()).zip(x).zip(y) {
            *o = self.fast.b.eval(t, xi, xv, yv);
        }
    }

    /// `B₁(x, y)`, projected.
    pub fn eval_slow_reaction(&self, x: &SpectralField, y: &SpectralField) -> Result<SpectralField> {
        let m = self.basis.node_count();
        ensure_same_len(m, x.nodal().len())?;
        ensure_same_len(m, y.nodal().len())?;
        let mut out = vec![0.0; m];
        self.slow_reaction_nodal(x.nodal(), y.nodal(), &mut out);
        self.basis.project(&out)
    }

    /// `B₂(t, x, y)`, projected.
    pub fn eval_fast_reaction(&self, t: f64, x: &SpectralField, y: &SpectralField) -> Result<SpectralField> {
        let m = self.basis.node_count();
        ensure_same_len(m, x.nodal().len())?;
        ensure_same_len(m, y.nodal().len())?;
        let mut out = vec![0.0; m];
        self.fast_reaction_nodal(t, x.nodal(), y.nodal(), &mut out);
        self.basis.project(&out)
    }

    fn coefficient_args(kind: CoefficientKind, t: f64, xi: f64, s: f64, z: f64) -> Args {
        match kind {
            CoefficientKind::F1 | CoefficientKind::G1 => Args {
                t: 0.0,
                xi,
                x: s,
                y: 0.0,
                z,
            },
            CoefficientKind::F2 | CoefficientKind::G2 => Args { t, xi, x: 0.0, y: s, z },
        }
    }

    /// Nodal values of `f` (when `mark` is `None`) or `g(·, ·, z)`.
    pub fn eval_diffusion_jump(&self, kind: CoefficientKind, t: f64, state: &[f64], mark: Option<f64>) -> Vec<f64> {
        let mut out = vec![0.0; state.len()];
        self.diffusion_jump_nodal(kind, t, state, mark, &mut out);
        out
    }

    pub fn diffusion_jump_nodal(
        &self,
        kind: CoefficientKind,
        t: f64,
        state: &[f64],
        mark: Option<f64>,
        out: &mut [f64],
    ) {
        let f = match (kind, mark) {
            (CoefficientKind::F1, _) => &self.noise_coefs.f1,
            (CoefficientKind::F2, _) => &self.noise_coefs.f2,
            (CoefficientKind::G1, _) => &self.noise_coefs.g1.f,
            (CoefficientKind::G2, _) => &self.noise_coefs.g2.f,
        };
        if f.is_zero() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let z = mark.unwrap_or(0.0);
        for ((o, &xi), &s) in out.iter_mut().zip(self.basis.nodes()).zip(state) {
            *o = f.eval(&Self::coefficient_args(kind, t, xi, s, z));
        }
    }

    pub fn jump_amplitude(&self, kind: CoefficientKind) -> &JumpAmplitude {
        match kind {
            CoefficientKind::G1 => &self.noise_coefs.g1,
            _ => &self.noise_coefs.g2,
        }
    }

    pub fn levy(&self, kind: CoefficientKind) -> &LevyMeasureSpec {
        match kind {
            CoefficientKind::F1 | CoefficientKind::G1 => &self.levy1,
            CoefficientKind::F2 | CoefficientKind::G2 => &self.levy2,
        }
    }

    /// Nodal compensator `∫ g(t, ξ, s(ξ), z) ν(dz)`.
    pub fn jump_compensator(&self, kind: CoefficientKind, t: f64, state: &[f64]) -> Vec<f64> {
        let g = self.jump_amplitude(kind);
        let levy = self.levy(kind);
        if g.f.is_zero() || levy.intensity == 0.0 {
            return vec![0.0; state.len()];
        }
        if g.mark_linear {
            let mean = levy.intensity * levy.law.mean();
            if mean == 0.0 {
                return vec![0.0; state.len()];
            }
            let mut out = self.eval_diffusion_jump(kind, t, state, Some(1.0));
            out.iter_mut().for_each(|v| *v *= mean);
            return out;
        }
        self.basis
            .nodes()
            .iter()
            .zip(state)
            .map(|(&xi, &s)| levy.integrate(|z| g.f.eval(&Self::coefficient_args(kind, t, xi, s, z))))
            .collect()
    }
}

/// Selectable slow reaction families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family", deny_unknown_fields)]
pub enum SlowFamily {
    /// `b₁ = x − x³ + y`
    Fhn,
    /// `b₁ = x − x³` (no coupling to the fast variable)
    FhnDecoupled,
    /// `b₁ = −r·x`
    Linear {
        rate: f64,
    },
    Zero,
    Expr {
        expr: String,
    },
}

/// Selectable fast reaction families; `ω = 2π/P` is the profile frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family", deny_unknown_fields)]
pub enum FastFamily {
    /// `b₂ = −y³ − y + x·(a + c·sin(ωt))`
    CubicDecay {
        a: f64,
        c: f64,
    },
    /// `b₂ = −y + x·(a + c·sin(ωt))`
    Linear {
        a: f64,
        c: f64,
    },
    /// `b₂ = −y³ − y`
    CubicDecoupled,
    Zero,
    Expr {
        expr: String,
    },
}

/// Selectable diffusion families `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family", deny_unknown_fields)]
pub enum DiffusionFamily {
    /// `f = c·(1 + tanh(s))`
    Bounded {
        c: f64,
    },
    /// `f = c`
    Constant {
        c: f64,
    },
    Zero,
    Expr {
        expr: String,
    },
}

/// Selectable jump amplitude families `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family", deny_unknown_fields)]
pub enum JumpFamily {
    /// `g = c·z·tanh(s)`
    Bounded {
        c: f64,
    },
    /// `g = c·z`
    Additive {
        c: f64,
    },
    Zero,
    Expr {
        expr: String,
    },
}

/// Plain-data description of a model, as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub name: String,
    pub boundary: BoundaryCondition,
    pub modes: usize,
    pub nodes: usize,
    pub d1: f64,
    pub d2: f64,
    pub gamma_mean: f64,
    pub gamma_amp: f64,
    pub transport_amp: f64,
    pub period: f64,
    pub slow: SlowFamily,
    pub m1: f64,
    pub kappa: f64,
    pub fast: FastFamily,
    pub m2: f64,
    pub f1: DiffusionFamily,
    pub g1: JumpFamily,
    pub f2: DiffusionFamily,
    pub g2: JumpFamily,
    pub wiener1: QWienerSpec,
    pub wiener2: QWienerSpec,
    pub levy1: LevyMeasureSpec,
    pub levy2: LevyMeasureSpec,
}

impl Default for ModelParams {
    /// The built-in FitzHugh–Nagumo type model.
    fn default() -> Self {
        ModelParams {
            name: "fhn-cubic".into(),
            boundary: BoundaryCondition::Dirichlet,
            modes: 32,
            nodes: 64,
            d1: 0.1,
            d2: 1.0,
            gamma_mean: 1.0,
            gamma_amp: 0.5,
            transport_amp: 0.5,
            period: 1.0,
            slow: SlowFamily::Fhn,
            m1: 3.0,
            kappa: 2.0,
            fast: FastFamily::CubicDecay { a: 1.0, c: 0.5 },
            m2: 3.0,
            f1: DiffusionFamily::Bounded { c: 0.2 },
            g1: JumpFamily::Bounded { c: 0.2 },
            f2: DiffusionFamily::Bounded { c: 1.0 },
            g2: JumpFamily::Bounded { c: 0.5 },
            wiener1: QWienerSpec::default_family(),
            wiener2: QWienerSpec::default_family(),
            levy1: LevyMeasureSpec {
                intensity: 1.0,
                law: MarkLaw::Uniform,
            },
            levy2: LevyMeasureSpec {
                intensity: 2.0,
                law: MarkLaw::Uniform,
            },
        }
    }
}

fn parse_expr(src: &str, what: &str) -> Result<Expr> {
    Expr::parse(src).map_err(|e| Error::Config(format!("{what}: {e}")))
}

impl ModelParams {
    pub fn build(&self) -> Result<ModelSpec> {
        if self.m1 < 1.0 || self.m2 < 1.0 {
            return Err(Error::Config(format!(
                "growth exponents must be >= 1, got m1={}, m2={}",
                self.m1, self.m2
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        let basis = Arc::new(BasisSpec::with_diffusivities(
            self.boundary,
            self.modes,
            self.nodes,
            self.d1,
            self.d2,
        )?);
        let profile = TimeProfile::sinusoidal(self.gamma_mean, self.gamma_amp, self.transport_amp, self.period)?;
        if profile.gamma_bounds().0 <= 0.0 {
            return Err(Error::Config(
                "gamma must stay positive: need gamma_amp < gamma_mean".into(),
            ));
        }
        let omega = 2.0 * PI / self.period;

        let (b1, dep_y) = match &self.slow {
            SlowFamily::Fhn => (
                ScalarFn::native("x - x^3 + y", |a: &Args| a.x - a.x * a.x * a.x + a.y),
                true,
            ),
            SlowFamily::FhnDecoupled => (ScalarFn::native("x - x^3", |a: &Args| a.x - a.x * a.x * a.x), false),
            SlowFamily::Linear { rate } => {
                let r = *rate;
                (ScalarFn::native(format!("-{r}*x"), move |a: &Args| -r * a.x), false)
            }
            SlowFamily::Zero => (ScalarFn::Zero, false),
            SlowFamily::Expr { expr } => {
                let e = parse_expr(expr, "slow reaction")?;
                let dep = e.uses(Var::Y);
                (ScalarFn::expr(e), dep)
            }
        };
        let (b2, dep_x) = match &self.fast {
            FastFamily::CubicDecay { a, c } => {
                let (a, c) = (*a, *c);
                (
                    ScalarFn::native(format!("-y^3 - y + x*({a} + {c}*sin(wt))"), move |p: &Args| {
                        -p.y * p.y * p.y - p.y + p.x * (a + c * (omega * p.t).sin())
                    }),
                    a != 0.0 || c != 0.0,
                )
            }
            FastFamily::Linear { a, c } => {
                let (a, c) = (*a, *c);
                (
                    ScalarFn::native(format!("-y + x*({a} + {c}*sin(wt))"), move |p: &Args| {
                        -p.y + p.x * (a + c * (omega * p.t).sin())
                    }),
                    a != 0.0 || c != 0.0,
                )
            }
            FastFamily::CubicDecoupled => (ScalarFn::native("-y^3 - y", |p: &Args| -p.y * p.y * p.y - p.y), false),
            FastFamily::Zero => (ScalarFn::Zero, false),
            FastFamily::Expr { expr } => {
                let e = parse_expr(expr, "fast reaction")?;
                let dep = e.uses(Var::X);
                (ScalarFn::expr(e), dep)
            }
        };
        let diffusion = |fam: &DiffusionFamily, slow: bool, what: &str| -> Result<ScalarFn> {
            Ok(match fam {
                DiffusionFamily::Bounded { c } => {
                    let c = *c;
                    if c == 0.0 {
                        ScalarFn::Zero
                    } else if slow {
                        ScalarFn::native(format!("{c}*(1 + tanh(x))"), move |a: &Args| c * (1.0 + a.x.tanh()))
                    } else {
                        ScalarFn::native(format!("{c}*(1 + tanh(y))"), move |a: &Args| c * (1.0 + a.y.tanh()))
                    }
                }
                DiffusionFamily::Constant { c } => {
                    if *c == 0.0 {
                        ScalarFn::Zero
                    } else {
                        ScalarFn::Constant(*c)
                    }
                }
                DiffusionFamily::Zero => ScalarFn::Zero,
                DiffusionFamily::Expr { expr } => ScalarFn::expr(parse_expr(expr, what)?),
            })
        };
        let jump = |fam: &JumpFamily, slow: bool, what: &str| -> Result<JumpAmplitude> {
            Ok(match fam {
                JumpFamily::Bounded { c } => {
                    let c = *c;
                    let f = if c == 0.0 {
                        ScalarFn::Zero
                    } else if slow {
                        ScalarFn::native(format!("{c}*z*tanh(x)"), move |a: &Args| c * a.z * a.x.tanh())
                    } else {
                        ScalarFn::native(format!("{c}*z*tanh(y)"), move |a: &Args| c * a.z * a.y.tanh())
                    };
                    JumpAmplitude { f, mark_linear: true }
                }
                JumpFamily::Additive { c } => {
                    let c = *c;
                    let f = if c == 0.0 {
                        ScalarFn::Zero
                    } else {
                        ScalarFn::native(format!("{c}*z"), move |a: &Args| c * a.z)
                    };
                    JumpAmplitude { f, mark_linear: true }
                }
                JumpFamily::Zero => JumpAmplitude {
                    f: ScalarFn::Zero,
                    mark_linear: true,
                },
                JumpFamily::Expr { expr } => JumpAmplitude {
                    f: ScalarFn::expr(parse_expr(expr, what)?),
                    mark_linear: false,
                },
            })
        };
        Ok(ModelSpec {
            name: self.name.clone(),
            basis,
            profile,
            slow: SlowReactionSpec {
                b: Reaction::new(b1),
                m1: self.m1,
                kappa: self.kappa,
                depends_on_y: dep_y,
            },
            fast: FastReactionSpec {
                b: Reaction::new(b2),
                m2: self.m2,
                depends_on_x: dep_x,
            },
            noise_coefs: DiffusionJumpSpec {
                f1: diffusion(&self.f1, true, "f1")?,
                g1: jump(&self.g1, true, "g1")?,
                f2: diffusion(&self.f2, false, "f2")?,
                g2: jump(&self.g2, false, "g2")?,
            },
            wiener1: QWienerSpec::new(
                self.wiener1.scale,
                self.wiener1.decay,
                self.wiener1.rho,
                self.wiener1.beta,
            )?,
            wiener2: QWienerSpec::new(
                self.wiener2.scale,
                self.wiener2.decay,
                self.wiener2.rho,
                self.wiener2.beta,
            )?,
            levy1: LevyMeasureSpec::new(self.levy1.intensity, self.levy1.law)?,
            levy2: LevyMeasureSpec::new(self.levy2.intensity, self.levy2.law)?,
        })
    }

    /// Built-in model with every coefficient and noise switched off.
    pub fn all_zero() -> Self {
        ModelParams {
            name: "zero".into(),
            slow: SlowFamily::Zero,
            fast: FastFamily::Zero,
            f1: DiffusionFamily::Zero,
            g1: JumpFamily::Zero,
            f2: DiffusionFamily::Zero,
            g2: JumpFamily::Zero,
            wiener1: QWienerSpec::scaled(0.0),
            wiener2: QWienerSpec::scaled(0.0),
            levy1: LevyMeasureSpec::none(),
            levy2: LevyMeasureSpec::none(),
            ..ModelParams::default()
        }
    }

    /// Linear fast model: `b₂ = −y + x`, additive fast noise, no fast jumps,
    /// no transport; the mean of the frozen fast process solves a linear ODE.
    pub fn linear_fast_oracle() -> Self {
        ModelParams {
            name: "linear-fast".into(),
            transport_amp: 0.0,
            fast: FastFamily::Linear { a: 1.0, c: 0.0 },
            f2: DiffusionFamily::Constant { c: 1.0 },
            g2: JumpFamily::Zero,
            levy2: LevyMeasureSpec::none(),
            ..ModelParams::default()
        }
    }
}
