//! Exponential-Euler stepping of the slow-fast system in mild form.
//!
//! One macro step `[t, t+Δt]` advances the fast component by `r = Δt/h`
//! micro steps with the slow field held at `X(t)`, then advances the slow
//! component once. The slow drift is the average of `B₁(X(t), Y_j)` over
//! the left points `Y_0 = Y(t), …, Y_{r−1}` of the micro steps, written as
//! `B₁(X, 0) + mean_j [B₁(X, Y_j) − B₁(X, 0)]` so that a drift that does not
//! read `y` is reproduced bit for bit. With `r = 1` this is `B₁(X(t), Y(t))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoefficientKind, ModelSpec};
use crate::noise::{NoiseHasher, NoiseIncrement, NoisePath};
use crate::rng::StreamRole;
use crate::spectral::{BasisSpec, SpectralField};

/// Which time argument the fast coefficients `γ, l, b₂, f₂, g₂` receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FastClock {
    /// `t/ε`: the fast coefficients oscillate on the fast scale.
    #[default]
    Rescaled,
    /// `t`: the coefficients are read on the physical clock.
    Physical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Macro step `Δt`.
    pub dt: f64,
    /// Fast micro step `h`; must divide `Δt`.
    pub h: f64,
    pub alpha: f64,
    pub eps: f64,
    /// Final time `T`; must be a multiple of `Δt`.
    pub t_end: f64,
    /// Save every `save_stride` macro steps.
    pub save_stride: usize,
    /// Radius of the always-on reaction cutoff.
    pub cutoff: Option<f64>,
    /// Hitting radius for `‖X‖ + ‖Y‖`; coefficients are cut off at this radius after the hit.
    pub n_stop: Option<f64>,
    pub fast_clock: FastClock,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.005,
            h: 0.005,
            alpha: 1.0,
            eps: 1.0,
            t_end: 0.5,
            save_stride: 1,
            cutoff: None,
            n_stop: None,
            fast_clock: FastClock::Rescaled,
        }
    }
}

fn multiple_of(total: f64, step: f64) -> Option<usize> {
    let n = (total / step).round();
    if n >= 1.0 && (n * step - total).abs() <= 1e-9 * total.abs().max(step) {
        Some(n as usize)
    } else {
        None
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.h > 0.0 && self.h <= self.dt * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "need 0 < h <= dt, got h={}, dt={}",
                self.h, self.dt
            )));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1], got {}", self.eps)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.save_stride == 0 {
            return Err(Error::Config("save_stride must be >= 1".into()));
        }
        if multiple_of(self.dt, self.h).is_none() {
            return Err(Error::Config(format!(
                "h = {} does not divide dt = {}",
                self.h, self.dt
            )));
        }
        if multiple_of(self.t_end, self.dt).is_none() {
            return Err(Error::Config(format!(
                "dt = {} does not divide T = {}",
                self.dt, self.t_end
            )));
        }
        for (name, v) in [("cutoff", self.cutoff), ("n_stop", self.n_stop)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Micro steps per macro step.
    pub fn micro_steps(&self) -> usize {
        multiple_of(self.dt, self.h).unwrap_or(1)
    }

    pub fn macro_steps(&self) -> usize {
        multiple_of(self.t_end, self.dt).unwrap_or(0)
    }

    /// Time argument handed to the fast coefficients at physical time `t`.
    #[inline]
    pub fn fast_time(&self, t: f64) -> f64 {
        match self.fast_clock {
            FastClock::Rescaled => t / self.eps,
            FastClock::Physical => t,
        }
    }

    /// `(1/ε)·γ(t+h, t)` on the configured clock.
    pub fn evolution_gamma(&self, model: &ModelSpec, t: f64, h: f64) -> Result<f64> {
        match self.fast_clock {
            FastClock::Rescaled => model.profile.gamma_integral(t / self.eps, (t + h) / self.eps),
            FastClock::Physical => Ok(model.profile.gamma_integral(t, t + h)? / self.eps),
        }
    }
}

/// State of the coupled system. The hitting time, once set, is never cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowFastState {
    pub t: f64,
    pub x: SpectralField,
    pub y: SpectralField,
    pub hit: Option<f64>,
}

impl SlowFastState {
    pub fn new(x: SpectralField, y: SpectralField) -> Self {
        SlowFastState {
            t: 0.0,
            x,
            y,
            hit: None,
        }
    }

    pub fn hit_flag(&self) -> bool {
        self.hit.is_some()
    }
}

/// Slow and fast noise for one coupled path.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledNoise {
    pub slow: NoisePath,
    pub fast: NoisePath,
}

impl CoupledNoise {
    /// Slow noise keyed by `(seed, path)` only, so every `ε` and the averaged
    /// solver consume the same slow increments; fast noise on the micro grid.
    pub fn new(model: &ModelSpec, cfg: &SolverConfig, seed: u64, path: u64) -> Result<Self> {
        Ok(CoupledNoise {
            slow: slow_noise(model, cfg, seed, path)?,
            fast: NoisePath::new(
                seed,
                path,
                (StreamRole::FastWiener, StreamRole::FastJump),
                cfg.h,
                (cfg.macro_steps() * cfg.micro_steps()) as u64,
                1.0 / cfg.eps,
                model.wiener2,
                model.levy2.clone(),
                model.basis().mode_count(),
            )?,
        })
    }
}

/// Slow noise on the macro grid of `cfg`.
pub fn slow_noise(model: &ModelSpec, cfg: &SolverConfig, seed: u64, path: u64) -> Result<NoisePath> {
    NoisePath::new(
        seed,
        path,
        (StreamRole::SlowWiener, StreamRole::SlowJump),
        cfg.dt,
        cfg.macro_steps() as u64,
        1.0,
        model.wiener1,
        model.levy1.clone(),
        model.basis().mode_count(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SlowFastState>,
    /// SHA-256 over the slow increments consumed.
    pub slow_fingerprint: String,
    pub hit: Option<f64>,
}

/// Row layout of a saved trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryLayout {
    /// `(t, mode, x, y)`: one row per saved time and retained mode.
    #[default]
    Modal,
    /// `(t, node, xi, x, y)`: one row per saved time and collocation node.
    Nodal,
}

#[derive(Serialize)]
struct ModalRow {
    t: f64,
    mode: usize,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct NodalRow {
    t: f64,
    node: usize,
    xi: f64,
    x: f64,
    y: f64,
}

impl Trajectory {
    pub fn last(&self) -> &SlowFastState {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// Long-format CSV of every saved state. Modes are numbered from 1 on
    /// Dirichlet bases and from 0 on Neumann ones, matching `e_k`.
    pub fn write_csv<W: std::io::Write>(&self, basis: &BasisSpec, layout: TrajectoryLayout, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let first = match basis.boundary_condition() {
            crate::spectral::BoundaryCondition::Dirichlet => 1,
            crate::spectral::BoundaryCondition::Neumann => 0,
        };
        for s in &self.states {
            match layout {
                TrajectoryLayout::Modal => {
                    for (k, (x, y)) in s.x.coeffs().iter().zip(s.y.coeffs()).enumerate() {
                        w.serialize(ModalRow {
                            t: s.t,
                            mode: k + first,
                            x: *x,
                            y: *y,
                        })?;
                    }
                }
                TrajectoryLayout::Nodal => {
                    for (j, ((x, y), xi)) in s.x.nodal().iter().zip(s.y.nodal()).zip(basis.nodes()).enumerate() {
                        w.serialize(NodalRow {
                            t: s.t,
                            node: j,
                            xi: *xi,
                            x: *x,
                            y: *y,
                        })?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn ensure_finite(field: &SpectralField, time: f64, what: &str) -> Result<()> {
    if field.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            time,
            what: what.into(),
        })
    }
}

/// Nodal `F(s)·ΔW + Σ_j G(s, z_j) − dt_c·∫G(s, z)ν(dz)`.
#[allow(clippy::too_many_arguments)]
fn noise_nodal(
    model: &ModelSpec,
    kinds: (CoefficientKind, CoefficientKind),
    t: f64,
    state: &[f64],
    noise: &NoiseIncrement,
    wiener_scale: f64,
    comp_dt: f64,
    out: &mut [f64],
) {
    let basis = model.basis();
    let (fk, gk) = kinds;
    if noise.dw.iter().any(|&v| v != 0.0) {
        let f = model.eval_diffusion_jump(fk, t, state, None);
        let dw = basis.to_nodal(&noise.dw);
        for ((o, fv), w) in out.iter_mut().zip(&f).zip(&dw) {
            *o += wiener_scale * fv * w;
        }
    }
    let amp = model.jump_amplitude(gk);
    if amp.f.is_zero() || model.levy(gk).intensity == 0.0 {
        return;
    }
    if !noise.events.is_empty() {
        if amp.mark_linear {
            let g1 = model.eval_diffusion_jump(gk, t, state, Some(1.0));
            let zsum: f64 = noise.events.iter().map(|e| e.mark).sum();
            for (o, g) in out.iter_mut().zip(&g1) {
                *o += zsum * g;
            }
        } else {
            for e in &noise.events {
                let g = model.eval_diffusion_jump(gk, t, state, Some(e.mark));
                for (o, v) in out.iter_mut().zip(&g) {
                    *o += v;
                }
            }
        }
    }
    let comp = model.jump_compensator(gk, t, state);
    for (o, c) in out.iter_mut().zip(&comp) {
        *o -= comp_dt * c;
    }
}

/// Centred slow drift `B₁(X,0) + mean_j [B₁(X,Y_j) − B₁(X,0)]`, nodal.
#[derive(Debug, Clone)]
pub struct DriftAccumulator {
    base: Vec<f64>,
    sum: Vec<f64>,
    scratch: Vec<f64>,
    count: usize,
    active: bool,
}

impl DriftAccumulator {
    pub fn new(model: &ModelSpec, x_nodal: &[f64]) -> Self {
        let m = x_nodal.len();
        let mut base = vec![0.0; m];
        model.slow_reaction_nodal(x_nodal, &vec![0.0; m], &mut base);
        DriftAccumulator {
            base,
            sum: vec![0.0; m],
            scratch: vec![0.0; m],
            count: 0,
            active: model.slow.depends_on_y,
        }
    }

    pub fn add(&mut self, model: &ModelSpec, x_nodal: &[f64], y_nodal: &[f64]) {
        self.count += 1;
        if !self.active {
            return;
        }
        model.slow_reaction_nodal(x_nodal, y_nodal, &mut self.scratch);
        for ((s, v), b) in self.sum.iter_mut().zip(&self.scratch).zip(&self.base) {
            *s += v - b;
        }
    }

    /// Running sums, for callers that pool several accumulators.
    pub fn parts(&self) -> (&[f64], &[f64], usize) {
        (&self.base, &self.sum, self.count)
    }

    pub fn finish(self) -> Vec<f64> {
        if self.count == 0 || !self.active {
            return self.base;
        }
        let n = self.count as f64;
        self.base.iter().zip(&self.sum).map(|(b, s)| b + s / n).collect()
    }
}

/// `X⁺ = e^{A₁Δt}[X + Δt·drift + F₁(X)ΔW + compensated jumps]`, `drift` nodal.
pub fn step_slow_with_drift(
    model: &ModelSpec,
    cfg: &SolverConfig,
    t: f64,
    x: &SpectralField,
    drift_nodal: &[f64],
    noise: &NoiseIncrement,
) -> Result<SpectralField> {
    let basis: &BasisSpec = model.basis();
    let dt = cfg.dt;
    let mut bracket: Vec<f64> = drift_nodal.iter().map(|d| dt * d).collect();
    noise_nodal(
        model,
        (CoefficientKind::F1, CoefficientKind::G1),
        t,
        x.nodal(),
        noise,
        1.0,
        dt,
        &mut bracket,
    );
    let inc = basis.to_spectral(&bracket);
    let mut c: Vec<f64> = x.coeffs().iter().zip(&inc).map(|(a, b)| a + b).collect();
    basis.scale_by_semigroup1(&mut c, dt);
    let out = basis.field_unchecked(c);
    ensure_finite(&out, t + dt, "slow component")?;
    Ok(out)
}

/// One slow step with drift `B₁(X, Y)` at the current state.
pub fn step_slow(
    state: &SlowFastState,
    model: &ModelSpec,
    cfg: &SolverConfig,
    noise: &NoiseIncrement,
) -> Result<SpectralField> {
    let mut acc = DriftAccumulator::new(model, state.x.nodal());
    acc.add(model, state.x.nodal(), state.y.nodal());
    step_slow_with_drift(model, cfg, state.t, &state.x, &acc.finish(), noise)
}

/// One fast micro step of length `cfg.h` starting at `state.t`.
pub fn step_fast(
    state: &SlowFastState,
    model: &ModelSpec,
    cfg: &SolverConfig,
    frozen_x: Option<&SpectralField>,
    noise: &NoiseIncrement,
) -> Result<SpectralField> {
    let x = frozen_x.unwrap_or(&state.x);
    fast_update(model, cfg, state.t, &state.y, x.nodal(), noise)
}

pub(crate) fn fast_update(
    model: &ModelSpec,
    cfg: &SolverConfig,
    t: f64,
    y: &SpectralField,
    x_nodal: &[f64],
    noise: &NoiseIncrement,
) -> Result<SpectralField> {
    let basis = model.basis();
    let (h, eps) = (cfg.h, cfg.eps);
    let tau = cfg.fast_time(t);
    let m = basis.node_count();
    let mut bracket = vec![0.0; m];
    model.fast_reaction_nodal(tau, x_nodal, y.nodal(), &mut bracket);
    if model.profile.has_transport() {
        let tr = basis.transport_nodal(y, &model.profile, tau);
        for (b, v) in bracket.iter_mut().zip(&tr) {
            *b += v;
        }
    }
    let scale = h / eps;
    bracket.iter_mut().for_each(|b| *b *= scale);
    noise_nodal(
        model,
        (CoefficientKind::F2, CoefficientKind::G2),
        tau,
        y.nodal(),
        noise,
        1.0 / eps.sqrt(),
        h / eps,
        &mut bracket,
    );
    let inc = basis.to_spectral(&bracket);
    let mut c: Vec<f64> = y.coeffs().iter().zip(&inc).map(|(a, b)| a + b).collect();
    let g = cfg.evolution_gamma(model, t, h)?;
    basis.scale_by_evolution(&mut c, g, cfg.alpha * h / eps);
    let out = basis.field_unchecked(c);
    ensure_finite(&out, t + h, "fast component")?;
    Ok(out)
}

/// Coefficients in force: the always-on cutoff, and the hitting cutoff once hit.
struct ActiveModel<'a> {
    base: &'a ModelSpec,
    cut: Option<ModelSpec>,
    after_hit: Option<ModelSpec>,
}

impl<'a> ActiveModel<'a> {
    fn new(model: &'a ModelSpec, cfg: &SolverConfig) -> Result<Self> {
        let cut = cfg.cutoff.map(|n| model.with_cutoff(n)).transpose()?;
        let after_hit = match (cfg.n_stop, cfg.cutoff) {
            (Some(n), c) => Some(model.with_cutoff(c.map_or(n, |c| c.min(n)))?),
            _ => None,
        };
        Ok(ActiveModel {
            base: model,
            cut,
            after_hit,
        })
    }

    fn get(&self, hit: bool) -> &ModelSpec {
        if hit {
            if let Some(m) = &self.after_hit {
                return m;
            }
        }
        self.cut.as_ref().unwrap_or(self.base)
    }
}

fn check_hit(state: &mut SlowFastState, n_stop: Option<f64>) {
    if state.hit.is_none() {
        if let Some(n) = n_stop {
            if state.x.sup_norm() + state.y.sup_norm() >= n {
                state.hit = Some(state.t);
            }
        }
    }
}

/// Per-macro-step hook used by [`simulate_khasminskii`].
trait MacroObserver {
    fn before_macro(&mut self, _k: usize, _state: &SlowFastState) {}
    fn after_micro(&mut self, _model: &ModelSpec, _cfg: &SolverConfig, _t: f64, _noise: &NoiseIncrement) -> Result<()> {
        Ok(())
    }
    fn after_macro(&mut self, _k: usize, _state: &SlowFastState) {}
}

struct NoObserver;
impl MacroObserver for NoObserver {}

fn run_coupled(
    model: &ModelSpec,
    cfg: &SolverConfig,
    x0: &SpectralField,
    y0: &SpectralField,
    noise: &CoupledNoise,
    obs: &mut dyn MacroObserver,
) -> Result<Trajectory> {
    cfg.validate()?;
    let active = ActiveModel::new(model, cfg)?;
    let slow = noise.slow.sampler();
    let fast = noise.fast.sampler();
    let r = cfg.micro_steps();
    let mut hasher = NoiseHasher::default();
    let mut state = SlowFastState::new(x0.clone(), y0.clone());
    check_hit(&mut state, cfg.n_stop);
    let mut states = vec![state.clone()];
    for k in 0..cfg.macro_steps() {
        obs.before_macro(k, &state);
        let m = active.get(state.hit_flag());
        let t0 = k as f64 * cfg.dt;
        let mut acc = DriftAccumulator::new(m, state.x.nodal());
        let mut y = state.y.clone();
        for j in 0..r {
            acc.add(m, state.x.nodal(), y.nodal());
            let t = t0 + j as f64 * cfg.h;
            let inc = fast.step((k * r + j) as u64);
            y = fast_update(m, cfg, t, &y, state.x.nodal(), &inc)?;
            obs.after_micro(m, cfg, t, &inc)?;
        }
        let inc = slow.step(k as u64);
        hasher.absorb(&inc);
        let x = step_slow_with_drift(m, cfg, t0, &state.x, &acc.finish(), &inc)?;
        state = SlowFastState {
            t: (k + 1) as f64 * cfg.dt,
            x,
            y,
            hit: state.hit,
        };
        check_hit(&mut state, cfg.n_stop);
        obs.after_macro(k, &state);
        if (k + 1).is_multiple_of(cfg.save_stride) {
            states.push(state.clone());
        }
    }
    Ok(Trajectory {
        hit: state.hit,
        states,
        slow_fingerprint: hasher.finish(),
    })
}

/// Full coupled simulation on `[0, T]`, saved every `save_stride` macro steps.
pub fn simulate_coupled(
    model: &ModelSpec,
    cfg: &SolverConfig,
    x0: &SpectralField,
    y0: &SpectralField,
    noise: &CoupledNoise,
) -> Result<Trajectory> {
    run_coupled(model, cfg, x0, y0, noise, &mut NoObserver)
}

/// Coupled trajectory together with the auxiliary fast process `Ŷ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KhasminskiiTrajectory {
    pub coupled: Trajectory,
    /// `Ŷ` at the saved times, before any reset at that time.
    pub yhat: Vec<SpectralField>,
    /// `‖Ŷ − Y‖` (sup-norm) at the end of every macro step, before any reset.
    pub gap: Vec<f64>,
    /// `‖Ŷ − Y‖` immediately after every reset.
    pub reset_gap: Vec<f64>,
}

impl KhasminskiiTrajectory {
    pub fn sup_gap(&self) -> f64 {
        self.gap.iter().copied().fold(0.0, f64::max)
    }
}

struct Khasminskii<'a> {
    window: usize,
    basis: &'a BasisSpec,
    frozen: SpectralField,
    yhat: SpectralField,
    stride: usize,
    saved: Vec<SpectralField>,
    gap: Vec<f64>,
    reset_gap: Vec<f64>,
}

impl MacroObserver for Khasminskii<'_> {
    fn before_macro(&mut self, k: usize, state: &SlowFastState) {
        if k.is_multiple_of(self.window) {
            self.frozen = state.x.clone();
            self.yhat = state.y.clone();
            self.reset_gap
                .push(self.basis.lincomb(1.0, &self.yhat, -1.0, &state.y).sup_norm());
        }
    }

    fn after_micro(&mut self, model: &ModelSpec, cfg: &SolverConfig, t: f64, noise: &NoiseIncrement) -> Result<()> {
        self.yhat = fast_update(model, cfg, t, &self.yhat, self.frozen.nodal(), noise)?;
        Ok(())
    }

    fn after_macro(&mut self, k: usize, state: &SlowFastState) {
        self.gap
            .push(self.basis.lincomb(1.0, &self.yhat, -1.0, &state.y).sup_norm());
        if (k + 1).is_multiple_of(self.stride) {
            self.saved.push(self.yhat.clone());
        }
    }
}

/// Coupled simulation plus `Ŷ`, driven by the same fast noise with `X`
/// frozen at `X(kδ)` on each window `[kδ, (k+1)δ)` and reset to `Y(kδ)`.
pub fn simulate_khasminskii(
    model: &ModelSpec,
    cfg: &SolverConfig,
    x0: &SpectralField,
    y0: &SpectralField,
    delta_eps: f64,
    noise: &CoupledNoise,
) -> Result<KhasminskiiTrajectory> {
    cfg.validate()?;
    let window = multiple_of(delta_eps, cfg.dt)
        .ok_or_else(|| Error::Config(format!("delta_eps = {delta_eps} is not a multiple of dt = {}", cfg.dt)))?;
    let mut obs = Khasminskii {
        window,
        basis: model.basis(),
        frozen: x0.clone(),
        yhat: y0.clone(),
        stride: cfg.save_stride,
        saved: vec![y0.clone()],
        gap: Vec::new(),
        reset_gap: Vec::new(),
    };
    let coupled = run_coupled(model, cfg, x0, y0, noise, &mut obs)?;
    Ok(KhasminskiiTrajectory {
        coupled,
        yhat: obs.saved,
        gap: obs.gap,
        reset_gap: obs.reset_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionFamily, FastFamily, JumpFamily, ModelParams, SlowFamily};
    use crate::noise::{LevyMeasureSpec, QWienerSpec};
    use crate::spectral::OperatorId;

    fn quiet(slow: SlowFamily, fast: FastFamily) -> ModelParams {
        ModelParams {
            slow,
            fast,
            modes: 8,
            nodes: 16,
            gamma_amp: 0.0,
            transport_amp: 0.0,
            ..ModelParams::all_zero()
        }
    }

    fn empty(n: usize) -> NoiseIncrement {
        NoiseIncrement {
            dw: vec![0.0; n],
            events: vec![],
        }
    }

    #[test]
    fn zero_coefficients_give_pure_decay() {
        let m = quiet(SlowFamily::Zero, FastFamily::Zero).build().unwrap();
        let b = m.basis();
        let cfg = SolverConfig {
            dt: 0.01,
            h: 0.01,
            eps: 0.1,
            fast_clock: FastClock::Physical,
            ..SolverConfig::default()
        };
        let x = b.field(vec![1.0; 8]).unwrap();
        let s = SlowFastState::new(x.clone(), x.clone());
        let xs = step_slow(&s, &m, &cfg, &empty(8)).unwrap();
        let ys = step_fast(&s, &m, &cfg, None, &empty(8)).unwrap();
        for k in 0..8 {
            let a1 = b.eigenvalues(OperatorId::A1)[k];
            let a2 = b.eigenvalues(OperatorId::A2)[k];
            assert!((xs.coeffs()[k] - (-a1 * 0.01).exp()).abs() < 1e-12);
            let want = (-(0.01 * a2 + 1.0 * 0.01) / 0.1).exp();
            assert!((ys.coeffs()[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_x_irrelevant_when_fast_ignores_x() {
        let m = ModelParams {
            fast: FastFamily::CubicDecoupled,
            ..ModelParams::default()
        }
        .build()
        .unwrap();
        let b = m.basis();
        let s = SlowFastState::new(b.sample(|xi| xi.sin()).unwrap(), b.sample(|xi| 0.3 * xi).unwrap());
        let other = b.sample(|xi| 5.0 * xi).unwrap();
        let cfg = SolverConfig::default();
        let inc = NoiseIncrement {
            dw: vec![0.01; b.mode_count()],
            events: vec![],
        };
        let a = step_fast(&s, &m, &cfg, None, &inc).unwrap();
        let c = step_fast(&s, &m, &cfg, Some(&other), &inc).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn one_macro_step_is_fast_then_slow() {
        let m = ModelParams {
            modes: 8,
            nodes: 16,
            ..ModelParams::default()
        }
        .build()
        .unwrap();
        let b = m.basis();
        let cfg = SolverConfig {
            dt: 0.01,
            h: 0.01,
            eps: 1.0,
            t_end: 0.01,
            ..SolverConfig::default()
        };
        let x0 = b.sample(|xi| (std::f64::consts::PI * xi).sin()).unwrap();
        let y0 = b.sample(|xi| xi * (1.0 - xi)).unwrap();
        let noise = CoupledNoise::new(&m, &cfg, 5, 0).unwrap();
        let traj = simulate_coupled(&m, &cfg, &x0, &y0, &noise).unwrap();
        let s = SlowFastState::new(x0, y0);
        let y1 = step_fast(&s, &m, &cfg, None, &noise.fast.sampler().step(0)).unwrap();
        let x1 = step_slow(&s, &m, &cfg, &noise.slow.sampler().step(0)).unwrap();
        assert_eq!(traj.last().x, x1);
        assert_eq!(traj.last().y, y1);
    }

    #[test]
    fn linear_slow_drift_first_order() {
        // b₁ = −x: mode k decays like exp(−(α_k + 1)t)
        let m = quiet(SlowFamily::Linear { rate: 1.0 }, FastFamily::Zero)
            .build()
            .unwrap();
        let b = m.basis();
        let x0 = b.mode(0).unwrap();
        let lam = b.eigenvalues(OperatorId::A1)[0] + 1.0;
        let err = |dt: f64| {
            let cfg = SolverConfig {
                dt,
                h: dt,
                t_end: 1.0,
                ..SolverConfig::default()
            };
            let noise = CoupledNoise::new(&m, &cfg, 1, 0).unwrap();
            let tr = simulate_coupled(&m, &cfg, &x0, &b.zero(), &noise).unwrap();
            (tr.last().x.coeffs()[0] - (-lam).exp()).abs()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let order = (e1 / e2).log2();
        assert!(order > 0.9, "order {order}");
    }

    #[test]
    fn hitting_flag_at_start() {
        let m = ModelParams {
            modes: 4,
            nodes: 8,
            ..ModelParams::default()
        }
        .build()
        .unwrap();
        let b = m.basis();
        let x0 = b.field(vec![10.0, 0.0, 0.0, 0.0]).unwrap();
        let cfg = SolverConfig {
            t_end: 0.02,
            n_stop: Some(0.5 * x0.sup_norm()),
            ..SolverConfig::default()
        };
        let noise = CoupledNoise::new(&m, &cfg, 1, 0).unwrap();
        let tr = simulate_coupled(&m, &cfg, &x0, &b.zero(), &noise).unwrap();
        assert_eq!(tr.states[0].hit, Some(0.0));
        assert!(tr.states.iter().all(|s| s.hit == Some(0.0)));
    }

    #[test]
    fn replay_is_bit_identical() {
        let m = ModelParams {
            modes: 8,
            nodes: 16,
            ..ModelParams::default()
        }
        .build()
        .unwrap();
        let b = m.basis();
        let cfg = SolverConfig {
            eps: 0.1,
            h: 0.001,
            t_end: 0.05,
            ..SolverConfig::default()
        };
        let x0 = b.sample(|xi| (std::f64::consts::PI * xi).sin()).unwrap();
        let noise = CoupledNoise::new(&m, &cfg, 9, 2).unwrap();
        let a = simulate_coupled(&m, &cfg, &x0, &b.zero(), &noise).unwrap();
        let c = simulate_coupled(&m, &cfg, &x0, &b.zero(), &noise.clone()).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.slow_fingerprint, noise.slow.fingerprint());
    }

    #[test]
    fn khasminskii_reset_and_x_independence() {
        let p = ModelParams {
            modes: 8,
            nodes: 16,
            fast: FastFamily::CubicDecoupled,
            ..ModelParams::default()
        };
        let m = p.build().unwrap();
        let b = m.basis();
        let cfg = SolverConfig {
            eps: 0.1,
            h: 0.001,
            t_end: 0.05,
            ..SolverConfig::default()
        };
        let x0 = b.sample(|xi| (std::f64::consts::PI * xi).sin()).unwrap();
        let noise = CoupledNoise::new(&m, &cfg, 3, 0).unwrap();
        let k = simulate_khasminskii(&m, &cfg, &x0, &b.zero(), 0.01, &noise).unwrap();
        assert!(k.gap.iter().all(|&g| g == 0.0));
        assert_eq!(k.reset_gap.len(), 5);

        let m = ModelParams {
            modes: 8,
            nodes: 16,
            ..ModelParams::default()
        }
        .build()
        .unwrap();
        let k = simulate_khasminskii(&m, &cfg, &x0, &b.zero(), 0.01, &noise).unwrap();
        assert!(k.reset_gap.iter().all(|&g| g == 0.0));
        assert!(k.sup_gap() > 0.0);
        assert!(simulate_khasminskii(&m, &cfg, &x0, &b.zero(), 0.0123, &noise).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            SolverConfig {
                eps: 1.5,
                ..SolverConfig::default()
            },
            SolverConfig {
                h: 0.003,
                ..SolverConfig::default()
            },
            SolverConfig {
                h: 0.01,
                ..SolverConfig::default()
            },
            SolverConfig {
                t_end: 0.0123,
                ..SolverConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn divergence_reports_time() {
        let p = ModelParams {
            slow: SlowFamily::Expr { expr: "x^5".into() },
            f1: DiffusionFamily::Zero,
            g1: JumpFamily::Zero,
            wiener1: QWienerSpec::scaled(0.0),
            levy1: LevyMeasureSpec::none(),
            modes: 4,
            nodes: 8,
            ..ModelParams::default()
        };
        let m = p.build().unwrap();
        let b = m.basis();
        let cfg = SolverConfig {
            dt: 0.1,
            h: 0.1,
            t_end: 10.0,
            ..SolverConfig::default()
        };
        let x0 = b.field(vec![50.0, 0.0, 0.0, 0.0]).unwrap();
        let noise = CoupledNoise::new(&m, &cfg, 1, 0).unwrap();
        match simulate_coupled(&m, &cfg, &x0, &b.zero(), &noise) {
            Err(Error::Divergence { time, .. }) => assert!(time > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
