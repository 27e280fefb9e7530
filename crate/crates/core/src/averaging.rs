//! Frozen fast dynamics, ergodicity diagnostics and the averaged drift.
//!
//! The frozen equation is the fast equation with `ε = 1` and the slow field
//! held at `x`; its time argument is the fast clock. `B̄₁(x)` is estimated by
//! a combined time-and-ensemble average of `B₁(x, Y^x(t))` after a burn-in,
//! centred on `B₁(x, 0)` exactly as the coupled integrator centres its slow
//! drift, so a drift that ignores `y` is reproduced bit for bit.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{fast_update, step_slow_with_drift, FastClock, SolverConfig};
use crate::model::ModelSpec;
use crate::noise::{NoiseHasher, NoisePath};
use crate::rng::{derive_seed, StreamRole};
use crate::spectral::{BasisSpec, SpectralField};
use crate::stats::{linear_fit, mean_se};

/// Maximum share of divergent trajectories tolerated by the estimator.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

/// Step size and linear damping of the frozen equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrozenConfig {
    pub h: f64,
    pub alpha: f64,
    pub save_stride: usize,
}

impl Default for FrozenConfig {
    fn default() -> Self {
        FrozenConfig {
            h: 0.01,
            alpha: 1.0,
            save_stride: 1,
        }
    }
}

impl FrozenConfig {
    fn solver(&self) -> SolverConfig {
        SolverConfig {
            dt: self.h,
            h: self.h,
            alpha: self.alpha,
            eps: 1.0,
            t_end: self.h,
            save_stride: self.save_stride.max(1),
            cutoff: None,
            n_stop: None,
            fast_clock: FastClock::Physical,
        }
    }

    fn steps(&self, horizon: f64) -> Result<usize> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if !(self.h > 0.0) {
            return Err(Error::Config(format!("frozen step must be positive, got {}", self.h)));
        }
        Ok((horizon / self.h - 1e-9).ceil().max(1.0) as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenFastProblem {
    pub x: SpectralField,
    /// Initial (fast) time `s`.
    pub s: f64,
    pub y: SpectralField,
}

impl FrozenFastProblem {
    pub fn new(x: SpectralField, s: f64, y: SpectralField) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Numeric("frozen slow field is not finite".into()));
        }
        Ok(FrozenFastProblem { x, s, y })
    }
}

/// Noise for one frozen trajectory.
pub fn frozen_noise(model: &ModelSpec, h: f64, steps: usize, seed: u64, path: u64, sub: u64) -> Result<NoisePath> {
    Ok(NoisePath::new(
        seed,
        path,
        (StreamRole::FrozenWiener, StreamRole::FrozenJump),
        h,
        steps as u64,
        1.0,
        model.wiener2,
        model.levy2.clone(),
        model.basis().mode_count(),
    )?
    .with_sub(sub))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
}

/// Advance the frozen equation `steps` times, calling `visit(j, Y_j)` on the
/// left point of every step and returning the final state.
#[allow(clippy::too_many_arguments)]
fn frozen_run(
    model: &ModelSpec,
    cfg: &SolverConfig,
    x_nodal: &[f64],
    y0: &SpectralField,
    s: f64,
    steps: usize,
    noise: &NoisePath,
    mut visit: impl FnMut(usize, &SpectralField),
) -> Result<SpectralField> {
    let sampler = noise.sampler();
    let mut y = y0.clone();
    for j in 0..steps {
        visit(j, &y);
        let t = s + j as f64 * cfg.h;
        y = fast_update(model, cfg, t, &y, x_nodal, &sampler.step(j as u64))?;
    }
    Ok(y)
}

/// Frozen fast trajectory on `[s, s + horizon]`.
pub fn simulate_frozen_fast(
    model: &ModelSpec,
    problem: &FrozenFastProblem,
    cfg: &FrozenConfig,
    horizon: f64,
    noise: &NoisePath,
) -> Result<FrozenTrajectory> {
    let steps = cfg.steps(horizon)?;
    let solver = cfg.solver();
    let stride = solver.save_stride;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let last = frozen_run(
        model,
        &solver,
        problem.x.nodal(),
        &problem.y,
        problem.s,
        steps,
        noise,
        |j, y| {
            if j.is_multiple_of(stride) {
                times.push(problem.s + j as f64 * cfg.h);
                states.push(y.clone());
            }
        },
    )?;
    if steps.is_multiple_of(stride) {
        times.push(problem.s + steps as f64 * cfg.h);
        states.push(last);
    }
    Ok(FrozenTrajectory { times, states })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    /// Replica mean of `‖Y₁(t) − Y₂(t)‖` (sup-norm).
    pub curve: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Fitted `δ̂_c` (positive means contraction); `None` when degenerate.
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub degenerate: bool,
}

/// Two frozen copies from `y1`, `y2` driven by identical noise, `replicas` times.
#[allow(clippy::too_many_arguments)]
pub fn contraction_test(
    model: &ModelSpec,
    x: &SpectralField,
    y1: &SpectralField,
    y2: &SpectralField,
    cfg: &FrozenConfig,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<ContractionReport> {
    let steps = cfg.steps(horizon)?;
    let solver = cfg.solver();
    let basis = model.basis();
    let stride = solver.save_stride;
    let n_save = steps / stride + 1;
    let curves: Vec<Result<Vec<f64>>> = (0..replicas.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let noise = frozen_noise(model, cfg.h, steps, seed, r, 1)?;
            let sampler = noise.sampler();
            let (mut a, mut b) = (y1.clone(), y2.clone());
            let mut out = Vec::with_capacity(n_save);
            for j in 0..=steps {
                if j.is_multiple_of(stride) {
                    out.push(basis.lincomb(1.0, &a, -1.0, &b).sup_norm());
                }
                if j == steps {
                    break;
                }
                let inc = sampler.step(j as u64);
                let t = j as f64 * cfg.h;
                a = fast_update(model, &solver, t, &a, x.nodal(), &inc)?;
                b = fast_update(model, &solver, t, &b, x.nodal(), &inc)?;
            }
            Ok(out)
        })
        .collect();
    let curves: Vec<Vec<f64>> = curves.into_iter().collect::<Result<_>>()?;
    let times: Vec<f64> = (0..n_save).map(|i| (i * stride) as f64 * cfg.h).collect();
    let mut curve = Vec::with_capacity(n_save);
    let mut stderr = Vec::with_capacity(n_save);
    for i in 0..n_save {
        let col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        let m = mean_se(&col);
        curve.push(m.mean);
        stderr.push(m.se);
    }
    let (ts, logs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&curve)
        .filter(|(_, &c)| c > 0.0 && c.is_finite())
        .map(|(&t, &c)| (t, c.ln()))
        .unzip();
    let fit = if curve[0] > 0.0 { linear_fit(&ts, &logs) } else { None };
    Ok(ContractionReport {
        times,
        curve,
        stderr,
        rate: fit.map(|f| -f.slope),
        r_squared: fit.map(|f| f.r_squared),
        degenerate: fit.is_none(),
    })
}

/// Built-in contraction probe: `x = x0`, `y₁ = 2 sin(πξ) = −y₂`, 32 replicas.
pub fn default_contraction(
    model: &ModelSpec,
    x: &SpectralField,
    cfg: &FrozenConfig,
    horizon: f64,
    seed: u64,
) -> Result<ContractionReport> {
    let y1 = model.basis().sample(|xi| 2.0 * (std::f64::consts::PI * xi).sin())?;
    let y2 = model.basis().lincomb(-1.0, &y1, 0.0, &y1);
    contraction_test(model, x, &y1, &y2, cfg, horizon, 32, seed)
}

/// `T_burn = 10/δ̂_c` from [`default_contraction`].
pub fn default_burn_in(model: &ModelSpec, x: &SpectralField, cfg: &FrozenConfig, seed: u64) -> Result<f64> {
    let rep = default_contraction(model, x, cfg, 1.0, seed)?;
    match rep.rate {
        Some(r) if r > 0.0 => Ok(10.0 / r),
        _ => Err(Error::Estimation(
            "contraction rate is not positive; cannot set burn-in".into(),
        )),
    }
}

/// Lipschitz functionals for the mixing diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    /// `min(‖y‖_∞, c)`
    SupNormClipped(f64),
    /// First spectral coefficient.
    FirstMode,
    /// Mean over the nodes.
    NodalMean,
    Constant(f64),
}

impl Observable {
    pub fn eval(&self, y: &SpectralField) -> f64 {
        match *self {
            Observable::SupNormClipped(c) => y.sup_norm().min(c),
            Observable::FirstMode => y.coeffs()[0],
            Observable::NodalMean => y.nodal().iter().sum::<f64>() / y.nodal().len() as f64,
            Observable::Constant(c) => c,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Observable::SupNormClipped(c) => format!("min(sup-norm, {c})"),
            Observable::FirstMode => "first mode coefficient".into(),
            Observable::NodalMean => "nodal mean".into(),
            Observable::Constant(c) => format!("constant {c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingSetup {
    pub observable: Observable,
    /// Increasing lags `t − s`.
    pub lags: Vec<f64>,
    pub replicas: usize,
    pub y_start: SpectralField,
    /// Initial fast time `s`.
    pub s: f64,
    /// The long-run reference at lag `τ` is taken at `τ + k·P` with `k·P ≥ reference_shift`.
    pub reference_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub lags: Vec<f64>,
    /// `|E φ(Y(s+τ)) − E φ(Y(s+τ+kP))|` per lag.
    pub envelope: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Lags used in the fit (envelope above three standard errors).
    pub fitted_lags: usize,
    pub observable: String,
    pub degenerate: bool,
}

/// Decay of `|P_{s,s+τ}φ(y) − ∫φ dμ|` over the lag grid, with the reference
/// measure approximated by the same replicas a whole number of periods later.
pub fn estimate_mixing_rate(
    model: &ModelSpec,
    x: &SpectralField,
    setup: &MixingSetup,
    cfg: &FrozenConfig,
    seed: u64,
) -> Result<MixingReport> {
    if setup.replicas < 2 {
        return Err(Error::Domain("mixing estimate needs at least 2 replicas".into()));
    }
    if setup.lags.is_empty() || setup.lags.windows(2).any(|w| w[1] <= w[0]) || setup.lags[0] < 0.0 {
        return Err(Error::Domain(
            "lag grid must be nonnegative and strictly increasing".into(),
        ));
    }
    let describe = setup.observable.describe();
    if let Observable::Constant(_) = setup.observable {
        return Ok(MixingReport {
            rate: None,
            r_squared: None,
            lags: setup.lags.clone(),
            envelope: vec![0.0; setup.lags.len()],
            stderr: vec![0.0; setup.lags.len()],
            fitted_lags: 0,
            observable: describe,
            degenerate: true,
        });
    }
    let period = model.profile.period();
    let shift = (setup.reference_shift / period).ceil().max(1.0) * period;
    let lag_steps: Vec<usize> = setup.lags.iter().map(|l| (l / cfg.h).round() as usize).collect();
    let shift_steps = (shift / cfg.h).round() as usize;
    let total = lag_steps.last().copied().unwrap_or(0) + shift_steps;
    let solver = cfg.solver();
    let diffs: Vec<Result<Vec<f64>>> = (0..setup.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let noise = frozen_noise(model, cfg.h, total, seed, r, 2)?;
            let mut phi = vec![f64::NAN; total + 1];
            let last = frozen_run(
                model,
                &solver,
                x.nodal(),
                &setup.y_start,
                setup.s,
                total,
                &noise,
                |j, y| {
                    phi[j] = setup.observable.eval(y);
                },
            )?;
            phi[total] = setup.observable.eval(&last);
            Ok(lag_steps.iter().map(|&j| phi[j] - phi[j + shift_steps]).collect())
        })
        .collect();
    let diffs: Vec<Vec<f64>> = diffs.into_iter().collect::<Result<_>>()?;
    let mut envelope = Vec::new();
    let mut stderr = Vec::new();
    for i in 0..setup.lags.len() {
        let col: Vec<f64> = diffs.iter().map(|d| d[i]).collect();
        let m = mean_se(&col);
        envelope.push(m.mean.abs());
        stderr.push(m.se);
    }
    let (ts, logs): (Vec<f64>, Vec<f64>) = setup
        .lags
        .iter()
        .zip(envelope.iter().zip(&stderr))
        .filter(|(_, (&e, &s))| e > 3.0 * s && e > 0.0)
        .map(|(&l, (&e, _))| (l, e.ln()))
        .unzip();
    let fit = if ts.len() >= 3 { linear_fit(&ts, &logs) } else { None };
    Ok(MixingReport {
        rate: fit.map(|f| -f.slope),
        r_squared: fit.map(|f| f.r_squared),
        lags: setup.lags.clone(),
        envelope,
        stderr,
        fitted_lags: ts.len(),
        observable: describe,
        degenerate: fit.is_none(),
    })
}

/// Burn-in, horizon and ensemble size of the `B̄₁` estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragingParams {
    pub t_burn: f64,
    pub t_avg: f64,
    pub n_traj: usize,
    pub frozen: FrozenConfig,
}

impl AveragingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_burn > 0.0 && self.t_avg > 0.0) {
            return Err(Error::Domain(format!(
                "T_burn and T_avg must be positive, got {} and {}",
                self.t_burn, self.t_avg
            )));
        }
        if self.n_traj == 0 {
            return Err(Error::Domain("n_traj must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragedDriftEstimate {
    #[serde(skip)]
    pub estimate: SpectralField,
    /// Nodal estimate (the drift actually fed to the slow step).
    pub nodal: Vec<f64>,
    /// Per-node standard error across trajectories.
    pub stderr: Vec<f64>,
    pub t_burn: f64,
    pub t_avg: f64,
    pub n_traj: usize,
    pub excluded: usize,
    /// `‖B̄₁(x)‖ / (1 + ‖x‖^{m₁})`, sup-norms.
    pub growth_ratio: f64,
}

/// `B̄₁(x)` by time-and-ensemble averaging of the frozen fast process started at `y = 0`.
pub fn estimate_averaged_drift(
    model: &ModelSpec,
    x: &SpectralField,
    params: &AveragingParams,
    seed: u64,
) -> Result<AveragedDriftEstimate> {
    params.validate()?;
    let basis = model.basis();
    let m = basis.node_count();
    let mut base = vec![0.0; m];
    model.slow_reaction_nodal(x.nodal(), &vec![0.0; m], &mut base);
    let finish = |nodal: Vec<f64>, stderr: Vec<f64>, excluded: usize| -> Result<AveragedDriftEstimate> {
        let estimate = basis.project(&nodal)?;
        let growth_ratio = estimate.sup_norm() / (1.0 + x.sup_norm().powf(model.slow.m1));
        Ok(AveragedDriftEstimate {
            estimate,
            nodal,
            stderr,
            t_burn: params.t_burn,
            t_avg: params.t_avg,
            n_traj: params.n_traj,
            excluded,
            growth_ratio,
        })
    };
    if !model.slow.depends_on_y {
        return finish(base, vec![0.0; m], 0);
    }
    let cfg = params.frozen;
    let burn = cfg.steps(params.t_burn)?;
    let avg = cfg.steps(params.t_avg)?;
    let solver = cfg.solver();
    let zero = basis.zero();
    let runs: Vec<Result<Vec<f64>>> = (0..params.n_traj as u64)
        .into_par_iter()
        .map(|r| {
            let noise = frozen_noise(model, cfg.h, burn + avg, seed, r, 0)?;
            let mut acc = vec![0.0; m];
            let mut scratch = vec![0.0; m];
            frozen_run(model, &solver, x.nodal(), &zero, 0.0, burn + avg, &noise, |j, y| {
                if j >= burn {
                    model.slow_reaction_nodal(x.nodal(), y.nodal(), &mut scratch);
                    for ((a, v), b) in acc.iter_mut().zip(&scratch).zip(&base) {
                        *a += v - b;
                    }
                }
            })?;
            acc.iter_mut().for_each(|a| *a /= avg as f64);
            Ok(acc)
        })
        .collect();
    let mut good = Vec::with_capacity(runs.len());
    let mut excluded = 0;
    for r in runs {
        match r {
            Ok(v) => good.push(v),
            Err(Error::Divergence { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if excluded as f64 > MAX_EXCLUDED_FRACTION * params.n_traj as f64 || good.is_empty() {
        return Err(Error::Estimation(format!(
            "{excluded} of {} frozen trajectories diverged",
            params.n_traj
        )));
    }
    let mut nodal = Vec::with_capacity(m);
    let mut stderr = Vec::with_capacity(m);
    for (j, b) in base.iter().enumerate() {
        let col: Vec<f64> = good.iter().map(|g| g[j]).collect();
        let s = mean_se(&col);
        nodal.push(b + s.mean);
        stderr.push(s.se);
    }
    finish(nodal, stderr, excluded)
}

/// Source of the averaged drift for the averaged solver.
pub trait DriftProvider: Send + Sync {
    /// Nodal `B̄₁(x)`.
    fn drift_nodal(&self, x: &SpectralField) -> Result<Vec<f64>>;
}

/// A closed-form drift.
pub struct AnalyticDrift<F>(pub F);

impl<F> DriftProvider for AnalyticDrift<F>
where
    F: Fn(&SpectralField) -> Vec<f64> + Send + Sync,
{
    fn drift_nodal(&self, x: &SpectralField) -> Result<Vec<f64>> {
        Ok((self.0)(x))
    }
}

type CacheEntry = Arc<(SpectralField, AveragedDriftEstimate)>;

/// `B̄₁` estimated on demand, cached by the quantised slow field.
pub struct EstimatedDrift {
    model: Arc<ModelSpec>,
    params: AveragingParams,
    seed: u64,
    /// Coefficient quantum of the cache key; `0` keys on the exact bits.
    quantum: f64,
    /// Nearest-entry reuse radius (sup-norm); `0` disables reuse.
    rho_cache: f64,
    miss_budget: Option<usize>,
    misses: AtomicUsize,
    cache: RwLock<HashMap<Vec<i64>, CacheEntry>>,
}

impl EstimatedDrift {
    pub fn new(model: Arc<ModelSpec>, params: AveragingParams, seed: u64) -> Self {
        EstimatedDrift {
            model,
            params,
            seed,
            quantum: 0.0,
            rho_cache: 0.0,
            miss_budget: None,
            misses: AtomicUsize::new(0),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_cache(mut self, quantum: f64, rho_cache: f64) -> Self {
        self.quantum = quantum.max(0.0);
        self.rho_cache = rho_cache.max(0.0);
        self
    }

    pub fn with_miss_budget(mut self, budget: Option<usize>) -> Self {
        self.miss_budget = budget;
        self
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn cached(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    fn key(&self, x: &SpectralField) -> Vec<i64> {
        if self.quantum > 0.0 {
            x.coeffs().iter().map(|c| (c / self.quantum).round() as i64).collect()
        } else {
            x.coeffs().iter().map(|c| c.to_bits() as i64).collect()
        }
    }

    pub fn estimate(&self, x: &SpectralField) -> Result<Arc<(SpectralField, AveragedDriftEstimate)>> {
        let key = self.key(x);
        {
            let cache = self.cache.read().expect("cache lock");
            if let Some(e) = cache.get(&key) {
                return Ok(e.clone());
            }
            if self.rho_cache > 0.0 {
                let basis = self.model.basis();
                let near = cache
                    .values()
                    .map(|e| (basis.lincomb(1.0, &e.0, -1.0, x).sup_norm(), e))
                    .filter(|(d, _)| *d <= self.rho_cache)
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((_, e)) = near {
                    return Ok(e.clone());
                }
            }
        }
        let n = self.misses.fetch_add(1, Ordering::Relaxed) + 1;
        if let Some(b) = self.miss_budget {
            if n > b {
                return Err(Error::Estimation(format!(
                    "averaged-drift cache miss budget {b} exceeded ({} entries cached)",
                    self.cached()
                )));
            }
        }
        let bytes: Vec<u8> = key.iter().flat_map(|k| k.to_le_bytes()).collect();
        let seed = derive_seed(&[&self.seed.to_le_bytes(), &bytes]);
        let est = estimate_averaged_drift(&self.model, x, &self.params, seed)?;
        let entry = Arc::new((x.clone(), est));
        self.cache.write().expect("cache lock").insert(key, entry.clone());
        Ok(entry)
    }
}

impl DriftProvider for EstimatedDrift {
    fn drift_nodal(&self, x: &SpectralField) -> Result<Vec<f64>> {
        Ok(self.estimate(x)?.1.nodal.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub slow_fingerprint: String,
}

/// Averaged equation driven by `slow_noise`, stepped on the macro grid of `cfg`.
pub fn simulate_averaged(
    model: &ModelSpec,
    bbar: &dyn DriftProvider,
    cfg: &SolverConfig,
    x0: &SpectralField,
    slow_noise: &NoisePath,
) -> Result<AveragedTrajectory> {
    cfg.validate()?;
    let sampler = slow_noise.sampler();
    let mut hasher = NoiseHasher::default();
    let mut x = x0.clone();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    for k in 0..cfg.macro_steps() {
        let t = k as f64 * cfg.dt;
        let drift = bbar.drift_nodal(&x)?;
        let inc = sampler.step(k as u64);
        hasher.absorb(&inc);
        x = step_slow_with_drift(model, cfg, t, &x, &drift, &inc)?;
        if (k + 1).is_multiple_of(cfg.save_stride) {
            times.push((k + 1) as f64 * cfg.dt);
            states.push(x.clone());
        }
    }
    Ok(AveragedTrajectory {
        times,
        states,
        slow_fingerprint: hasher.finish(),
    })
}

/// `‖B̄₁(x₁) − B̄₁(x₂)‖ / ‖x₁ − x₂‖` (sup-norms), a local Lipschitz probe.
pub fn drift_lipschitz_ratio(
    basis: &BasisSpec,
    bbar: &dyn DriftProvider,
    x1: &SpectralField,
    x2: &SpectralField,
) -> Result<f64> {
    let d1 = bbar.drift_nodal(x1)?;
    let d2 = bbar.drift_nodal(x2)?;
    let num = d1.iter().zip(&d2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let den = basis.lincomb(1.0, x1, -1.0, x2).sup_norm();
    if den == 0.0 {
        return Err(Error::Domain("Lipschitz probe needs distinct fields".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, SlowFamily};

    fn small() -> ModelSpec {
        ModelParams {
            modes: 8,
            nodes: 16,
            ..ModelParams::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn frozen_runs_are_reproducible() {
        let m = small();
        let b = m.basis();
        let p = FrozenFastProblem::new(b.sample(|xi| xi.sin()).unwrap(), 0.0, b.zero()).unwrap();
        let cfg = FrozenConfig::default();
        let noise = frozen_noise(&m, cfg.h, 50, 4, 0, 0).unwrap();
        let a = simulate_frozen_fast(&m, &p, &cfg, 0.5, &noise).unwrap();
        let c = simulate_frozen_fast(&m, &p, &cfg, 0.5, &noise).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.states.len(), 51);
    }

    #[test]
    fn equal_starts_are_degenerate() {
        let m = small();
        let b = m.basis();
        let y = b.sample(|xi| xi).unwrap();
        let r = contraction_test(&m, &b.zero(), &y, &y, &FrozenConfig::default(), 0.2, 2, 1).unwrap();
        assert!(r.degenerate && r.rate.is_none());
        assert!(r.curve.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn y_independent_drift_is_exact() {
        let m = ModelParams {
            modes: 8,
            nodes: 16,
            slow: SlowFamily::FhnDecoupled,
            ..ModelParams::default()
        }
        .build()
        .unwrap();
        let b = m.basis();
        let x = b.sample(|xi| 1.5 * (3.0 * xi).sin()).unwrap();
        let params = AveragingParams {
            t_burn: 0.1,
            t_avg: 0.1,
            n_traj: 2,
            frozen: FrozenConfig::default(),
        };
        let e = estimate_averaged_drift(&m, &x, &params, 1).unwrap();
        let mut want = vec![0.0; b.node_count()];
        m.slow_reaction_nodal(x.nodal(), &vec![0.0; b.node_count()], &mut want);
        assert_eq!(e.nodal, want);
        assert!(e.stderr.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn constant_observable_is_degenerate() {
        let m = small();
        let b = m.basis();
        let setup = MixingSetup {
            observable: Observable::Constant(1.0),
            lags: vec![0.0, 0.1],
            replicas: 4,
            y_start: b.zero(),
            s: 0.0,
            reference_shift: 1.0,
        };
        let r = estimate_mixing_rate(&m, &b.zero(), &setup, &FrozenConfig::default(), 1).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn cache_hits_and_budget() {
        let m = Arc::new(small());
        let b = m.basis().clone();
        let params = AveragingParams {
            t_burn: 0.05,
            t_avg: 0.05,
            n_traj: 2,
            frozen: FrozenConfig::default(),
        };
        let p = EstimatedDrift::new(m, params, 3).with_miss_budget(Some(1));
        let x = b.sample(|xi| xi).unwrap();
        let a = p.drift_nodal(&x).unwrap();
        let c = p.drift_nodal(&x).unwrap();
        assert_eq!(a, c);
        assert_eq!(p.misses(), 1);
        let other = b.sample(|xi| 2.0 * xi).unwrap();
        assert!(matches!(p.drift_nodal(&other), Err(Error::Estimation(_))));
    }
}
