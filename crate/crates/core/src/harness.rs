//! Coupled Monte-Carlo experiments: the ε-sweep of `E sup_t ‖X^ε − X̄‖^p`,
//! log-log rate fits, the time-regularity probe, uniform moment audit and the
//! Khasminskii window trend.
//!
//! Every `(ε, path)` cell is an independent work item; results are reduced in
//! index order so reports are bit-for-bit reproducible for a given seed.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::averaging::{simulate_averaged, AveragedTrajectory, AveragingParams, DriftProvider, EstimatedDrift};
use crate::error::{Error, Result};
use crate::integrator::{simulate_coupled, simulate_khasminskii, slow_noise, CoupledNoise, SolverConfig, Trajectory};
use crate::model::ModelSpec;
use crate::rng::derive_seed;
use crate::spectral::SpectralField;
use crate::stats::{linear_fit, mean_se, LinearFit};

/// Largest tolerated share of excluded paths at any `ε`.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

/// `δ_ε = κ ε ln(1/ε)`, snapped down to a multiple of `dt` (at least `dt`).
pub fn delta_eps(kappa: f64, eps: f64, dt: f64) -> f64 {
    let raw = kappa * eps * (1.0 / eps).ln();
    ((raw / dt + 1e-9).floor().max(1.0)) * dt
}

/// Micro step resolving the fast scale: `h = Δt / ⌈Δt/(r·ε)⌉`.
pub fn micro_step(dt: f64, eps: f64, ratio: f64) -> f64 {
    dt / (dt / (ratio * eps) - 1e-9).ceil().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPlan {
    /// Strictly decreasing values in `(0, 1]`.
    pub epsilons: Vec<f64>,
    /// Coupled paths per `ε` (`M`).
    pub paths: usize,
    /// Moment orders `p`.
    pub moments: Vec<f64>,
    pub t_end: f64,
    /// `κ` of the `δ_ε` rule.
    pub kappa: f64,
    /// Fast steps per unit of fast time: `h/ε = ratio`.
    pub micro_ratio: f64,
    pub seed: u64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            paths: 32,
            moments: vec![2.0],
            t_end: 0.5,
            kappa: 0.25,
            micro_ratio: 0.01,
            seed: 0,
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("sweep.epsilons: empty list".into()));
        }
        for &e in &self.epsilons {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Config(format!("sweep.epsilons: {e} is outside (0, 1]")));
            }
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("sweep.epsilons: must be strictly decreasing".into()));
        }
        if self.paths < 2 {
            return Err(Error::Config(format!(
                "sweep.paths: need at least 2, got {}",
                self.paths
            )));
        }
        if self.moments.is_empty() || self.moments.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("sweep.moments: need positive moment orders".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Config(format!(
                "sweep.t_end: must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!(
                "sweep.kappa: must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.micro_ratio > 0.0 && self.micro_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "sweep.micro_ratio: must lie in (0, 1], got {}",
                self.micro_ratio
            )));
        }
        Ok(())
    }

    /// Solver configuration of one sweep point.
    pub fn solver_for(&self, base: &SolverConfig, eps: f64) -> SolverConfig {
        SolverConfig {
            eps,
            h: micro_step(base.dt, eps, self.micro_ratio),
            t_end: self.t_end,
            ..*base
        }
    }
}

/// Settings of the on-demand `B̄₁` estimator used inside the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorSettings {
    pub params: AveragingParams,
    pub quantum: f64,
    pub rho_cache: f64,
    pub miss_budget: Option<usize>,
}

/// How the averaged solver obtains `B̄₁`.
#[derive(Clone)]
pub enum DriftSource {
    /// One provider shared by all paths.
    Provider(Arc<dyn DriftProvider>),
    /// A fresh cached estimator per path.
    Estimated(EstimatorSettings),
}

impl DriftSource {
    fn for_path(&self, model: &Arc<ModelSpec>, seed: u64, path: u64) -> Arc<dyn DriftProvider> {
        match self {
            DriftSource::Provider(p) => p.clone(),
            DriftSource::Estimated(s) => {
                let seed = derive_seed(&[&seed.to_le_bytes(), &path.to_le_bytes(), b"averaged-drift"]);
                Arc::new(
                    EstimatedDrift::new(model.clone(), s.params, seed)
                        .with_cache(s.quantum, s.rho_cache)
                        .with_miss_budget(s.miss_budget),
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub p: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub paths: usize,
    pub excluded: usize,
    /// Retained paths that reached the stopping radius.
    pub hits: usize,
    pub delta_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub p: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Sweep points left out because their estimate was not positive.
    pub dropped: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub rows: Vec<SweepRow>,
    pub fits: Vec<RateFit>,
    /// `sup_t ‖X^ε − X̄‖` per `ε` and path; `None` for excluded paths.
    pub sup_errors: Vec<Vec<Option<f64>>>,
}

impl ErrorReport {
    pub fn rows_for(&self, p: f64) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.p == p).collect()
    }
}

fn sup_difference(model: &ModelSpec, full: &Trajectory, avg: &AveragedTrajectory) -> f64 {
    let basis = model.basis();
    full.states
        .iter()
        .zip(&avg.states)
        .map(|(s, x)| basis.lincomb(1.0, &s.x, -1.0, x).sup_norm())
        .fold(0.0, f64::max)
}

fn excluded_error(what: &str, eps: f64, excluded: usize, total: usize) -> Error {
    Error::Sweep(format!(
        "{what}: {excluded} of {total} paths excluded at epsilon = {eps} (limit {:.0}%)",
        MAX_EXCLUDED_FRACTION * 100.0
    ))
}

fn moments_of(values: &[f64], p: f64) -> (f64, f64) {
    let m = mean_se(&values.iter().map(|v| v.powf(p)).collect::<Vec<_>>());
    (m.mean, m.se)
}

/// Coupled estimate of `E sup_t ‖X^ε − X̄‖^p` for every `ε` and `p` in the plan.
///
/// `X̄` is simulated once per path and compared with `X^ε` at every `ε`; the
/// slow noise fingerprints of each pair must agree.
pub fn run_epsilon_sweep(
    model: &ModelSpec,
    plan: &SweepPlan,
    base: &SolverConfig,
    x0: &SpectralField,
    y0: &SpectralField,
    drift: &DriftSource,
) -> Result<ErrorReport> {
    plan.validate()?;
    let avg_cfg = SolverConfig {
        t_end: plan.t_end,
        ..*base
    };
    avg_cfg.validate()?;
    let shared = Arc::new(model.clone());
    let averaged: Vec<Option<AveragedTrajectory>> = (0..plan.paths as u64)
        .into_par_iter()
        .map(|m| {
            let noise = slow_noise(model, &avg_cfg, plan.seed, m)?;
            let provider = drift.for_path(&shared, plan.seed, m);
            match simulate_averaged(model, provider.as_ref(), &avg_cfg, x0, &noise) {
                Ok(t) => Ok(Some(t)),
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let cfgs: Vec<SolverConfig> = plan.epsilons.iter().map(|&e| plan.solver_for(base, e)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let cells: Vec<(usize, usize)> = (0..cfgs.len())
        .flat_map(|i| (0..plan.paths).map(move |m| (i, m)))
        .collect();
    let results: Vec<Option<(f64, bool)>> = cells
        .par_iter()
        .map(|&(i, m)| {
            let Some(avg) = &averaged[m] else { return Ok(None) };
            let cfg = &cfgs[i];
            let noise = CoupledNoise::new(model, cfg, plan.seed, m as u64)?;
            match simulate_coupled(model, cfg, x0, y0, &noise) {
                Ok(full) => {
                    if full.slow_fingerprint != avg.slow_fingerprint {
                        return Err(Error::Sweep(format!(
                            "slow noise of path {m} differs between X^eps and X-bar at epsilon = {}",
                            cfg.eps
                        )));
                    }
                    Ok(Some((sup_difference(model, &full, avg), full.hit.is_some())))
                }
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut sup_errors = Vec::new();
    for (i, &eps) in plan.epsilons.iter().enumerate() {
        let cell = &results[i * plan.paths..(i + 1) * plan.paths];
        let kept: Vec<f64> = cell.iter().flatten().map(|c| c.0).collect();
        let excluded = plan.paths - kept.len();
        if excluded as f64 > MAX_EXCLUDED_FRACTION * plan.paths as f64 {
            return Err(excluded_error("epsilon sweep", eps, excluded, plan.paths));
        }
        let hits = cell.iter().flatten().filter(|c| c.1).count();
        for &p in &plan.moments {
            let (estimate, stderr) = moments_of(&kept, p);
            rows.push(SweepRow {
                epsilon: eps,
                p,
                estimate,
                stderr,
                paths: plan.paths,
                excluded,
                hits,
                delta_eps: delta_eps(plan.kappa, eps, base.dt),
            });
        }
        sup_errors.push(cell.iter().map(|c| c.map(|c| c.0)).collect());
    }
    let mut report = ErrorReport {
        rows,
        fits: Vec::new(),
        sup_errors,
    };
    report.fits = plan
        .moments
        .iter()
        .filter_map(|&p| fit_convergence_rate(&report, p))
        .collect();
    Ok(report)
}

/// Least-squares line through `(ln ε, ln error)` for moment `p`; points with
/// nonpositive error are dropped and listed. `None` with fewer than two usable points.
pub fn fit_convergence_rate(report: &ErrorReport, p: f64) -> Option<RateFit> {
    let rows = report.rows_for(p);
    let mut dropped = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in rows {
        if r.estimate > 0.0 && r.estimate.is_finite() {
            xs.push(r.epsilon.ln());
            ys.push(r.estimate.ln());
        } else {
            dropped.push(r.epsilon);
        }
    }
    let LinearFit {
        slope,
        intercept,
        r_squared,
        ..
    } = linear_fit(&xs, &ys)?;
    Some(RateFit {
        p,
        slope,
        intercept,
        r_squared,
        dropped,
    })
}

/// `values[i+1] < values[i] + tol·√(se[i]² + se[i+1]²)` for all consecutive pairs.
pub fn decreasing_within(values: &[f64], stderr: &[f64], tol: f64) -> bool {
    values
        .windows(2)
        .zip(stderr.windows(2))
        .all(|(v, s)| v[1] < v[0] + tol * (s[0] * s[0] + s[1] * s[1]).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub h: f64,
    pub p: f64,
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub t: f64,
    pub rows: Vec<ProbeRow>,
    /// Fitted time-Hölder exponent: log-log slope divided by `p`.
    pub exponent: Option<f64>,
    pub r_squared: Option<f64>,
    pub excluded: usize,
}

fn grid_index(t: f64, dt: f64, what: &str) -> Result<usize> {
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * dt.max(t) {
        return Err(Error::Config(format!("{what} = {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}

/// Monte-Carlo `E‖X(t+h) − X(t)‖^p` (sup-norm) over the `h` grid, and the fitted exponent.
#[allow(clippy::too_many_arguments)]
pub fn regularity_probe(
    model: &ModelSpec,
    cfg: &SolverConfig,
    x0: &SpectralField,
    y0: &SpectralField,
    t: f64,
    hs: &[f64],
    p: f64,
    paths: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if hs.is_empty() || hs.windows(2).any(|w| w[1] >= w[0]) || hs.iter().any(|&h| h < 0.0) {
        return Err(Error::Config(
            "probe.h: must be nonnegative and strictly decreasing".into(),
        ));
    }
    if paths < 2 || !(p > 0.0) {
        return Err(Error::Config("probe: need at least 2 paths and p > 0".into()));
    }
    let k0 = grid_index(t, cfg.dt, "probe.t")?;
    let ks: Vec<usize> = hs
        .iter()
        .map(|&h| grid_index(h, cfg.dt, "probe.h"))
        .collect::<Result<_>>()?;
    let run = SolverConfig {
        t_end: (k0 + ks[0]) as f64 * cfg.dt,
        save_stride: 1,
        ..*cfg
    };
    run.validate()?;
    let incs: Vec<Option<Vec<f64>>> = (0..paths as u64)
        .into_par_iter()
        .map(|m| {
            let noise = CoupledNoise::new(model, &run, seed, m)?;
            match simulate_coupled(model, &run, x0, y0, &noise) {
                Ok(tr) => {
                    let base = &tr.states[k0].x;
                    Ok(Some(
                        ks.iter()
                            .map(|&k| model.basis().lincomb(1.0, &tr.states[k0 + k].x, -1.0, base).sup_norm())
                            .collect(),
                    ))
                }
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let kept: Vec<&Vec<f64>> = incs.iter().flatten().collect();
    let excluded = paths - kept.len();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * paths as f64 {
        return Err(excluded_error("regularity probe", cfg.eps, excluded, paths));
    }
    let mut rows = Vec::new();
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (j, &h) in hs.iter().enumerate() {
        let col: Vec<f64> = kept.iter().map(|v| v[j]).collect();
        let (estimate, stderr) = moments_of(&col, p);
        if h > 0.0 && estimate > 0.0 {
            lx.push(h.ln());
            ly.push(estimate.ln());
        }
        rows.push(ProbeRow { h, p, estimate, stderr });
    }
    let fit = linear_fit(&lx, &ly);
    Ok(ProbeReport {
        t,
        rows,
        exponent: fit.map(|f| f.slope / p),
        r_squared: fit.map(|f| f.r_squared),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub epsilon: f64,
    pub p: f64,
    /// `sup_t Ê‖X^ε(t)‖^p` over the save grid.
    pub slow_moment: f64,
    /// `∫₀ᵀ Ê‖Y^ε(t)‖^p dt`, left Riemann sum on the save grid.
    pub fast_moment: f64,
    /// Set on every row of a `p` whose moments are not uniform in `ε`.
    pub flag: bool,
}

/// Empirical uniform-in-`ε` moments; a `p` is flagged when the largest moment
/// over `ε` exceeds three times the smallest (slow or fast).
pub fn moment_audit(
    model: &ModelSpec,
    plan: &SweepPlan,
    base: &SolverConfig,
    x0: &SpectralField,
    y0: &SpectralField,
) -> Result<Vec<MomentRow>> {
    plan.validate()?;
    let mut rows = Vec::new();
    for &eps in &plan.epsilons {
        let cfg = plan.solver_for(base, eps);
        cfg.validate()?;
        let runs: Vec<Option<Trajectory>> = (0..plan.paths as u64)
            .into_par_iter()
            .map(|m| {
                let noise = CoupledNoise::new(model, &cfg, plan.seed, m)?;
                match simulate_coupled(model, &cfg, x0, y0, &noise) {
                    Ok(t) => Ok(Some(t)),
                    Err(Error::Divergence { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let kept: Vec<&Trajectory> = runs.iter().flatten().collect();
        let excluded = plan.paths - kept.len();
        if excluded as f64 > MAX_EXCLUDED_FRACTION * plan.paths as f64 {
            return Err(excluded_error("moment audit", eps, excluded, plan.paths));
        }
        let n_save = kept[0].states.len();
        let step = cfg.dt * cfg.save_stride as f64;
        for &p in &plan.moments {
            let mut slow: f64 = 0.0;
            let mut fast = 0.0;
            for i in 0..n_save {
                let xs: Vec<f64> = kept.iter().map(|t| t.states[i].x.sup_norm()).collect();
                let ys: Vec<f64> = kept.iter().map(|t| t.states[i].y.sup_norm()).collect();
                slow = slow.max(moments_of(&xs, p).0);
                if i + 1 < n_save {
                    fast += step * moments_of(&ys, p).0;
                }
            }
            rows.push(MomentRow {
                epsilon: eps,
                p,
                slow_moment: slow,
                fast_moment: fast,
                flag: false,
            });
        }
    }
    for &p in &plan.moments {
        let nonuniform = |vals: Vec<f64>| {
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            max > 3.0 * min
        };
        let slow = rows.iter().filter(|r| r.p == p).map(|r| r.slow_moment).collect();
        let fast = rows.iter().filter(|r| r.p == p).map(|r| r.fast_moment).collect();
        let flag = nonuniform(slow) || nonuniform(fast);
        rows.iter_mut().filter(|r| r.p == p).for_each(|r| r.flag = flag);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KhasminskiiRow {
    pub delta: f64,
    pub p: f64,
    /// `Ê sup_t ‖Ŷ − Y‖^p` over macro step ends.
    pub estimate: f64,
    pub stderr: f64,
    pub excluded: usize,
}

/// Gap between the fast process and its frozen-window auxiliary, per window length.
#[allow(clippy::too_many_arguments)]
pub fn khasminskii_trend(
    model: &ModelSpec,
    cfg: &SolverConfig,
    x0: &SpectralField,
    y0: &SpectralField,
    deltas: &[f64],
    p: f64,
    paths: usize,
    seed: u64,
) -> Result<Vec<KhasminskiiRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &delta in deltas {
        let gaps: Vec<Option<f64>> = (0..paths as u64)
            .into_par_iter()
            .map(|m| {
                let noise = CoupledNoise::new(model, cfg, seed, m)?;
                match simulate_khasminskii(model, cfg, x0, y0, delta, &noise) {
                    Ok(k) => Ok(Some(k.sup_gap())),
                    Err(Error::Divergence { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let kept: Vec<f64> = gaps.into_iter().flatten().collect();
        let excluded = paths - kept.len();
        if excluded as f64 > MAX_EXCLUDED_FRACTION * paths as f64 {
            return Err(excluded_error("khasminskii trend", cfg.eps, excluded, paths));
        }
        let (estimate, stderr) = moments_of(&kept, p);
        rows.push(KhasminskiiRow {
            delta,
            p,
            estimate,
            stderr,
            excluded,
        });
    }
    Ok(rows)
}
