//! Q-Wiener increments and compensated Poisson jumps.
//!
//! The Wiener process is diagonal in the eigenbasis,
//! `W^Q(t) = Σ_k λ_k e_k β_k(t)`, so one step draws one Gaussian per mode.
//! The Poisson random measure has finite activity: jump times form a
//! homogeneous Poisson process of rate `λ_ν · scale` (scale `1` for the slow
//! clock, `1/ε` for the fast one) and marks are i.i.d. from `ν/λ_ν`.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{ensure_same_len, Error, Result};
use crate::rng::{StreamFactory, StreamKey, StreamRole};

/// Eigenvalues `λ_k = c·k^{−q}` of the covariance square root `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QWienerSpec {
    pub scale: f64,
    pub decay: f64,
    /// `ρ ∈ (2, ∞]`; `f64::INFINITY` allowed.
    pub rho: f64,
    /// `β > 0`
    pub beta: f64,
}

impl QWienerSpec {
    pub fn new(scale: f64, decay: f64, rho: f64, beta: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "noise scale must be finite and >= 0, got {scale}"
            )));
        }
        if !(decay > 0.5) {
            return Err(Error::Config(format!(
                "noise decay exponent must exceed 1/2, got {decay}"
            )));
        }
        if !(rho > 2.0) {
            return Err(Error::Config(format!("rho must lie in (2, inf], got {rho}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(QWienerSpec {
            scale,
            decay,
            rho,
            beta,
        })
    }

    /// `λ_k = k^{-1}`, `ρ = 4`, `β = 1`.
    pub fn default_family() -> Self {
        QWienerSpec {
            scale: 1.0,
            decay: 1.0,
            rho: 4.0,
            beta: 1.0,
        }
    }

    pub fn scaled(scale: f64) -> Self {
        QWienerSpec {
            scale,
            ..Self::default_family()
        }
    }

    /// `λ_k` for the 1-based mode number `k`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.scale * (k as f64).powf(-self.decay)
    }

    pub fn lambdas(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|k| self.lambda(k)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
    }
}

/// Per-mode increments `ΔW_k ~ N(0, λ_k² dt)`; zeros when `dt == 0`.
pub fn sample_wiener_increments<R: Rng + ?Sized>(lambdas: &[f64], dt: f64, rng: &mut R) -> Vec<f64> {
    if dt <= 0.0 {
        return vec![0.0; lambdas.len()];
    }
    let sd = dt.sqrt();
    lambdas
        .iter()
        .map(|&l| {
            let z: f64 = rng.sample(StandardNormal);
            l * sd * z
        })
        .collect()
}

/// Mark distribution `ν/λ_ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkLaw {
    /// Uniform on `[−1, 1]`.
    Uniform,
    /// Standard normal.
    Normal,
}

impl MarkLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MarkLaw::Uniform => rng.random_range(-1.0..1.0),
            MarkLaw::Normal => rng.sample(StandardNormal),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            MarkLaw::Uniform => ((z + 1.0) / 2.0).clamp(0.0, 1.0),
            MarkLaw::Normal => 0.5 * erfc(-z / std::f64::consts::SQRT_2),
        }
    }

    /// `E Z`; both laws are symmetric.
    pub fn mean(&self) -> f64 {
        0.0
    }

    /// `E|Z|^p` in closed form.
    pub fn abs_moment(&self, p: f64) -> f64 {
        match self {
            MarkLaw::Uniform => 1.0 / (p + 1.0),
            MarkLaw::Normal => {
                // 2^{p/2} Γ((p+1)/2) / √π
                2f64.powf(p / 2.0) * gamma_fn((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
            }
        }
    }

    /// Quadrature rule `(z_i, w_i)` with `Σ w_i h(z_i) ≈ E h(Z)`.
    pub fn quadrature(&self) -> &'static [(f64, f64)] {
        static UNIFORM: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
        static NORMAL: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
        match self {
            MarkLaw::Uniform => {
                UNIFORM.get_or_init(|| gauss_legendre(24).into_iter().map(|(z, w)| (z, 0.5 * w)).collect())
            }
            MarkLaw::Normal => NORMAL.get_or_init(|| {
                let s = std::f64::consts::PI.sqrt();
                gauss_hermite(24)
                    .into_iter()
                    .map(|(x, w)| (std::f64::consts::SQRT_2 * x, w / s))
                    .collect()
            }),
        }
    }
}

/// Finite-activity Lévy measure `ν = λ_ν · law`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyMeasureSpec {
    pub intensity: f64,
    pub law: MarkLaw,
}

impl LevyMeasureSpec {
    pub fn new(intensity: f64, law: MarkLaw) -> Result<Self> {
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(Error::Config(format!(
                "jump intensity must be finite and >= 0, got {intensity}"
            )));
        }
        Ok(LevyMeasureSpec { intensity, law })
    }

    pub fn none() -> Self {
        LevyMeasureSpec {
            intensity: 0.0,
            law: MarkLaw::Uniform,
        }
    }

    /// `∫|z|^p ν(dz)` for `p ∈ {1, 2, 4}`.
    pub fn moment_table(&self) -> [(u32, f64); 3] {
        [1, 2, 4].map(|p| (p, self.intensity * self.law.abs_moment(p as f64)))
    }

    /// `∫ h(z) ν(dz)` by quadrature.
    pub fn integrate(&self, h: impl Fn(f64) -> f64) -> f64 {
        if self.intensity == 0.0 {
            return 0.0;
        }
        self.intensity * self.law.quadrature().iter().map(|&(z, w)| w * h(z)).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: f64,
}

/// Events on `[t0, t1)` with rate `λ_ν · intensity_scale`, sorted by time.
pub fn sample_jump_events<R: Rng + ?Sized>(
    levy: &LevyMeasureSpec,
    window: (f64, f64),
    intensity_scale: f64,
    rng: &mut R,
) -> Result<Vec<JumpEvent>> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::Domain(format!(
            "jump window must satisfy t1 > t0, got ({t0}, {t1})"
        )));
    }
    if !(intensity_scale > 0.0) {
        return Err(Error::Domain(format!(
            "intensity scale must be positive, got {intensity_scale}"
        )));
    }
    let mean = levy.intensity * (t1 - t0) * intensity_scale;
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let count = Poisson::new(mean)
        .map_err(|e| Error::Numeric(format!("poisson mean {mean}: {e}")))?
        .sample(rng) as usize;
    let mut times: Vec<f64> = (0..count).map(|_| rng.random_range(t0..t1)).collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(times
        .into_iter()
        .map(|time| JumpEvent {
            time,
            mark: levy.law.sample(rng),
        })
        .collect())
}

/// `Σ_j g(·, x, z_j) − dt·∫g(·, x, z)ν(dz)` in nodal form.
pub fn compensated_jump_increment(g_values: &[Vec<f64>], g_compensator: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = g_compensator.iter().map(|c| -dt * c).collect();
    for g in g_values {
        ensure_same_len(out.len(), g.len())?;
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    Ok(out)
}

/// One step of driving noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    /// Per-mode Wiener increments (coefficients of `ΔW^Q`).
    pub dw: Vec<f64>,
    pub events: Vec<JumpEvent>,
}

/// A reproducible noise realization on a fixed step grid.
///
/// Nothing is stored: step `k` is regenerated on demand from the stream
/// addresses, so two solvers holding equal `NoisePath`s see identical bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub seed: u64,
    pub path: u64,
    pub wiener_role: StreamRole,
    pub jump_role: StreamRole,
    pub sub: u64,
    pub t0: f64,
    pub dt: f64,
    pub steps: u64,
    /// Jump-rate multiplier: `1` on the slow clock, `1/ε` on the fast one.
    pub intensity_scale: f64,
    pub wiener: QWienerSpec,
    pub levy: LevyMeasureSpec,
    pub modes: usize,
}

impl NoisePath {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        seed: u64,
        path: u64,
        roles: (StreamRole, StreamRole),
        dt: f64,
        steps: u64,
        intensity_scale: f64,
        wiener: QWienerSpec,
        levy: LevyMeasureSpec,
        modes: usize,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("noise grid step must be positive, got {dt}")));
        }
        Ok(NoisePath {
            seed,
            path,
            wiener_role: roles.0,
            jump_role: roles.1,
            sub: 0,
            t0: 0.0,
            dt,
            steps,
            intensity_scale,
            wiener,
            levy,
            modes,
        })
    }

    pub fn with_sub(mut self, sub: u64) -> Self {
        self.sub = sub;
        self
    }

    pub fn starting_at(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn sampler(&self) -> NoiseSampler {
        NoiseSampler {
            wiener: StreamKey::new(self.seed, self.path, self.wiener_role)
                .with_sub(self.sub)
                .stream(),
            jumps: StreamKey::new(self.seed, self.path, self.jump_role)
                .with_sub(self.sub)
                .stream(),
            lambdas: self.wiener.lambdas(self.modes),
            path: self.clone(),
        }
    }

    /// Portable text record (metadata only; draws are regenerated).
    pub fn to_record(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_record(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad noise record: {e}")))
    }

    /// SHA-256 over every increment and event on the grid.
    pub fn fingerprint(&self) -> String {
        let s = self.sampler();
        let mut h = NoiseHasher::default();
        for k in 0..self.steps {
            h.absorb(&s.step(k));
        }
        h.finish()
    }
}

/// Step generator for a [`NoisePath`].
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    wiener: StreamFactory,
    jumps: StreamFactory,
    lambdas: Vec<f64>,
    path: NoisePath,
}

impl NoiseSampler {
    pub fn path(&self) -> &NoisePath {
        &self.path
    }

    pub fn step(&self, k: u64) -> NoiseIncrement {
        let dt = self.path.dt;
        let t = self.path.t0 + k as f64 * dt;
        let dw = if self.path.wiener.is_zero() {
            vec![0.0; self.lambdas.len()]
        } else {
            sample_wiener_increments(&self.lambdas, dt, &mut self.wiener.at(k))
        };
        let events = if self.path.levy.intensity == 0.0 {
            Vec::new()
        } else {
            sample_jump_events(
                &self.path.levy,
                (t, t + dt),
                self.path.intensity_scale,
                &mut self.jumps.at(k),
            )
            .expect("validated window")
        };
        NoiseIncrement { dw, events }
    }
}

/// Running SHA-256 over consumed noise, used to certify that two solvers
/// were driven by byte-identical increments.
#[derive(Default, Clone)]
pub struct NoiseHasher {
    h: Sha256,
}

impl NoiseHasher {
    pub fn absorb(&mut self, inc: &NoiseIncrement) {
        for v in &inc.dw {
            self.h.update(v.to_bits().to_le_bytes());
        }
        self.h.update((inc.events.len() as u64).to_le_bytes());
        for e in &inc.events {
            self.h.update(e.time.to_bits().to_le_bytes());
            self.h.update(e.mark.to_bits().to_le_bytes());
        }
    }

    pub fn finish(self) -> String {
        hex::encode(self.h.finalize())
    }
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 1..=m {
        let mut z = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut pp;
        loop {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i - 1] = -z;
        x[n - i] = z;
        w[i - 1] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - i] = w[i - 1];
    }
    x.into_iter().zip(w).collect()
}

/// Physicists' Gauss–Hermite rule (weight `e^{−x²}`).
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.into_iter().zip(w).collect()
}
