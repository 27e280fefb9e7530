//! Run configuration: a sectioned TOML document.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"          # optional; SPDE_OUT_DIR and --out override it
//! trajectory_layout = "modal" # states.csv rows of `simulate`: modal | nodal
//!
//! [model]                     # preset plus overrides of any model key
//! preset = "builtin"          # builtin | linear-fast | zero
//! modes = 32
//! slow = { family = "fhn" }
//!
//! [solver]                    # dt, h, alpha, eps, t_end, save_stride, cutoff, n_stop, fast_clock
//! [initial]                   # x0, y0: expressions in xi
//! [frozen]                    # h, alpha, save_stride of the frozen fast equation
//! [averaging]                 # t_burn, t_avg, n_traj, quantum, rho_cache, miss_budget
//! [sweep]                     # epsilons, paths, moments, t_end, kappa, micro_ratio, moment_audit
//! [khasminskii]               # deltas, p, paths
//! [mixing]                    # observable, lags, replicas, s, reference_shift, y_start, ...
//! [probe]                     # t, h, p, paths
//! [audit]                     # samples
//! ```
//!
//! Every section is optional and every key has a default; unknown keys are
//! rejected. Errors carry the line of the offending key.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::averaging::{AveragingParams, FrozenConfig, Observable};
use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::func::Args;
use crate::harness::{EstimatorSettings, SweepPlan};
use crate::integrator::{SolverConfig, TrajectoryLayout};
use crate::model::ModelParams;
use crate::spectral::{BasisSpec, SpectralField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub x0: String,
    pub y0: String,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            x0: "sin(pi*xi)".into(),
            y0: "0".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AveragingSection {
    /// Defaults to `10/δ̂_c` from the contraction test at `x0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_burn: Option<f64>,
    pub t_avg: f64,
    pub n_traj: usize,
    pub quantum: f64,
    pub rho_cache: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miss_budget: Option<usize>,
}

impl Default for AveragingSection {
    fn default() -> Self {
        AveragingSection {
            t_burn: None,
            t_avg: 1.0,
            n_traj: 4,
            quantum: 0.0,
            rho_cache: 0.0,
            miss_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub paths: usize,
    pub moments: Vec<f64>,
    pub t_end: f64,
    pub kappa: f64,
    pub micro_ratio: f64,
    pub moment_audit: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        let p = SweepPlan::default();
        SweepSection {
            epsilons: p.epsilons,
            paths: p.paths,
            moments: p.moments,
            t_end: p.t_end,
            kappa: p.kappa,
            micro_ratio: p.micro_ratio,
            moment_audit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KhasminskiiSection {
    /// Window lengths; empty means one window from the `δ_ε` rule at `solver.eps`.
    pub deltas: Vec<f64>,
    pub p: f64,
    pub paths: usize,
}

impl Default for KhasminskiiSection {
    fn default() -> Self {
        KhasminskiiSection {
            deltas: Vec::new(),
            p: 2.0,
            paths: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingSection {
    pub observable: Observable,
    pub lags: Vec<f64>,
    pub replicas: usize,
    /// Initial fast time of the mixing runs.
    pub s: f64,
    pub reference_shift: f64,
    pub y_start: String,
    pub contraction_horizon: f64,
    pub contraction_replicas: usize,
}

impl Default for MixingSection {
    fn default() -> Self {
        MixingSection {
            observable: Observable::FirstMode,
            lags: (0..=12).map(|i| i as f64 * 0.025).collect(),
            replicas: 128,
            s: 0.35,
            reference_shift: 2.0,
            y_start: "5*sin(pi*xi)".into(),
            contraction_horizon: 1.0,
            contraction_replicas: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub t: f64,
    pub h: Vec<f64>,
    pub p: f64,
    pub paths: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            t: 0.1,
            h: vec![0.08, 0.04, 0.02, 0.01],
            p: 2.0,
            paths: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub samples: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection { samples: 2000 }
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub trajectory_layout: TrajectoryLayout,
    pub model: ModelParams,
    pub solver: SolverConfig,
    pub initial: InitialSection,
    pub frozen: FrozenConfig,
    pub averaging: AveragingSection,
    pub sweep: SweepSection,
    pub khasminskii: KhasminskiiSection,
    pub mixing: MixingSection,
    pub probe: ProbeSection,
    pub audit: AuditSection,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    output_dir: Option<String>,
    trajectory_layout: TrajectoryLayout,
    model: toml::Table,
    solver: SolverConfig,
    initial: InitialSection,
    frozen: FrozenConfig,
    averaging: AveragingSection,
    sweep: SweepSection,
    khasminskii: KhasminskiiSection,
    mixing: MixingSection,
    probe: ProbeSection,
    audit: AuditSection,
}

/// One configuration problem, located when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

fn issues_error(issues: &[ConfigIssue]) -> Error {
    Error::Config(issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n"))
}

/// 1-based line of `key` inside `[section]` (or at top level for an empty section).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.starts_with('[') {
            current = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = l.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    if key.is_empty() {
        return text
            .lines()
            .position(|l| l.trim() == format!("[{section}]"))
            .map(|i| i + 1);
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn preset(name: &str) -> Option<ModelParams> {
    match name {
        "builtin" => Some(ModelParams::default()),
        "linear-fast" => Some(ModelParams::linear_fast_oracle()),
        "zero" => Some(ModelParams::all_zero()),
        _ => None,
    }
}

fn resolve_model(text: &str, mut table: toml::Table) -> std::result::Result<ModelParams, ConfigIssue> {
    let name = match table.remove("preset") {
        None => "builtin".to_string(),
        Some(toml::Value::String(s)) => s,
        Some(v) => {
            return Err(ConfigIssue {
                key: "model.preset".into(),
                line: locate(text, "model", "preset"),
                message: format!("expected a string, got {}", v.type_str()),
            })
        }
    };
    let base = preset(&name).ok_or_else(|| ConfigIssue {
        key: "model.preset".into(),
        line: locate(text, "model", "preset"),
        message: format!("unknown preset {name:?} (expected builtin, linear-fast or zero)"),
    })?;
    let mut merged = toml::Table::try_from(&base).expect("model parameters serialize");
    merged.extend(table);
    merged.try_into::<ModelParams>().map_err(|e| {
        let msg = e.message().to_string();
        let key = msg
            .split('`')
            .nth(1)
            .map(str::to_string)
            .filter(|k| locate(text, "model", k).is_some())
            .unwrap_or_default();
        ConfigIssue {
            line: locate(text, "model", &key),
            key: if key.is_empty() {
                "model".into()
            } else {
                format!("model.{key}")
            },
            message: msg,
        }
    })
}

fn parse_field(basis: &BasisSpec, source: &str) -> Result<SpectralField> {
    let e = Expr::parse(source)?;
    for v in [Var::T, Var::X, Var::Y, Var::Z] {
        if e.uses(v) {
            return Err(Error::Config(format!("initial field {source:?} may only use xi")));
        }
    }
    basis.sample(|xi| e.eval(&Args { xi, ..Args::default() }))
}

impl RunConfig {
    /// Parse and validate; every problem found is reported, one per line.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            let issue = ConfigIssue {
                key: "config".into(),
                line,
                message: e.message().to_string(),
            };
            issues_error(&[issue])
        })?;
        let model = resolve_model(text, raw.model).map_err(|i| issues_error(&[i]))?;
        let cfg = RunConfig {
            seed: raw.seed,
            output_dir: raw.output_dir,
            trajectory_layout: raw.trajectory_layout,
            model,
            solver: raw.solver,
            initial: raw.initial,
            frozen: raw.frozen,
            averaging: raw.averaging,
            sweep: raw.sweep,
            khasminskii: raw.khasminskii,
            mixing: raw.mixing,
            probe: raw.probe,
            audit: raw.audit,
        };
        let issues = cfg.check(text);
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(issues_error(&issues))
        }
    }

    /// Canonical text form; `parse(print(c)) == c`.
    pub fn print(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical text.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.print().as_bytes()))
    }

    fn check(&self, text: &str) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut push = |section: &str, key: &str, message: String| {
            out.push(ConfigIssue {
                key: if key.is_empty() {
                    section.to_string()
                } else {
                    format!("{section}.{key}")
                },
                line: locate(text, section, key),
                message,
            })
        };
        let model = match self.model.build() {
            Ok(m) => Some(m),
            Err(e) => {
                push("model", "", e.to_string());
                None
            }
        };
        let s = &self.solver;
        if !(s.eps > 0.0 && s.eps <= 1.0) {
            push("solver", "eps", format!("must lie in (0, 1], got {}", s.eps));
        } else if let Err(e) = s.validate() {
            push("solver", "", e.to_string());
        }
        if let Some(m) = &model {
            for (key, src) in [("x0", &self.initial.x0), ("y0", &self.initial.y0)] {
                if let Err(e) = parse_field(m.basis(), src) {
                    push("initial", key, e.to_string());
                }
            }
            if let Err(e) = parse_field(m.basis(), &self.mixing.y_start) {
                push("mixing", "y_start", e.to_string());
            }
        }
        if !(self.frozen.h > 0.0 && self.frozen.alpha >= 0.0 && self.frozen.save_stride >= 1) {
            push("frozen", "", "need h > 0, alpha >= 0 and save_stride >= 1".into());
        }
        let a = &self.averaging;
        if let Some(t) = a.t_burn {
            if !(t > 0.0) {
                push("averaging", "t_burn", format!("must be positive, got {t}"));
            }
        }
        if !(a.t_avg > 0.0) {
            push("averaging", "t_avg", format!("must be positive, got {}", a.t_avg));
        }
        if a.n_traj == 0 {
            push("averaging", "n_traj", "must be >= 1".into());
        }
        if !(a.quantum >= 0.0 && a.rho_cache >= 0.0) {
            push("averaging", "", "quantum and rho_cache must be nonnegative".into());
        }
        if let Err(Error::Config(msg)) = self.sweep_plan().validate() {
            let key = msg
                .split(':')
                .next()
                .and_then(|k| k.strip_prefix("sweep."))
                .unwrap_or("");
            push(
                "sweep",
                key,
                msg.split_once(": ").map_or(msg.clone(), |m| m.1.to_string()),
            );
        }
        let k = &self.khasminskii;
        if k.deltas.iter().any(|&d| !(d > 0.0)) {
            push("khasminskii", "deltas", "window lengths must be positive".into());
        }
        if k.paths < 2 || !(k.p > 0.0) {
            push("khasminskii", "", "need paths >= 2 and p > 0".into());
        }
        let mx = &self.mixing;
        if mx.replicas < 2 {
            push("mixing", "replicas", format!("need at least 2, got {}", mx.replicas));
        }
        if mx.lags.is_empty() || mx.lags[0] < 0.0 || mx.lags.windows(2).any(|w| w[1] <= w[0]) {
            push("mixing", "lags", "must be nonnegative and strictly increasing".into());
        }
        if !(mx.contraction_horizon > 0.0) || mx.contraction_replicas == 0 {
            push(
                "mixing",
                "",
                "need contraction_horizon > 0 and contraction_replicas >= 1".into(),
            );
        }
        if let Observable::SupNormClipped(c) = mx.observable {
            if !(c > 0.0) {
                push("mixing", "observable", format!("clip level must be positive, got {c}"));
            }
        }
        let p = &self.probe;
        if p.h.is_empty() || p.h.iter().any(|&h| h < 0.0) || p.h.windows(2).any(|w| w[1] >= w[0]) {
            push("probe", "h", "must be nonnegative and strictly decreasing".into());
        }
        if !(p.t >= 0.0) || !(p.p > 0.0) || p.paths < 2 {
            push("probe", "", "need t >= 0, p > 0 and paths >= 2".into());
        }
        if self.audit.samples == 0 {
            push("audit", "samples", "must be >= 1".into());
        }
        out
    }

    pub fn sweep_plan(&self) -> SweepPlan {
        let s = &self.sweep;
        SweepPlan {
            epsilons: s.epsilons.clone(),
            paths: s.paths,
            moments: s.moments.clone(),
            t_end: s.t_end,
            kappa: s.kappa,
            micro_ratio: s.micro_ratio,
            seed: self.seed,
        }
    }

    /// Estimator settings; `t_burn` is filled in by the caller when absent.
    pub fn estimator(&self, t_burn: f64) -> EstimatorSettings {
        let a = &self.averaging;
        EstimatorSettings {
            params: AveragingParams {
                t_burn: a.t_burn.unwrap_or(t_burn),
                t_avg: a.t_avg,
                n_traj: a.n_traj,
                frozen: self.frozen,
            },
            quantum: a.quantum,
            rho_cache: a.rho_cache,
            miss_budget: a.miss_budget,
        }
    }

    pub fn initial_fields(&self, basis: &BasisSpec) -> Result<(SpectralField, SpectralField)> {
        Ok((
            parse_field(basis, &self.initial.x0)?,
            parse_field(basis, &self.initial.y0)?,
        ))
    }

    pub fn mixing_start(&self, basis: &BasisSpec) -> Result<SpectralField> {
        parse_field(basis, &self.mixing.y_start)
    }
}
