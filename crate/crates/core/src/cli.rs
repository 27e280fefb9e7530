//! Command dispatch and artifact writing for the `spde` binary.
//!
//! Each command reads a [`RunConfig`], writes its CSV tables (and SVG plots)
//! into the output directory, and always finishes with `manifest.json`
//! recording the seed, config hash, files and outcome. Exit status: 0 on
//! success, 1 on usage or configuration errors, 2 on numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::audit::audit_assumptions;
use crate::averaging::{
    contraction_test, estimate_averaged_drift, estimate_mixing_rate, simulate_averaged, EstimatedDrift, MixingSetup,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::{delta_eps, khasminskii_trend, moment_audit, regularity_probe, run_epsilon_sweep, DriftSource};
use crate::integrator::{simulate_coupled, slow_noise, CoupledNoise};
use crate::model::ModelSpec;
use crate::plot::{line_plot, Scale, Series};
use crate::spectral::SpectralField;

/// Environment variable overriding the configured output directory.
pub const OUT_DIR_ENV: &str = "SPDE_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Average,
    Sweep,
    Mixing,
    Audit,
    Probe,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::Average,
        Command::Sweep,
        Command::Mixing,
        Command::Audit,
        Command::Probe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Average => "average",
            Command::Sweep => "sweep",
            Command::Mixing => "mixing",
            Command::Audit => "audit",
            Command::Probe => "probe",
        }
    }
}

/// Files and headline numbers produced by one command.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<String>,
    pub summary: BTreeMap<String, Value>,
}

struct Writer<'a> {
    dir: &'a Path,
    out: Artifacts,
}

impl Writer<'_> {
    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.out.files.push(name.into());
        Ok(())
    }

    fn svg(&mut self, name: &str, body: String) -> Result<()> {
        std::fs::write(self.dir.join(name), body)?;
        self.out.files.push(name.into());
        Ok(())
    }

    fn note(&mut self, key: &str, v: impl Serialize) {
        self.out
            .summary
            .insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }
}

fn burn_in(cfg: &RunConfig, model: &ModelSpec, x: &SpectralField, w: &mut Writer) -> Result<f64> {
    if let Some(t) = cfg.averaging.t_burn {
        return Ok(t);
    }
    let b = model.basis();
    let y1 = b.sample(|xi| 2.0 * (std::f64::consts::PI * xi).sin())?;
    let y2 = b.lincomb(-1.0, &y1, 0.0, &y1);
    let rep = contraction_test(
        model,
        x,
        &y1,
        &y2,
        &cfg.frozen,
        cfg.mixing.contraction_horizon,
        cfg.mixing.contraction_replicas,
        cfg.seed,
    )?;
    w.note("contraction_rate", rep.rate);
    match rep.rate {
        Some(r) if r > 0.0 => Ok(10.0 / r),
        _ => Err(Error::Estimation(
            "contraction rate is not positive; set averaging.t_burn".into(),
        )),
    }
}

#[derive(Serialize)]
struct TrajRow {
    t: f64,
    x_sup: f64,
    x_l2: f64,
    y_sup: f64,
    y_l2: f64,
    hit: bool,
}

#[derive(Serialize)]
struct FieldRow {
    node: usize,
    xi: f64,
    x0: f64,
    x_final: f64,
    y_final: f64,
}

fn simulate(cfg: &RunConfig, model: &ModelSpec, w: &mut Writer) -> Result<()> {
    let (x0, y0) = cfg.initial_fields(model.basis())?;
    let noise = CoupledNoise::new(model, &cfg.solver, cfg.seed, 0)?;
    let tr = simulate_coupled(model, &cfg.solver, &x0, &y0, &noise)?;
    let rows: Vec<TrajRow> = tr
        .states
        .iter()
        .map(|s| TrajRow {
            t: s.t,
            x_sup: s.x.sup_norm(),
            x_l2: s.x.l2_norm(),
            y_sup: s.y.sup_norm(),
            y_l2: s.y.l2_norm(),
            hit: s.hit_flag(),
        })
        .collect();
    w.csv("trajectory.csv", &rows)?;
    let last = tr.last();
    let fields: Vec<FieldRow> = model
        .basis()
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &xi)| FieldRow {
            node: j,
            xi,
            x0: x0.nodal()[j],
            x_final: last.x.nodal()[j],
            y_final: last.y.nodal()[j],
        })
        .collect();
    w.csv("fields.csv", &fields)?;
    let file = std::io::BufWriter::new(std::fs::File::create(w.dir.join("states.csv"))?);
    tr.write_csv(model.basis(), cfg.trajectory_layout, file)?;
    w.out.files.push("states.csv".into());
    let svg = line_plot(
        &format!("coupled path, eps = {}", cfg.solver.eps),
        "t",
        "sup-norm",
        &[
            Series {
                name: "|X|",
                points: rows.iter().map(|r| (r.t, r.x_sup)).collect(),
            },
            Series {
                name: "|Y|",
                points: rows.iter().map(|r| (r.t, r.y_sup)).collect(),
            },
        ],
        Scale::Linear,
        Scale::Linear,
    );
    w.svg("trajectory.svg", svg)?;
    w.note("slow_fingerprint", &tr.slow_fingerprint);
    w.note("hit_time", tr.hit);
    Ok(())
}

#[derive(Serialize)]
struct DriftRow {
    node: usize,
    xi: f64,
    value: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct AvgRow {
    t: f64,
    x_sup: f64,
    x_l2: f64,
}

fn average(cfg: &RunConfig, model: &ModelSpec, w: &mut Writer) -> Result<()> {
    let (x0, _) = cfg.initial_fields(model.basis())?;
    let t_burn = burn_in(cfg, model, &x0, w)?;
    let settings = cfg.estimator(t_burn);
    let est = estimate_averaged_drift(model, &x0, &settings.params, cfg.seed)?;
    let rows: Vec<DriftRow> = model
        .basis()
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &xi)| DriftRow {
            node: j,
            xi,
            value: est.nodal[j],
            stderr: est.stderr[j],
        })
        .collect();
    w.csv("averaged_drift.csv", &rows)?;
    let provider = EstimatedDrift::new(Arc::new(model.clone()), settings.params, cfg.seed)
        .with_cache(settings.quantum, settings.rho_cache)
        .with_miss_budget(settings.miss_budget);
    let noise = slow_noise(model, &cfg.solver, cfg.seed, 0)?;
    let tr = simulate_averaged(model, &provider, &cfg.solver, &x0, &noise)?;
    let traj: Vec<AvgRow> = tr
        .times
        .iter()
        .zip(&tr.states)
        .map(|(&t, x)| AvgRow {
            t,
            x_sup: x.sup_norm(),
            x_l2: x.l2_norm(),
        })
        .collect();
    w.csv("averaged.csv", &traj)?;
    let svg = line_plot(
        "averaged drift at x0",
        "xi",
        "B-bar",
        &[Series {
            name: "estimate",
            points: rows.iter().map(|r| (r.xi, r.value)).collect(),
        }],
        Scale::Linear,
        Scale::Linear,
    );
    w.svg("averaged_drift.svg", svg)?;
    w.note("t_burn", t_burn);
    w.note("excluded", est.excluded);
    w.note("growth_ratio", est.growth_ratio);
    w.note("cache_misses", provider.misses());
    Ok(())
}

#[derive(Serialize)]
struct SweepCsv {
    epsilon: f64,
    p: f64,
    estimate: f64,
    stderr: f64,
    #[serde(rename = "M")]
    m: usize,
    excluded: usize,
}

fn sweep(cfg: &RunConfig, model: &ModelSpec, w: &mut Writer) -> Result<()> {
    let (x0, y0) = cfg.initial_fields(model.basis())?;
    let plan = cfg.sweep_plan();
    let t_burn = burn_in(cfg, model, &x0, w)?;
    let source = DriftSource::Estimated(cfg.estimator(t_burn));
    let rep = run_epsilon_sweep(model, &plan, &cfg.solver, &x0, &y0, &source)?;
    let rows: Vec<SweepCsv> = rep
        .rows
        .iter()
        .map(|r| SweepCsv {
            epsilon: r.epsilon,
            p: r.p,
            estimate: r.estimate,
            stderr: r.stderr,
            m: r.paths,
            excluded: r.excluded,
        })
        .collect();
    w.csv("sweep.csv", &rows)?;
    let names: Vec<String> = plan.moments.iter().map(|p| format!("p = {p}")).collect();
    let series: Vec<Series> = plan
        .moments
        .iter()
        .zip(&names)
        .map(|(&p, name)| Series {
            name,
            points: rep.rows_for(p).iter().map(|r| (r.epsilon, r.estimate)).collect(),
        })
        .collect();
    w.svg(
        "sweep.svg",
        line_plot(
            "strong error vs epsilon",
            "epsilon",
            "E sup |X^eps - X-bar|^p",
            &series,
            Scale::Log,
            Scale::Log,
        ),
    )?;
    w.note("fits", &rep.fits);
    w.note("hits", rep.rows.iter().map(|r| r.hits).collect::<Vec<_>>());
    w.note("t_burn", t_burn);
    if cfg.sweep.moment_audit {
        let rows = moment_audit(model, &plan, &cfg.solver, &x0, &y0)?;
        w.note("moment_flag", rows.iter().any(|r| r.flag));
        w.csv("moment_audit.csv", &rows)?;
    }
    let k = &cfg.khasminskii;
    if !k.deltas.is_empty() {
        let rows = khasminskii_trend(model, &cfg.solver, &x0, &y0, &k.deltas, k.p, k.paths, cfg.seed)?;
        w.csv("khasminskii.csv", &rows)?;
    } else {
        w.note("delta_eps", delta_eps(plan.kappa, cfg.solver.eps, cfg.solver.dt));
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    t: f64,
    distance: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct MixRow {
    lag: f64,
    envelope: f64,
    stderr: f64,
}

fn mixing(cfg: &RunConfig, model: &ModelSpec, w: &mut Writer) -> Result<()> {
    let b = model.basis();
    let (x0, _) = cfg.initial_fields(b)?;
    let y1 = b.sample(|xi| 2.0 * (std::f64::consts::PI * xi).sin())?;
    let y2 = b.lincomb(-1.0, &y1, 0.0, &y1);
    let m = &cfg.mixing;
    let c = contraction_test(
        model,
        &x0,
        &y1,
        &y2,
        &cfg.frozen,
        m.contraction_horizon,
        m.contraction_replicas,
        cfg.seed,
    )?;
    let rows: Vec<CurveRow> = c
        .times
        .iter()
        .zip(c.curve.iter().zip(&c.stderr))
        .map(|(&t, (&distance, &stderr))| CurveRow { t, distance, stderr })
        .collect();
    w.csv("contraction.csv", &rows)?;
    let setup = MixingSetup {
        observable: m.observable,
        lags: m.lags.clone(),
        replicas: m.replicas,
        y_start: cfg.mixing_start(b)?,
        s: m.s,
        reference_shift: m.reference_shift,
    };
    let mix = estimate_mixing_rate(model, &x0, &setup, &cfg.frozen, cfg.seed)?;
    let mrows: Vec<MixRow> = mix
        .lags
        .iter()
        .zip(mix.envelope.iter().zip(&mix.stderr))
        .map(|(&lag, (&envelope, &stderr))| MixRow { lag, envelope, stderr })
        .collect();
    w.csv("mixing.csv", &mrows)?;
    w.svg(
        "contraction.svg",
        line_plot(
            "synchronous coupling",
            "t",
            "E |Y1 - Y2|",
            &[Series {
                name: "distance",
                points: rows.iter().map(|r| (r.t, r.distance)).collect(),
            }],
            Scale::Linear,
            Scale::Log,
        ),
    )?;
    w.svg(
        "mixing.svg",
        line_plot(
            "mixing envelope",
            "lag",
            &mix.observable,
            &[Series {
                name: "envelope",
                points: mrows.iter().map(|r| (r.lag, r.envelope)).collect(),
            }],
            Scale::Linear,
            Scale::Log,
        ),
    )?;
    w.note("contraction_rate", c.rate);
    w.note("contraction_r_squared", c.r_squared);
    w.note("mixing_rate", mix.rate);
    w.note("mixing_r_squared", mix.r_squared);
    w.note("mixing_degenerate", mix.degenerate);
    Ok(())
}

fn audit(cfg: &RunConfig, model: &ModelSpec, w: &mut Writer) -> Result<()> {
    let rep = audit_assumptions(model, cfg.audit.samples, cfg.seed);
    w.csv("audit.csv", &rep.checks)?;
    w.note("all_passed", rep.all_passed());
    w.note("failures", rep.failures().map(|c| c.id.clone()).collect::<Vec<_>>());
    Ok(())
}

fn probe(cfg: &RunConfig, model: &ModelSpec, w: &mut Writer) -> Result<()> {
    let (x0, y0) = cfg.initial_fields(model.basis())?;
    let p = &cfg.probe;
    let rep = regularity_probe(model, &cfg.solver, &x0, &y0, p.t, &p.h, p.p, p.paths, cfg.seed)?;
    w.csv("probe.csv", &rep.rows)?;
    w.svg(
        "probe.svg",
        line_plot(
            "time regularity",
            "h",
            "E |X(t+h) - X(t)|^p",
            &[Series {
                name: "increment moment",
                points: rep.rows.iter().map(|r| (r.h, r.estimate)).collect(),
            }],
            Scale::Log,
            Scale::Log,
        ),
    )?;
    w.note("exponent", rep.exponent);
    w.note("r_squared", rep.r_squared);
    w.note("excluded", rep.excluded);
    Ok(())
}

/// Run one command against a validated configuration, writing into `dir`.
pub fn execute(cmd: Command, cfg: &RunConfig, dir: &Path) -> (Artifacts, Result<()>) {
    let mut w = Writer {
        dir,
        out: Artifacts::default(),
    };
    let res = cfg.model.build().and_then(|model| match cmd {
        Command::Simulate => simulate(cfg, &model, &mut w),
        Command::Average => average(cfg, &model, &mut w),
        Command::Sweep => sweep(cfg, &model, &mut w),
        Command::Mixing => mixing(cfg, &model, &mut w),
        Command::Audit => audit(cfg, &model, &mut w),
        Command::Probe => probe(cfg, &model, &mut w),
    });
    (w.out, res)
}

/// Exit status for an error: 1 for usage/configuration/I-O, 2 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) => 1,
        _ => 2,
    }
}

/// `--out`, then `SPDE_OUT_DIR`, then `output_dir` from the config, then `spde-out`.
pub fn output_dir(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(v) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(v);
    }
    cfg.and_then(|c| c.output_dir.clone())
        .map_or_else(|| PathBuf::from("spde-out"), PathBuf::from)
}

fn write_manifest(dir: &Path, cmd: Command, cfg: Option<&RunConfig>, art: &Artifacts, err: Option<&Error>, code: i32) {
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": cmd.name(),
        "seed": cfg.map(|c| c.seed),
        "model": cfg.map(|c| c.model.name.clone()),
        "config_hash": cfg.map(|c| c.fingerprint()),
        "status": if err.is_none() { "ok" } else { "error" },
        "exit_code": code,
        "error": err.map(|e| e.to_string()),
        "files": art.files,
        "summary": art.summary,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = std::fs::write(dir.join("manifest.json"), text + "\n") {
        eprintln!("spde: cannot write manifest: {e}");
    }
}

/// Full command: read and validate the config, apply the seed override,
/// run, write the manifest. Returns the process exit status.
pub fn run_command(cmd: Command, config: &Path, seed: Option<u64>, out: Option<&Path>) -> i32 {
    let parsed = std::fs::read_to_string(config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))
        .and_then(|t| RunConfig::parse(&t));
    let cfg = parsed.as_ref().ok().cloned().map(|mut c| {
        if let Some(s) = seed {
            c.seed = s;
        }
        c
    });
    let dir = output_dir(out, cfg.as_ref());
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("spde: cannot create {}: {e}", dir.display());
        return 1;
    }
    let (art, res) = match (&cfg, parsed) {
        (Some(c), _) => execute(cmd, c, &dir),
        (None, Err(e)) => (Artifacts::default(), Err(e)),
        (None, Ok(_)) => unreachable!("parsed config is always kept"),
    };
    let code = res.as_ref().map_or_else(exit_code, |_| 0);
    if let Err(e) = &res {
        eprintln!("spde {}: {e}", cmd.name());
    }
    write_manifest(&dir, cmd, cfg.as_ref(), &art, res.as_ref().err(), code);
    code
}
