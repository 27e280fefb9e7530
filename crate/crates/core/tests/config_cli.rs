use std::path::{Path, PathBuf};

use proptest::prelude::*;
use spde_averaging::cli::{run_command, Command};
use spde_averaging::config::RunConfig;
use spde_averaging::integrator::TrajectoryLayout;

const GOLDEN_FINGERPRINT: &str = "563a3693adbc5a6b3cdb8274cf295588a025d04d51ad696d7a26f931827d6551";

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn golden() -> PathBuf {
    configs().join("golden.toml")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn golden_config_fingerprint_is_stable() {
    let c = RunConfig::parse(&std::fs::read_to_string(golden()).unwrap()).unwrap();
    assert_eq!(c.fingerprint(), GOLDEN_FINGERPRINT);
    assert_eq!(RunConfig::parse(&c.print()).unwrap().fingerprint(), GOLDEN_FINGERPRINT);
}

#[test]
fn shipped_configs_parse() {
    for name in ["golden.toml", "builtin.toml"] {
        RunConfig::parse(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap();
    }
}

#[test]
fn minimal_config_fills_defaults() {
    let c = RunConfig::parse("seed = 5\n").unwrap();
    assert_eq!(c.seed, 5);
    assert_eq!(c.trajectory_layout, TrajectoryLayout::Modal);
    assert_eq!(
        c,
        RunConfig {
            seed: 5,
            ..RunConfig::default()
        }
    );
}

#[test]
fn epsilon_above_one_is_rejected_by_key() {
    let err = RunConfig::parse("[solver]\neps = 1.5\n").unwrap_err().to_string();
    assert!(err.contains("solver.eps"), "{err}");
}

fn config_strategy() -> impl Strategy<Value = RunConfig> {
    (
        any::<u64>(),
        prop::sample::select(vec!["builtin", "linear-fast", "zero"]),
        1usize..=32,
        0.05f64..1.0,
        prop::collection::vec(0.01f64..1.0, 1..5),
        1usize..64,
        prop::bool::ANY,
    )
        .prop_map(|(seed, preset, modes, eps, mut eps_list, paths, nodal)| {
            eps_list.sort_by(|a, b| b.partial_cmp(a).unwrap());
            eps_list.dedup();
            let list = eps_list.iter().map(|e| format!("{e:?}")).collect::<Vec<_>>().join(", ");
            let layout = if nodal { "nodal" } else { "modal" };
            let text = format!(
                "seed = {seed}\ntrajectory_layout = \"{layout}\"\n[model]\npreset = \"{preset}\"\nmodes = {modes}\nnodes = {}\n\
                 [solver]\neps = {eps:?}\n[sweep]\nepsilons = [{list}]\npaths = {}\n",
                2 * modes,
                paths + 1
            );
            RunConfig::parse(&text).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn print_then_parse_is_identity(c in config_strategy()) {
        let again = RunConfig::parse(&c.print()).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.fingerprint(), c.fingerprint());
    }
}

#[test]
fn sweep_writes_its_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_command(Command::Sweep, &golden(), None, Some(dir.path())), 0);
    for f in ["sweep.csv", "sweep.svg", "manifest.json"] {
        let len = std::fs::metadata(dir.path().join(f)).unwrap().len();
        assert!(len > 0, "{f} is empty");
    }
    let header = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(header.starts_with("epsilon,p,estimate,stderr,M,excluded"));
    let m = manifest(dir.path());
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config_hash"], GOLDEN_FINGERPRINT);
    assert_eq!(m["exit_code"], 0);
}

#[test]
fn every_command_lists_only_existing_files() {
    for cmd in Command::ALL {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            run_command(cmd, &golden(), Some(11), Some(dir.path())),
            0,
            "{}",
            cmd.name()
        );
        let m = manifest(dir.path());
        assert_eq!(m["seed"], 11);
        assert_eq!(m["command"], cmd.name());
        assert!(m["config_hash"].as_str().is_some_and(|h| h.len() == 64));
        let files = m["files"].as_array().unwrap();
        assert!(!files.is_empty());
        for f in files {
            let p = dir.path().join(f.as_str().unwrap());
            assert!(std::fs::metadata(&p).unwrap().len() > 0, "{}", p.display());
        }
    }
}

#[test]
fn simulate_honours_the_trajectory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(golden()).unwrap().replacen(
        "seed = 7\n",
        "seed = 7\ntrajectory_layout = \"nodal\"\n",
        1,
    );
    let cfg = dir.path().join("nodal.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    assert_eq!(run_command(Command::Simulate, &cfg, None, Some(&out)), 0);
    let states = std::fs::read_to_string(out.join("states.csv")).unwrap();
    assert!(states.starts_with("t,node,xi,x,y\n"));
    // 21 saved times, 32 nodes
    assert_eq!(states.lines().count(), 1 + 21 * 32);
}

#[test]
fn audit_on_builtin_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_command(Command::Audit, &golden(), None, Some(dir.path())), 0);
    let rows = std::fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    let mut r = csv::Reader::from_reader(rows.as_bytes());
    let passed = r.headers().unwrap().iter().position(|h| h == "passed").unwrap();
    for rec in r.records() {
        assert_eq!(&rec.unwrap()[passed], "true");
    }
}

#[test]
fn missing_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_command(Command::Simulate, &dir.path().join("nope.toml"), None, Some(dir.path()));
    assert_eq!(code, 1);
    assert_eq!(manifest(dir.path())["exit_code"], 1);
}
