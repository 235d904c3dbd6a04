use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fascicle");

fn run(sub: &str, dir: &Path, config: &str, out: &str) -> Output {
    let cfg = dir.join(format!("{out}.toml"));
    fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .args([sub, "-c"])
        .arg(&cfg)
        .arg("-o")
        .arg(dir.join(out))
        .output()
        .unwrap()
}

fn out_dir(dir: &Path, out: &str) -> PathBuf {
    dir.join(out)
}

const SMALL: &str = r#"
schema = 1
[cell]
grid_n = 12
refine = false
[scenario]
nodes = 33
dt = 0.002
t_end = 0.6
snapshot_every = 50
"#;

#[test]
fn cell_writes_model_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("cell", tmp.path(), SMALL, "cell");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d = out_dir(tmp.path(), "cell");
    for f in ["manifest.json", "model.toml", "cell_report.json", "cell_fields.csv"] {
        assert!(d.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["command"], "cell");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn invalid_config_exits_one_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("solve", tmp.path(), "schema = 1\n[scenario]\ndt = 0.3\nt_end = 1.0\n", "bad");
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert!(!out_dir(tmp.path(), "bad").exists());

    let out = run("cell", tmp.path(), "schema = 1\n[cell]\nunknown_key = 1\n", "bad2");
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir(tmp.path(), "bad2").exists());
}

#[test]
fn zero_length_run_keeps_only_initial_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("t_end = 0.6", "t_end = 0.0");
    let out = run("solve", tmp.path(), &cfg, "zero");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snaps = fs::read_to_string(out_dir(tmp.path(), "zero").join("snapshots.csv")).unwrap();
    let times: std::collections::BTreeSet<&str> = snaps.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(times.len(), 1);
    assert!(times.contains("0.0"));
    assert_eq!(snaps.lines().count(), 1 + 33);
}

#[test]
fn identical_configs_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run("solve", tmp.path(), SMALL, "a");
    let b = run("solve", tmp.path(), SMALL, "b");
    assert!(a.status.success() && b.status.success());
    for f in ["snapshots.csv", "energy.csv", "model.toml"] {
        let x = fs::read(out_dir(tmp.path(), "a").join(f)).unwrap();
        let y = fs::read(out_dir(tmp.path(), "b").join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn ladder_and_converge_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[ladder]\nrungs = 8\n");
    let out = run("ladder", tmp.path(), &cfg, "lad");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir(tmp.path(), "lad").join("ladder.csv").is_file());

    let cfg = SMALL.replace("nodes = 33", "nodes = 129") + "[converge]\nrungs = [4, 8]\nmacro_intervals = 128\nmin_ratio = 1.0\n";
    let out = run("converge", tmp.path(), &cfg, "conv");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir(tmp.path(), "conv").join("converge.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn failing_suite_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{SMALL}[membrane]\ntheta = 20.0\n[verify]\nlambda = 0.0\ntime = 0.2\npairs = 200\nmeshes = [16]\nenergy_dts = [0.002]\nfields = 5\n"
    );
    let out = run("verify", tmp.path(), &cfg, "ver");
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir(tmp.path(), "ver").join("verify_report.json")).unwrap();
    assert!(report.contains("\"pass\": false"));
}

#[test]
fn passing_suite_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[verify]\npairs = 100\nmeshes = [16, 64]\nenergy_dts = [0.004, 0.002]\nfields = 10\n");
    let out = run("verify", tmp.path(), &cfg, "ok");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["standard.toml", "box.toml"] {
        let path = root.join(name);
        let (cfg, _) = fascicle::app::RunConfig::load(&path).unwrap();
        cfg.validate_scenario().unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate_verify().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
