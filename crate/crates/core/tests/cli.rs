use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use onoma::sim::RunManifest;

const MINIMAL: &str = r#"
name = "tiny"
seed = 3
metrics = ["power_map"]

[room]
width = 2.0
depth = 2.0
height = 3.0
receiver_plane_height = 0.85

[[luminaires]]
position = [1.0, 1.0, 3.0]
half_angle = 30.0

[power_map]
grid_step = 0.25
"#;

fn onoma(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_onoma"));
    cmd.args(args).env_remove("ONOMA_OUT_DIR").env_remove("ONOMA_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let o = onoma(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, Some(3));
    assert_eq!(manifest.outputs["power_map"], vec!["power_map.csv".to_string()]);
    let csv = fs::read_to_string(out.join("power_map.csv")).unwrap();
    assert!(csv.starts_with(&format!("# digest={}", manifest.config_digest)));
}

#[test]
fn empty_metric_list_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace(r#"["power_map"]"#, "[]"));
    let out = dir.path().join("out");
    let o = onoma(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, vec!["manifest.json".to_string()]);
    let manifest = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert!(manifest.outputs.values().all(Vec::is_empty));
}

#[test]
fn validate_names_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}\n[allocation]\nstrategy = \"fpa\"\nalpha = 1.2\n");
    let cfg = write_config(dir.path(), &text);
    let o = onoma(&["validate", &cfg], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("allocation.alpha"));

    let ok = write_config(dir.path(), MINIMAL);
    assert_eq!(onoma(&["validate", &ok], &[]).status.code(), Some(0));
}

#[test]
fn invalid_config_is_not_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace("width = 2.0", "width = -2.0"));
    let out = dir.path().join("out");
    let o = onoma(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("room.width"));
    assert!(!out.exists());
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(onoma(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(onoma(&["run"], &[]).status.code(), Some(1));
    assert_eq!(onoma(&["validate", "preset:nope"], &[]).status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = onoma(&["run", &cfg, "--out", blocker.join("out").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn presets_are_listed_and_validate() {
    let o = onoma(&["presets", "list"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    for name in ["fig2a", "fig2b", "fig2c", "fig4", "fig5", "coverage", "multicell", "pairing"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
        let target = format!("preset:{name}");
        assert_eq!(onoma(&["validate", &target], &[]).status.code(), Some(0), "{name}");
    }
    let shown = onoma(&["presets", "show", "fig4"], &[]);
    assert!(String::from_utf8_lossy(&shown.stdout).contains("[sweep]"));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("from-env");
    let o = onoma(&["run", &cfg], &[("ONOMA_OUT_DIR", &out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").exists());
    assert!(out.join("power_map.csv").exists());
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    onoma(&["run", &cfg, "--out", a.to_str().unwrap()], &[]);
    onoma(&["run", &cfg, "--out", b.to_str().unwrap(), "--seed", "99"], &[]);
    let ma = RunManifest::read(&a.join("manifest.json")).unwrap();
    let mb = RunManifest::read(&b.join("manifest.json")).unwrap();
    assert_eq!(mb.seed, Some(99));
    assert_ne!(ma.config_digest, mb.config_digest);
}
