use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_splat-align");

const SMALL: &[&str] = &[
    "--set",
    "synth.primitives_per_object=200",
    "--set",
    "synth.n_views=14",
    "--set",
    "synth.image_width=64",
    "--set",
    "synth.image_height=48",
    "--set",
    "synth.focal=65",
];

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--seed", "5", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let o = cli(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_prints_overrides() {
    let o = cli(&["config", "--seed", "9", "--set", "degrade.drop_fraction=0.5"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["degrade"]["drop_fraction"], 0.5);
}

#[test]
fn bad_config_exits_with_validation_code() {
    assert_eq!(code(&cli(&["config", "--set", "no_such.key=1"])), 2);
    assert_eq!(code(&cli(&["config", "--set", "degrade.drop_fraction=1.5"])), 2);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&cli(&["config", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn missing_inputs_exit_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = cli(&["align", "--bundle", "/nonexistent/bundle", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let o = cli(&["render", "--cloud", "/nonexistent.ply", "--cameras", "/nonexistent.json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
}

#[test]
fn identity_planted_bundle_aligns_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    synth(
        &bundle,
        &["--set", "synth.random_rotation=false", "--set", "synth.scale_range=[1,1]", "--set", "synth.anisotropy=0"],
    );
    let b = bundle.to_str().unwrap();

    let missing = cli(&["align", "--bundle", b, "--object", "99", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&missing), 4);

    let out = tmp.path().join("align");
    let mut args = vec!["align", "--bundle", b, "--seed", "5", "--set", "provider.kind=exact-noiseless"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    let o = cli(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = json(&out.join("transform.json"));
    let r = t["final_residual"].as_f64().unwrap();
    assert!(r < 1e-6, "final residual {r}");
    assert!(out.join("aligned.ply").exists());
    assert!(std::fs::read_to_string(out.join("report.jsonl")).unwrap().lines().count() >= 1);
}

#[test]
fn full_cloud_scores_perfectly_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    synth(&bundle, &[]);
    let full = bundle.join("objects/obj0/full.ply");
    let out = tmp.path().join("eval");
    let mut args = vec!["eval", "--cloud", full.to_str().unwrap(), "--bundle", bundle.to_str().unwrap(), "--seed", "5"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    let o = cli(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["evaluated"]["chamfer"].as_f64().unwrap(), 0.0);
    assert!(m["evaluated"]["emd"].as_f64().unwrap() < 1e-12);
    assert_eq!(m["evaluated"]["miou"].as_f64().unwrap(), 1.0);
    assert!(m["partial_baseline"]["chamfer"].as_f64().unwrap() > 0.0);
}

#[test]
fn render_writes_one_image_per_camera() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    synth(&bundle, &[]);
    let out = tmp.path().join("render");
    let o = cli(&[
        "render",
        "--cloud",
        bundle.join("objects/obj0/proxy.ply").to_str().unwrap(),
        "--cameras",
        bundle.join("cameras.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["views"], 14);
    assert!(out.join("view013.png").exists());
}
