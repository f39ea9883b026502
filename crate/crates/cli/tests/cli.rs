use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isoenergy"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gamma_json_contains_closed_form_tangential_point() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gamma", "--a", "2.5", "--n", "64"]);
    let doc = json(&dir.path().join("gamma.json"));
    assert_eq!(doc["header"]["command"], "gamma");
    assert_eq!(doc["header"]["config_sha256"].as_str().unwrap().len(), 64);
    let points = doc["data"]["tangential"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 24);
    let target = [FRAC_PI_2, FRAC_PI_2, PI / 3.0];
    let hit = points.iter().any(|p| {
        let c: Vec<f64> = p["point"]["p"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        c.iter().zip(target).all(|(x, t)| (x - t).abs() < 1e-6)
    });
    assert!(hit);
}

#[test]
fn oracle_line_agrees_with_direct_sum() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["denom", "--kind", "four", "--alpha", "3", "--eta", "0.25", "--n", "8", "--oracle"]);
    let line = out.lines().find(|l| l.starts_with("oracle")).expect("oracle line");
    let rel: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(rel <= 1e-8, "{line}");
    let csv = fs::read_to_string(dir.path().join("denom_oracle.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "alpha,eta,N,spectral,direct,rel_error");
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["decay", "--a", "2.5", "--n", "32", "--random-directions", "2", "--r-max", "60", "--points", "50", "--seed", "4"];
    ok(a.path(), &args);
    let out = Command::new(env!("CARGO_BIN_EXE_isoenergy"))
        .args(args)
        .arg("--out-dir")
        .arg(b.path())
        .env("ISOENERGY_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["decay.csv", "decay_fits.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    let sweep = ["denom", "--kind", "one", "--eta", "0.25,0.125", "--n", "64"];
    ok(a.path(), &sweep);
    ok(b.path(), &sweep);
    assert_eq!(fs::read(a.path().join("denom.csv")).unwrap(), fs::read(b.path().join("denom.csv")).unwrap());
}

#[test]
fn csv_outputs_carry_hash_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["decay", "--n", "32", "--direction", "1,0.2,-0.4", "--r-max", "40", "--points", "20"]);
    ok(dir.path(), &["l4", "--a", "1", "--n", "16", "--radii", "2,4", "--target-stderr", "0"]);
    ok(dir.path(), &["denom", "--kind", "two", "--eta", "0.25,0.125", "--n", "32", "--q", "0.5,-0.5,0"]);
    ok(dir.path(), &["diagnostics", "--n", "32", "--depth", "3", "--subdivisions", "8", "--annuli", "6"]);
    ok(dir.path(), &["geometry", "--a", "1", "--n", "16"]);
    let headers = [
        ("decay.csv", "a,omega_x,omega_y,omega_z,r,abs_mu_hat,bound_value"),
        ("l4.csv", "a,M,J,stderr"),
        ("denom.csv", "kind,alpha,eta,N,q_or_u,value,doubling_check_rel_change"),
        ("diagnostics.csv", "k,j,volume,weighted,bound,violation"),
        ("geometry.csv", "p1,p2,p3,grad_norm,nu_x,nu_y,nu_z,gauss,mean,kappa1,kappa2"),
    ];
    for (file, schema) in headers {
        let text = fs::read_to_string(dir.path().join(file)).unwrap();
        let mut lines = text.lines();
        let comment = lines.next().unwrap();
        assert!(comment.starts_with("# isoenergy ") && comment.contains("config_sha256="), "{file}: {comment}");
        assert_eq!(lines.next().unwrap(), schema);
        let width = schema.split(',').count();
        assert!(lines.all(|l| l.split(',').count() == width), "{file}");
    }
    let fit = json(&dir.path().join("denom_fit.json"));
    assert!(fit["data"]["power"]["log_residual"].is_number());
    assert!(fit["data"]["polylog"]["params"].is_array());
}

#[test]
fn exit_codes_separate_config_and_domain_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["gamma", "--a", "7"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["denom", "--kind", "four", "--eta", "0.25", "--n", "12"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["denom", "--kind", "one", "--eta", "0.25", "--oracle"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["nonsense"]).status.code(), Some(2));
    // Meshing exactly at a critical value is a domain error.
    assert_eq!(run(dir.path(), &["surface", "--a", "2", "--n", "16"]).status.code(), Some(1));
    // Under-resolved grid.
    assert_eq!(run(dir.path(), &["denom", "--kind", "one", "--eta", "0.01", "--n", "8"]).status.code(), Some(1));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"command": "gamma", "n": 32}"#).unwrap();
    ok(dir.path(), &["gamma", "--n", "64", "--config", cfg.to_str().unwrap()]);
    let doc = json(&dir.path().join("gamma.json"));
    assert_eq!(doc["header"]["config"]["n"], 32);

    fs::write(&cfg, r#"{"n": 32, "nn": 1}"#).unwrap();
    let out = run(dir.path(), &["gamma", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nn"));

    fs::write(&cfg, r#"{"command": "decay"}"#).unwrap();
    assert_eq!(run(dir.path(), &["gamma", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn mesh_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["surface", "--a", "1", "--n", "16"]);
    let cache = dir.path().join("surface.bin");
    let cached = ok(dir.path(), &["geometry", "--a", "1", "--n", "16", "--mesh", cache.to_str().unwrap()]);
    let fresh = ok(dir.path(), &["geometry", "--a", "1", "--n", "16"]);
    assert_eq!(cached, fresh);
    let out = run(dir.path(), &["geometry", "--a", "1", "--n", "32", "--mesh", cache.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let doc = json(&dir.path().join("surface.json"));
    assert_eq!(doc["data"]["euler_characteristic"], 2);
}
