use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("shflab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn shflab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_shflab"));
    cmd.args(args).env_remove("SHFLAB_OUT");
    if let Some(d) = env_out {
        cmd.env("SHFLAB_OUT", d);
    }
    cmd.output().unwrap()
}

fn run_config(dir: &Path, cmd: &str, text: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{cmd}.toml"));
    std::fs::write(&cfg, text).unwrap();
    let out = dir.join("out");
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (shflab(&args, None), out)
}

fn error_kind(o: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    v["kind"].as_str().unwrap().to_string()
}

#[test]
fn dickman_csv_matches_unit_time_closed_forms() {
    let d = scratch("dickman");
    let (o, out) = run_config(&d, "dickman", "seed = 1\ns = [1.0]\nt_max = 2.0\nt_step = 0.125\n", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("dickman.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256="));
    assert_eq!(lines.next(), Some("s,t,f"));
    let eg = (-0.577_215_664_901_532_9f64).exp();
    let mut rows = 0;
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        let expect = if v[1] <= 1.0 { eg } else { eg * (1.0 - v[1].ln()) };
        assert!((v[2] - expect).abs() < 1e-8, "{l}");
        rows += 1;
    }
    assert_eq!(rows, 16);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_config_fails_without_outputs() {
    let d = scratch("malformed");
    let (o, out) = run_config(&d, "scan", "seed = 1\ntheta = 0.0\nt = 1.0\nepsilons = [0.1]\nbogus = 3\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_kind(&o), "schema");
    assert!(!out.exists());
    let (o, out) = run_config(&d, "scan", "seed = 1\ntheta = 0.0\nepsilons = [0.1]\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn seed_is_mandatory_and_the_flag_overrides() {
    let d = scratch("seed");
    let text = "theta = 0.0\nt = 1.0\nepsilons = [0.1]\n";
    let (o, out) = run_config(&d, "scan", text, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_kind(&o), "missing_seed");
    assert!(!out.exists());
    let (o, out) = run_config(&d, "scan", text, &["--seed", "9"]);
    assert!(o.status.success());
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 9"));
}

#[test]
fn overlapping_tubes_are_a_geometry_error() {
    let d = scratch("geometry");
    let (o, out) = run_config(&d, "tubes", "seed = 1\nN = 16\nalpha = 3.0\nr = 1.0\nt = 1.0\nc_drift = 0.0\n", &[]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_kind(&o), "infeasible");
    assert!(!out.exists());
}

#[test]
fn separation_plot_draws_every_tube() {
    let d = scratch("separation");
    let (o, out) = run_config(&d, "tubes", "seed = 1\nN = 8\nalpha = 3.0\nr = 1.0\nt = 1.0\nsamples = 10\n", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out.join("separation.csv");
    let o = shflab(&["plot", "--kind", "separation", "--input", csv.to_str().unwrap(), "--out", d.to_str().unwrap()], None);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(d.join("separation.svg")).unwrap();
    // N = 8: one rotation, rings n = 4..=8.
    assert_eq!(svg.matches("class=\"tube\"").count(), 5);
    assert_eq!(svg.matches("data-j=\"0\"").count(), 5);
    assert!(svg.contains("<!-- config_sha256="));
}

#[test]
fn scan_plot_is_log_x_with_normalized_series() {
    let d = scratch("scanplot");
    let (o, out) = run_config(&d, "scan", "seed = 1\ntheta = 0.0\nt = 1.0\nepsilons = [0.1, 0.01, 0.001]\n", &[]);
    assert!(o.status.success());
    let csv = out.join("scan.csv");
    let o = shflab(&["plot", "--kind", "scan", "--input", csv.to_str().unwrap()], Some(&d.join("env")));
    assert!(o.status.success());
    let svg = std::fs::read_to_string(d.join("env").join("scan.svg")).unwrap();
    for tick in ["1e-3", "1e-2", "1e-1"] {
        assert!(svg.contains(&format!(">{tick}<")), "{tick}");
    }
    assert!(svg.contains("data-column=\"normalized_sharp\""));
}

#[test]
fn empty_or_mismatched_csv_is_rejected() {
    let d = scratch("emptycsv");
    let empty = d.join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = shflab(&["plot", "--kind", "tail", "--input", empty.to_str().unwrap(), "--out", d.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let header_only = d.join("header.csv");
    std::fs::write(&header_only, "threshold,fraction,wilson_low,wilson_high\n").unwrap();
    let o = shflab(&["plot", "--kind", "tail", "--input", header_only.to_str().unwrap(), "--out", d.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.join("header.svg").exists());
}
