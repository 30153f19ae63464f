use std::fs;
use std::path::Path;
use std::process::Command;

use lpsphere::PExponent;
use lpsphere_cli::{
    input_hash, run, Experiment, ExperimentConfig, EXIT_CONFIG, EXIT_UNRELIABLE, MANIFEST_SCHEMA,
};
use serde_json::Value;

fn lpsphere(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_lpsphere")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_matches_schema(m: &Value) {
    let schema: Value = serde_json::from_str(MANIFEST_SCHEMA).unwrap();
    let obj = m.as_object().unwrap();
    let allowed = schema["properties"].as_object().unwrap();
    for key in schema["required"].as_array().unwrap() {
        assert!(obj.contains_key(key.as_str().unwrap()), "missing {key}");
    }
    for key in obj.keys() {
        assert!(allowed.contains_key(key), "unexpected {key}");
    }
    let config = obj["config"].as_object().unwrap();
    for key in schema["properties"]["config"]["required"].as_array().unwrap() {
        assert!(config.contains_key(key.as_str().unwrap()), "config missing {key}");
    }
    for digest in obj["outputs"].as_object().unwrap().values() {
        let d = digest.as_str().unwrap();
        assert!(d.len() == 64 && d.chars().all(|c| c.is_ascii_hexdigit()));
    }
}

#[test]
fn maxent_subcommand_reports_small_beta() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("maxent");
    let (code, stdout, _) = lpsphere(&["maxent", "--p", "2", "--q", "1", "--beta", "0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.trim().ends_with("manifest.json"));
    let m = manifest(&out);
    assert_matches_schema(&m);
    let s = &m["metrics"]["solution"];
    assert_eq!(s["regime"], "SmallBeta");
    assert!((s["rate"].as_f64().unwrap() - 0.4189385).abs() < 1e-6);
    assert_eq!(s["kappa0"].as_f64().unwrap(), -1.0);
    let grid = fs::read_to_string(out.join("maxent_beta_grid.csv")).unwrap();
    assert!(grid.starts_with("beta,regime,rate,"));
}

#[test]
fn pbm_ks_decreases_in_n() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pbm");
    let (code, _, _) = lpsphere(&["pbm", "--p", "2", "--n", "10,100,1000", "--seed", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(out.join("pbm.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,draws,ks,corr_abs_p"));
    let ks: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(ks.len(), 3);
    assert!(ks[0] > ks[1] && ks[1] > ks[2], "{ks:?}");
    assert_eq!(manifest(&out)["metrics"]["ks_strictly_decreasing"], true);
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::new(Experiment::SurfaceCheck);
    c.p = PExponent::Finite(3.0);
    c.n_list = vec![10, 100];
    c.budget = 1000;
    c.out_dir = tmp.path().join("from-file");
    let path = tmp.path().join("run.toml");
    fs::write(&path, c.to_toml()).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&fs::read_to_string(&path).unwrap()).unwrap(), c);

    let (code, _, err) = lpsphere(&["--config", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let m = manifest(&c.out_dir);
    assert_matches_schema(&m);
    assert_eq!(m["input_hash"], input_hash(&c));

    let flagged = tmp.path().join("flagged");
    let (code, _, _) = lpsphere(&[
        "--config",
        path.to_str().unwrap(),
        "surface-check",
        "--n",
        "20",
        "--out",
        flagged.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let m = manifest(&flagged);
    assert_eq!(m["config"]["n_list"], serde_json::json!([20]));
    assert_eq!(m["config"]["p"], 3.0);
    assert_eq!(m["metrics"]["per_n"][0]["within_bound"], true);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = out.to_str().unwrap();
    assert_eq!(lpsphere(&["maxent", "--q", "2", "--out", o]).0, EXIT_CONFIG);
    assert_eq!(lpsphere(&["pbm", "--budget", "10", "--out", o]).0, EXIT_CONFIG);
    assert_eq!(lpsphere(&["maxent", "--p", "inf", "--out", o]).0, EXIT_CONFIG);
    assert_eq!(lpsphere(&["bogus"]).0, EXIT_CONFIG);
    assert_eq!(lpsphere(&[]).0, EXIT_CONFIG);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "experiment = \"nope\"\n").unwrap();
    assert_eq!(lpsphere(&["--config", bad.to_str().unwrap()]).0, EXIT_CONFIG);

    // deep lower tail at a tiny budget leaves too few effective samples
    let (code, _, err) = lpsphere(&[
        "rate-curve", "--n", "400", "--beta", "0.3", "--budget", "1000", "--out", o,
    ]);
    assert_eq!(code, EXIT_UNRELIABLE, "{err}");
    assert_eq!(manifest(&out)["status"], "unreliable");
}

#[test]
fn every_experiment_writes_one_manifest_and_headed_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    for e in [
        Experiment::Sample,
        Experiment::Pbm,
        Experiment::RateCurve,
        Experiment::Gibbs,
        Experiment::Maxent,
        Experiment::SurfaceCheck,
    ] {
        let mut c = ExperimentConfig::new(e);
        c.budget = 1000;
        c.n_list = vec![8, 30];
        c.out_dir = tmp.path().join(e.name());
        let result = run(&c).unwrap();
        assert_matches_schema(&result.manifest);
        let names: Vec<String> = fs::read_dir(&c.out_dir)
            .unwrap()
            .map(|d| d.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names.iter().filter(|n| n.ends_with(".json")).count(), 1, "{e}");
        assert!(!names.iter().any(|n| n.ends_with(".tmp")));
        let outputs = result.manifest["outputs"].as_object().unwrap();
        assert_eq!(outputs.len(), result.tables.len());
        for t in &result.tables {
            let body = fs::read_to_string(t).unwrap();
            let header = body.lines().find(|l| !l.starts_with('#')).unwrap();
            assert!(header.split(',').all(|h| !h.is_empty() && h.parse::<f64>().is_err()), "{e}: {header}");
        }
    }
}
