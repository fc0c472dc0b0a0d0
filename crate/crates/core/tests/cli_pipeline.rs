//! End-to-end runs of the `fosr` binary on simulated ensembles.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fosr_core::cov::CovMode;
use fosr_core::design::{tiny_design, tiny_hyperparams, tiny_truth};
use fosr_core::io::{read_draws_from, write_draws_to, RunConfig};
use fosr_core::model::{simulate_dataset, FosrModel};
use fosr_core::sampler::{run_chains, SamplerConfig};
use fosr_core::spline::BasisSystem;

const SHORT_RUN: &str = "n_chains = 2\nn_iter = 400\nn_warmup = 200\nscore_update = collapsed\n";

fn fosr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fosr"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

/// Data rows of a provenance-headed CSV as string records.
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn simulated(dir: &Path, seed: &str) -> PathBuf {
    ok(&fosr(dir, &["simulate", "--seed", seed]));
    dir.join("data.csv")
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    simulated(a.path(), "7");
    simulated(b.path(), "7");
    simulated(c.path(), "8");
    for name in ["data.csv", "truth.json", "truth_beta.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.path().join("data.csv")).unwrap(), fs::read(c.path().join("data.csv")).unwrap());
}

#[test]
fn full_pipeline_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulated(d, "3");
    let conf = d.join("run.conf");
    fs::write(&conf, format!("# short run\n{SHORT_RUN}pred_times = 2025, 2045\nexport_csv = true\n")).unwrap();
    let base = ["--config", conf.to_str().unwrap(), "--data", data.to_str().unwrap()];
    for cmd in ["fit", "summarize", "rope", "krige", "score", "diagnose"] {
        let mut args = vec![cmd];
        args.extend(base);
        ok(&fosr(d, &args));
    }

    let fit = json(&d.join("fit.json"));
    assert_eq!(fit["n_draws"], 400);
    assert_eq!(fit["n_chains"], 2);

    let grid_len = 71; // yearly over 2020..=2090
    let (header, rows) = csv_rows(&d.join("beta_summary.csv"));
    assert_eq!(header, ["curve_id", "label", "t", "mean", "lo", "hi"]);
    let ids: BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids.len(), 6);
    assert_eq!(rows.len(), 6 * grid_len);
    for r in &rows {
        let (lo, mean, hi): (f64, f64, f64) = (r[4].parse().unwrap(), r[3].parse().unwrap(), r[5].parse().unwrap());
        assert!(lo <= mean && mean <= hi);
    }
    let (_, rows) = csv_rows(&d.join("c_summary.csv"));
    let ids: BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids.len(), 23);
    assert_eq!(rows.len(), 23 * grid_len);

    let (_, rows) = csv_rows(&d.join("rope.csv"));
    assert_eq!(rows.len(), 6 * grid_len);
    let (_, rows) = csv_rows(&d.join("krige.csv"));
    assert!(!rows.is_empty());
    let times: BTreeSet<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert!(times.contains("2025") && times.contains("2045"), "{times:?}");

    let score = json(&d.join("score.json"));
    for key in ["waic", "lpml", "mse"] {
        assert!(score[key].as_f64().unwrap().is_finite(), "{key}");
    }
    assert_eq!(score["log_cpo"].as_array().unwrap().len(), 23 * 5);
    assert!(json(&d.join("diagnostics.json"))["max_rhat"].is_number());
    assert!(d.join("trace.csv").exists() && d.join("acf.csv").exists() && d.join("draws.csv").exists());

    // every output shares one provenance header
    let first = fs::read_to_string(d.join("beta_summary.csv")).unwrap().lines().next().unwrap().to_string();
    assert!(first.starts_with("# fosr ") && first.contains("config_sha256="));
    for name in ["c_summary.csv", "rope.csv", "krige.csv", "cpo.csv"] {
        let line = fs::read_to_string(d.join(name)).unwrap().lines().next().unwrap().to_string();
        assert_eq!(line, first, "{name}");
    }
}

#[test]
fn eb_fragment_is_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "11");
    let out = fosr(dir.path(), &["eb-hyperparams", "--data", data.to_str().unwrap()]);
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("a_z = 92\n"));
    let eb = json(&dir.path().join("eb_hyperparams.json"));
    assert_eq!(eb["a_z"], 92.0);
    let cfg = RunConfig::load(&dir.path().join("eb_hyperparams.conf")).unwrap();
    assert_eq!(cfg.overrides.a_z, Some(92.0));
    assert_eq!(cfg.overrides.a_w, Some(vec![4.0; 6]));
}

fn single_error_line(out: &Output, kind: &str) {
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(lines[0].starts_with(&format!("error\tkind={kind}\tmessage=")), "{stderr}");
}

#[test]
fn failures_report_one_tagged_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.csv");
    fs::write(&bad, "scenario_id,model_id,x,year,value\nA,m1,1,2020,1.0\nA,m1,1,2030,-2.0\n").unwrap();
    single_error_line(&fosr(d, &["fit", "--data", bad.to_str().unwrap()]), "ingest");
    single_error_line(&fosr(d, &["simulate", "--set", "no_such_key=1"]), "config");
    single_error_line(&fosr(d, &["simulate", "--set", "score_update=sideways"]), "config");
    single_error_line(&fosr(d, &["fit", "--data", d.join("missing.csv").to_str().unwrap()]), "config");
}

#[test]
fn draws_from_another_basis_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulated(d, "5");
    let conf = d.join("run.conf");
    fs::write(&conf, SHORT_RUN).unwrap();
    let base = ["--config", conf.to_str().unwrap(), "--data", data.to_str().unwrap()];
    let mut fit = vec!["fit"];
    fit.extend(base);
    ok(&fosr(d, &fit));
    let mut summarize = vec!["summarize", "--set", "k=6"];
    summarize.extend(base);
    single_error_line(&fosr(d, &summarize), "dimension-mismatch");
}

#[test]
fn draw_store_survives_a_round_trip() {
    let basis = BasisSystem::new(4, 2020.0, 2050.0, 0.1).unwrap();
    let truth = tiny_truth(&basis);
    let data = simulate_dataset(&truth, &tiny_design(), &basis, CovMode::Decade, 10.0, 2).unwrap();
    let model = FosrModel::new(data, basis, tiny_hyperparams(), CovMode::Decade, 10.0).unwrap();
    let cfg = SamplerConfig { n_chains: 2, n_iter: 200, n_warmup: 100, seed: 9, ..SamplerConfig::default() };
    let store = run_chains(&model, &cfg).unwrap();
    let hash = "0123456789abcdef".repeat(4);
    let mut buf = Vec::new();
    assert!(write_draws_to(&mut buf, &store, "abc123").is_err());
    write_draws_to(&mut buf, &store, &hash).unwrap();
    let (back, sha) = read_draws_from(&mut buf.as_slice()).unwrap();
    assert_eq!(sha, hash);
    assert_eq!(back, store);
    assert!(read_draws_from(&mut &buf[..buf.len() / 2]).is_err());
}
