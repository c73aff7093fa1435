//! End-to-end runs of the `linktime` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn linktime(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linktime"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run linktime")
}

fn run_json(dir: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = linktime(dir, &full);
    assert!(
        out.status.success(),
        "linktime {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON summary on stdout")
}

/// Small five-link protocol so the pipeline stays fast.
const SPEC: &str = r#"{
    "kernel": {"n_links": 5, "extra_edges": [[1, 4]], "beta": 3.0, "sigma": 4.0},
    "mean": [10, 11, 12, 13, 14],
    "counts": {
        "target_route_id": "1",
        "full": 20,
        "ragged": 5,
        "ragged_merges": [2],
        "routes": [
            {"route_id": "2", "coverage": [1, 3], "skips": [], "count": 10},
            {"route_id": "3", "coverage": [3, 5], "skips": [4], "count": 10}
        ]
    }
}"#;

#[test]
fn synth_estimate_forecast_diagnose_pipeline() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    fs::write(root.join("spec.json"), SPEC).unwrap();

    let synth = run_json(root, &["synth", "--out", "data", "--seed", "3", "--spec", "spec.json"]);
    assert_eq!(synth["observations"], 45);
    assert_eq!(synth["n_links"], 5);
    assert!(root.join("data/observations.jsonl").is_file());
    assert!(root.join("data/truth.json").is_file());

    let estimate = run_json(
        root,
        &["estimate", "--data", "data", "--out", "chain", "--k1", "30", "--k2", "20", "--seed", "5"],
    );
    assert_eq!(estimate["observations_read"], 45);
    assert_eq!(estimate["observations_used"], 45);
    assert_eq!(estimate["chain_len"], 20);
    assert_eq!(estimate["posterior_mean"].as_array().unwrap().len(), 5);
    for f in ["config.json", "prior.json", "manifest.json", "samples.bin"] {
        assert!(root.join("chain").join(f).is_file(), "missing {f}");
    }

    // Same seed, same draws, byte for byte.
    run_json(
        root,
        &["estimate", "--data", "data", "--out", "chain2", "--k1", "30", "--k2", "20", "--seed", "5"],
    );
    assert_eq!(
        fs::read(root.join("chain/samples.bin")).unwrap(),
        fs::read(root.join("chain2/samples.bin")).unwrap()
    );

    // Composition: 20 identity recordings; route 2 adds 10 singleton-row
    // observations; route 3's merge boundary and the 5 ragged runs leave
    // merged rows, so only `all` admits them.
    let full = run_json(
        root,
        &["estimate", "--data", "data", "--out", "chain-full", "--k1", "10", "--k2", "10", "--include", "full"],
    );
    assert_eq!(full["observations_used"], 20);
    let fm = run_json(
        root,
        &["estimate", "--data", "data", "--out", "chain-fm", "--k1", "10", "--k2", "10", "--include", "full-missing"],
    );
    assert_eq!(fm["observations_used"], 30);

    fs::write(root.join("observed.csv"), "link,value\n1,10.5\n2,11.5\n").unwrap();
    let forecast = run_json(
        root,
        &[
            "forecast", "--chain", "chain", "--input", "observed.csv", "--predict", "3-5",
            "--trip", "3,4,5", "--out", "fc.csv",
        ],
    );
    assert_eq!(forecast["links"], serde_json::json!([3, 4, 5]));
    assert!(forecast["trip"]["mean"].is_f64());
    let fc = fs::read_to_string(root.join("fc.csv")).unwrap();
    let lines: Vec<&str> = fc.lines().collect();
    assert_eq!(lines[0], "link,mean,std,q2.5,q97.5");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("trip,"));

    let diagnose = run_json(
        root,
        &[
            "diagnose", "--chain", "chain", "--truth", "data/truth.json",
            "--out-decisions", "decisions.csv", "--out-corr", "corr.csv",
        ],
    );
    assert!(diagnose["kl_truth_vs_estimate"].as_f64().unwrap() >= 0.0);
    let verdicts = diagnose["verdicts"].as_object().unwrap();
    let total: u64 = verdicts.values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 10, "5 links give 10 distinct pairs");
    let decisions = fs::read_to_string(root.join("decisions.csv")).unwrap();
    assert_eq!(decisions.lines().count(), 11);
    let corr = fs::read_to_string(root.join("corr.csv")).unwrap();
    assert_eq!(corr.lines().next(), Some("5"));
}

#[test]
fn estimate_reports_split_rhat() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    fs::write(root.join("spec.json"), SPEC).unwrap();
    run_json(root, &["synth", "--out", "data", "--seed", "9", "--spec", "spec.json"]);
    let estimate = run_json(
        root,
        &[
            "estimate", "--data", "data", "--out", "chain", "--k1", "20", "--k2", "16",
            "--seed", "1", "--rhat",
        ],
    );
    let r = estimate["split_rhat_max"].as_f64().unwrap();
    assert!(r.is_finite() && r > 0.5, "{r}");
    let comp = estimate["split_rhat_component"].as_u64().unwrap();
    assert!((1..=5).contains(&comp), "{comp}");
}

#[test]
fn ingest_feeds_estimate() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    fs::write(
        root.join("geometry.json"),
        r#"{"n_links": 3, "routes": {"201": {"stops": ["A", "B", "C", "D"], "links": [1, 2, 3]}}}"#,
    )
    .unwrap();
    let mut events = String::from("ID,OBUID,TRIP_ID,ROUTE_ID,ROUTESUB_ID,ROUTE_STA_ID,AD_FLAG,AD_TIME\n");
    let mut id = 0;
    for (trip, hh, mm) in [("t1", 7, 30), ("t2", 8, 15), ("t3", 23, 0)] {
        for (k, stop) in ["A", "B", "C", "D"].iter().enumerate() {
            id += 1;
            events.push_str(&format!(
                "{id},9001,{trip},201,0,{stop},1,2016-12-02 {hh:02}:{:02}:00\n",
                mm + 2 * k as u32
            ));
        }
    }
    fs::write(root.join("events.csv"), events).unwrap();

    let ingest = run_json(
        root,
        &["ingest", "--events", "events.csv", "--geometry", "geometry.json", "--out", "ingested"],
    );
    assert_eq!(ingest["per_period"]["morning"], 2);
    assert_eq!(ingest["per_period"]["night"], 1);
    assert_eq!(ingest["rejected_rows"], 0);
    assert!(root.join("ingested/observations_morning.jsonl").is_file());
    assert!(root.join("ingested/rejects.json").is_file());

    let estimate = run_json(
        root,
        &[
            "estimate", "--data", "ingested", "--period", "morning", "--out", "chain",
            "--k1", "10", "--k2", "10", "--n-links", "3",
        ],
    );
    assert_eq!(estimate["observations_used"], 2);
    assert_eq!(estimate["n_links"], 3);
}

#[test]
fn errors_land_on_stderr_with_nonzero_exit() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();

    // Missing required flag: clap usage error.
    let out = linktime(root, &["estimate", "--out", "chain"]);
    assert_eq!(out.status.code(), Some(2));

    // Well-formed invocation against missing data.
    let out = linktime(root, &["estimate", "--data", "nope", "--out", "chain"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
    assert!(stderr.contains("observations.jsonl"), "{stderr}");
}
