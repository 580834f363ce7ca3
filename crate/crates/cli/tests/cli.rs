//! End-to-end tests of the `poolsim` binary: exit codes, report shape,
//! determinism, config round-trips, and the sweep/verify-layout contracts.

use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn poolsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poolsim"))
}

fn run(args: &[&str]) -> Output {
    poolsim().args(args).output().expect("spawn poolsim")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn report(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).expect("report file");
    serde_json::from_str(&text).expect("report JSON")
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, value.to_string()).expect("write config");
    path
}

fn desk_topology() -> Value {
    serde_json::json!({ "cores_per_tile": 2, "tiles_per_group": 2, "num_groups": 4 })
}

fn desk_use_case(sigma2: f64) -> Value {
    serde_json::json!({
        "n_sc": 192, "n_fft": 256, "n_symb": 4, "n_pilot": 2,
        "n_r": 16, "n_b": 8, "n_l": 2, "sigma2_true": sigma2, "seed": 11
    })
}

fn records(doc: &Value) -> &Vec<Value> {
    doc["records"].as_array().expect("records array")
}

fn verdicts(doc: &Value) -> &Vec<Value> {
    doc["verdicts"].as_array().expect("verdicts array")
}

fn all_passed(doc: &Value) -> bool {
    verdicts(doc).iter().all(|v| v["passed"].as_bool() == Some(true))
}

/// Issued plus the per-cycle stall buckets must tile cycles x cores exactly.
/// (`conflict_wait` counts request-level queueing and overlaps `stall_lsu`,
/// so it stays outside the identity.)
fn assert_accounted(record: &Value) {
    let cycles = record["cycles"].as_u64().unwrap();
    let cores = record["cores"].as_u64().unwrap();
    let buckets: u64 = ["issued", "stall_raw", "stall_lsu", "stall_wfi", "idle_tail"]
        .iter()
        .map(|k| record[*k].as_u64().unwrap())
        .sum();
    assert_eq!(buckets, cycles * cores, "cycle accounting for {}", record["label"]);
}

#[test]
fn fft_kernel_report_is_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fft.json");
    let result = run(&[
        "kernel", "fft", "--n", "256", "--topology", "mempool", "--seed", "3",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));

    let doc = report(&out);
    assert_eq!(doc["tool"]["name"], "poolsim");
    assert!(doc["tool"]["version"].as_str().is_some_and(|v| !v.is_empty()));
    assert!(doc["generated_at"].as_u64().is_some());
    assert_eq!(doc["config"]["n"], 256);
    assert_eq!(doc["config"]["seed"], 3);
    assert!(doc["config_hash"].as_str().unwrap().len() == 64);

    let recs = records(&doc);
    assert_eq!(recs.len(), 1);
    let rec = &recs[0];
    assert_eq!(rec["kernel"], "fft");
    assert_eq!(rec["topology"], "mempool");
    assert!(rec["label"].as_str().unwrap().starts_with("fft n=256"));
    assert_eq!(rec["verified"], true);
    assert!(rec["speedup"].as_f64().unwrap() > 1.0);
    assert!(rec["ipc"].as_f64().unwrap() > 0.0);
    assert!(rec["worst_error"].as_f64().unwrap() <= 1e-4);
    assert_accounted(rec);
    assert!(all_passed(&doc));
}

#[test]
fn cholesky_reports_every_requested_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chol.json");
    let result = run(&[
        "kernel", "cholesky", "--size", "4", "--instances", "8",
        "--topology", "mempool", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));

    let doc = report(&out);
    let recs = records(&doc);
    // Factorisations run as pairs: four engine runs cover eight matrices.
    assert_eq!(recs.len(), 4);
    let total: u64 = recs.iter().map(|r| r["instances"].as_u64().unwrap()).sum();
    assert_eq!(total, 8);
    for rec in recs {
        assert_eq!(rec["verified"], true);
        assert_accounted(rec);
    }
    let verdict = verdicts(&doc)
        .iter()
        .find(|v| v["check"] == "cholesky golden equivalence")
        .expect("cholesky verdict");
    assert_eq!(verdict["passed"], true);
    assert!(verdict["detail"].as_str().unwrap().contains("verified 8 decompositions"));
}

#[test]
fn default_pipeline_runs_the_full_slot_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pipe.json");
    let result = run(&["pipeline", "--out", out.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));

    let doc = report(&out);
    assert_eq!(doc["config"]["topology"], "terapool");
    let recs = records(&doc);
    assert_eq!(recs.len(), 6, "five stages plus the chain total");
    let chain = recs.iter().find(|r| r["kernel"] == "chain").expect("chain record");
    assert!(chain["speedup"].as_f64().unwrap() > 100.0);
    assert_accounted(chain);
    for rec in recs {
        assert_eq!(rec["topology"], "terapool");
        assert_accounted(rec);
    }
    assert!(all_passed(&doc), "verdicts: {:?}", verdicts(&doc));
}

#[test]
fn noiseless_pipeline_is_held_to_the_tight_symbol_error_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "noiseless.json",
        &serde_json::json!({ "use_case": desk_use_case(0.0), "topology": desk_topology() }),
    );
    let out = dir.path().join("pipe.json");
    let result =
        run(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));

    let doc = report(&out);
    let verdict = verdicts(&doc)
        .iter()
        .find(|v| v["check"] == "noiseless error-vector magnitude")
        .expect("noiseless verdict");
    assert_eq!(verdict["passed"], true, "detail: {}", verdict["detail"]);
}

#[test]
fn reports_are_deterministic_apart_from_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let result = run(&[
            "kernel", "fft", "--n", "64", "--topology", "mempool", "--seed", "9",
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&result), 0);
    }
    let mut doc_a = report(&a);
    let mut doc_b = report(&b);
    doc_a["generated_at"] = Value::from(0u64);
    doc_b["generated_at"] = Value::from(0u64);
    assert_eq!(doc_a, doc_b);
}

#[test]
fn echoed_config_feeds_back_to_an_identical_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "desk.json",
        &serde_json::json!({ "use_case": desk_use_case(0.01), "topology": desk_topology() }),
    );
    let first_out = dir.path().join("first.json");
    let result =
        run(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", first_out.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));
    let mut first = report(&first_out);

    let echoed = write_json(dir.path(), "echoed.json", &first["config"]);
    let second_out = dir.path().join("second.json");
    let result = run(&[
        "pipeline", "--config", echoed.to_str().unwrap(), "--out", second_out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));
    let mut second = report(&second_out);

    assert_eq!(first["config_hash"], second["config_hash"]);
    first["generated_at"] = Value::from(0u64);
    second["generated_at"] = Value::from(0u64);
    assert_eq!(first, second);
}

#[test]
fn unknown_config_keys_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "bad.json",
        &serde_json::json!({ "preset": "usecase-5g", "warp": 9 }),
    );
    let result = run(&["pipeline", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 1);
    assert!(stderr_text(&result).contains("warp"));
}

#[test]
fn usage_errors_exit_one() {
    // Unknown subcommand (argument parsing).
    assert_eq!(exit_code(&run(&["explode"])), 1);
    // Transform length that is not a power of four (semantic validation).
    let result = run(&["kernel", "fft", "--n", "37", "--topology", "mempool"]);
    assert_eq!(exit_code(&result), 1);
    assert!(!stderr_text(&result).is_empty());
    // Missing required sweep config path.
    assert_eq!(exit_code(&run(&["sweep"])), 1);
}

#[test]
fn verification_failures_exit_two_but_still_write_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ne.json");
    // At an absurd noise power the f32 accumulation drifts past the fixed
    // absolute tolerance; the run must report that honestly and exit 2.
    let result = run(&[
        "kernel", "ne", "--sigma2", "1e6", "--topology", "mempool",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 2);
    let doc = report(&out);
    assert!(!all_passed(&doc));
    let failed: Vec<_> =
        verdicts(&doc).iter().filter(|v| v["passed"].as_bool() == Some(false)).collect();
    assert!(!failed.is_empty());
}

#[test]
fn csv_reports_have_stable_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "desk.json",
        &serde_json::json!({ "use_case": desk_use_case(0.01), "topology": desk_topology() }),
    );
    let out = dir.path().join("pipe.csv");
    let result = run(&[
        "pipeline", "--config", cfg.to_str().unwrap(), "--format", "csv",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));

    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("label,kernel,topology,config_hash,cycles"));
    assert_eq!(lines.len(), 7, "header plus six records");
    assert!(lines.iter().skip(1).all(|l| l.contains("custom(2,2,4)")));
}

#[test]
fn sweeps_emit_one_record_per_point_in_axis_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "sweep.json",
        &serde_json::json!({
            "kernel": "fft", "topology": "mempool",
            "sizes": [64, 256], "batches": [1, 2]
        }),
    );
    let out = dir.path().join("sweep.json.out");
    let result =
        run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));

    let doc = report(&out);
    let labels: Vec<&str> = records(&doc).iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(
        labels,
        vec!["fft n=64 batch=1", "fft n=64 batch=2", "fft n=256 batch=1", "fft n=256 batch=2"]
    );
    assert!(all_passed(&doc));
}

#[test]
fn sweeps_without_axes_collapse_to_a_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "sweep.json",
        &serde_json::json!({ "kernel": "mmm", "topology": desk_topology() }),
    );
    let out = dir.path().join("sweep.out.json");
    let result =
        run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));

    let doc = report(&out);
    assert_eq!(records(&doc).len(), 1);
    assert_eq!(records(&doc)[0]["kernel"], "mmm");
    assert!(all_passed(&doc));
}

#[test]
fn layout_checks_report_locality_and_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("layout.json");
    let result = run(&[
        "verify-layout", "--kernel", "fft", "--n", "256", "--topology", "mempool",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));

    let doc = report(&out);
    let verdict = &verdicts(&doc)[0];
    assert_eq!(verdict["passed"], true);
    let detail = verdict["detail"].as_str().unwrap();
    assert!(detail.contains("local read fraction 1.0000"), "detail: {detail}");
    assert!(detail.contains("0 bank conflicts"), "detail: {detail}");

    // The unfolded control layout must show the locality it loses.
    let result =
        run(&["verify-layout", "--kernel", "fft-unfolded", "--n", "256", "--topology", "mempool"]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));
    let doc: Value = serde_json::from_slice(&result.stdout).expect("stdout report");
    let detail = verdicts(&doc)[0]["detail"].as_str().unwrap();
    let fraction: f64 = detail
        .strip_prefix("local read fraction ")
        .and_then(|rest| rest.split(',').next())
        .and_then(|num| num.parse().ok())
        .expect("fraction in detail");
    assert!(fraction < 0.5, "unfolded locality should drop: {detail}");
}

#[test]
fn help_and_version_exit_zero() {
    let help = run(&["--help"]);
    assert_eq!(exit_code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout).into_owned();
    assert!(text.contains("kernel"));
    assert!(text.contains("pipeline"));
    assert!(text.contains("sweep"));
    assert!(text.contains("verify-layout"));
    assert_eq!(exit_code(&run(&["--version"])), 0);
}

#[test]
fn reports_default_to_stdout() {
    let result = run(&["kernel", "mmse", "--layers", "2", "--beams", "4", "--topology", "mempool"]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));
    let doc: Value = serde_json::from_slice(&result.stdout).expect("stdout is the report");
    assert_eq!(doc["tool"]["name"], "poolsim");
    assert!(all_passed(&doc));
}

#[test]
fn trace_flag_writes_issue_events() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.log");
    let out = dir.path().join("fft.json");
    let result = run(&[
        "kernel", "fft", "--n", "64", "--topology", "mempool",
        "--trace", trace.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_text(&result));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().count() > 100);
    assert!(text.lines().next().unwrap().starts_with("cycle="));
}
