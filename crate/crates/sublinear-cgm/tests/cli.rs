//! End-to-end tests of the `sublinear-cgm` binary: generation, index
//! building, solver runs, benchmarking, certification, determinism.

use std::path::Path;
use std::process::Command;

use sublinear_cgm::acmdp::{Acmdp, SfwpoIterRecord};
use sublinear_cgm::cli::read_fw_trace;
use sublinear_cgm::vecspace::Dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sublinear-cgm"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        !out.status.success(),
        "command {args:?} unexpectedly succeeded"
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_json(path: &Path, value: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

#[test]
fn gen_uniform_sphere_rejects_empty_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let err = run_err(&[
        "gen",
        "uniform-sphere",
        "--n",
        "0",
        "--d",
        "4",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(err.contains("n must be >= 1"), "stderr: {err}");

    run_ok(&[
        "gen",
        "uniform-sphere",
        "--n",
        "50",
        "--d",
        "8",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let ds = Dataset::from_csv(out.join("dataset.csv")).unwrap();
    assert_eq!(ds.len(), 50);
    assert_eq!(ds.dim(), 8);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["config_hash"].is_string());
}

#[test]
fn gen_planted_maxip_records_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("planted");
    run_ok(&[
        "gen",
        "planted-maxip",
        "--n",
        "300",
        "--d",
        "16",
        "--ip",
        "0.9",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let planted = manifest["planted_index"].as_u64().unwrap() as usize;
    let query: Vec<f64> = manifest["query"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let ds = Dataset::from_csv(out.join("dataset.csv")).unwrap();
    let ip: f64 = ds
        .point(planted)
        .as_slice()
        .iter()
        .zip(&query)
        .map(|(a, b)| a * b)
        .sum();
    assert!((ip - 0.9).abs() < 1e-9, "planted ip = {ip}");
}

#[test]
fn gen_gridworld_roundtrips_through_loader() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gw");
    run_ok(&[
        "gen",
        "gridworld",
        "--rows",
        "4",
        "--cols",
        "4",
        "--gamma",
        "0.9",
        "--out",
        out.to_str().unwrap(),
    ]);
    let mdp = Acmdp::from_json(out.join("mdp.json")).unwrap();
    assert_eq!(mdp.num_states(), 16);
    assert_eq!(mdp.num_actions(), 8);
}

#[test]
fn build_index_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("ds");
    run_ok(&[
        "gen",
        "uniform-sphere",
        "--n",
        "400",
        "--d",
        "12",
        "--seed",
        "3",
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    let csv = data_dir.join("dataset.csv");
    let idx_a = dir.path().join("a.idx");
    let idx_b = dir.path().join("b.idx");
    for out in [&idx_a, &idx_b] {
        run_ok(&[
            "build-index",
            "--data",
            csv.to_str().unwrap(),
            "--tau",
            "0.4",
            "--c",
            "0.9",
            "--k",
            "8",
            "--l",
            "16",
            "--hash-seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let bytes_a = std::fs::read(&idx_a).unwrap();
    let bytes_b = std::fs::read(&idx_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "index builds differ byte-wise");

    // A run config can consume the prebuilt index.
    let trace = dir.path().join("trace.jsonl");
    let summary = dir.path().join("summary.json");
    let cfg = serde_json::json!({
        "data": { "csv": { "path": csv } },
        "objective": { "distance": { "target": { "random_hull": { "seed": 5 } }, "scale": 1.0 } },
        "epsilon": 1e-3,
        "c": 0.9,
        "max_iters": 60,
        "search": { "lsh": {
            "tau": 0.4, "hash_seed": 11, "k": 8, "l": 16,
            "index_file": idx_a,
        } },
        "seed": 2,
        "out_trace": trace,
        "out_summary": summary,
    });
    let cfg_path = dir.path().join("fw.json");
    write_json(&cfg_path, &cfg);
    run_ok(&["run", "fw", "--config", cfg_path.to_str().unwrap()]);
    let (trace, _) = read_fw_trace(&trace).unwrap();
    assert_eq!(trace.records.len(), 60);
}

/// Two-point quadratic from the solver examples: summary objective <= 0.02
/// at T = 200, and identical reruns are byte-identical.
#[test]
fn run_fw_exact_quadratic_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("two.csv");
    std::fs::write(&csv, "1,0\n0,1\n").unwrap();
    let trace = dir.path().join("trace.jsonl");
    let summary = dir.path().join("summary.json");
    let cfg = serde_json::json!({
        "data": { "csv": { "path": csv } },
        "objective": { "distance": { "target": { "coords": { "coords": [0.5, 0.5] } }, "scale": 1.0 } },
        "epsilon": 1e-9,
        "c": 1.0,
        "max_iters": 200,
        "search": "exact",
        "seed": 3,
        "out_trace": trace,
        "out_summary": summary,
    });
    let cfg_path = dir.path().join("fw.json");
    write_json(&cfg_path, &cfg);

    run_ok(&["run", "fw", "--config", cfg_path.to_str().unwrap()]);
    let summary_v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(summary_v["final_objective"].as_f64().unwrap() <= 0.02);
    let first = std::fs::read(&trace).unwrap();

    run_ok(&["run", "fw", "--config", cfg_path.to_str().unwrap()]);
    let second = std::fs::read(&trace).unwrap();
    assert_eq!(first, second, "same seed, different trace bytes");
}

#[test]
fn run_herding_writes_samples() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("features.csv");
    std::fs::write(&csv, "1,0\n0,1\n").unwrap();
    let trace = dir.path().join("trace.jsonl");
    let summary = dir.path().join("summary.json");
    let samples = dir.path().join("samples.json");
    let cfg = serde_json::json!({
        "data": { "csv": { "path": csv } },
        "mu": { "coords": { "coords": [0.5, 0.5] } },
        "epsilon": 1e-9,
        "c": 1.0,
        "max_iters": 100,
        "search": "exact",
        "seed": 5,
        "out_trace": trace,
        "out_summary": summary,
        "out_samples": samples,
    });
    let cfg_path = dir.path().join("herding.json");
    write_json(&cfg_path, &cfg);
    run_ok(&["run", "herding", "--config", cfg_path.to_str().unwrap()]);
    let samples: Vec<usize> =
        serde_json::from_str(&std::fs::read_to_string(&samples).unwrap()).unwrap();
    assert_eq!(samples.len(), 100);
    let summary_v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(summary_v["final_objective"].as_f64().unwrap() <= 2.0 / 101.0);
}

#[test]
fn run_sfwpo_gridworld_monotone_j() {
    let dir = tempfile::tempdir().unwrap();
    let gw = dir.path().join("gw");
    run_ok(&[
        "gen",
        "gridworld",
        "--rows",
        "4",
        "--cols",
        "4",
        "--gamma",
        "0.9",
        "--out",
        gw.to_str().unwrap(),
    ]);
    let trace = dir.path().join("trace.jsonl");
    let summary = dir.path().join("summary.json");
    let cfg = serde_json::json!({
        "mdp": gw.join("mdp.json"),
        "iters": 80,
        "c": 0.9,
        "tau": 0.3,
        "search": "exact",
        "seed": 9,
        "l_smooth": 1.0,
        "out_trace": trace,
        "out_summary": summary,
    });
    let cfg_path = dir.path().join("sfwpo.json");
    write_json(&cfg_path, &cfg);
    run_ok(&["run", "sfwpo", "--config", cfg_path.to_str().unwrap()]);

    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    lines.next(); // header
    let mut js = Vec::new();
    for line in lines {
        if let Ok(rec) = serde_json::from_str::<SfwpoIterRecord>(line) {
            js.push(rec.j_mu);
        }
    }
    assert_eq!(js.len(), 80);
    for pair in js.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-9, "J decreased: {pair:?}");
    }
}

#[test]
fn bench_exact_vs_exact_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("ds");
    run_ok(&[
        "gen",
        "uniform-sphere",
        "--n",
        "100",
        "--d",
        "6",
        "--seed",
        "2",
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    let report = dir.path().join("report.json");
    let t_exact = dir.path().join("exact.jsonl");
    let t_b = dir.path().join("b.jsonl");
    let cfg = serde_json::json!({
        "data": { "csv": { "path": data_dir.join("dataset.csv") } },
        "objective": { "distance": { "target": { "random_hull": { "seed": 4 } }, "scale": 1.0 } },
        "epsilon": 1e-4,
        "max_iters": 50,
        "seed": 6,
        "lsh": null,
        "c": 1.0,
        "g_star": 0.0,
        "out_report": report,
        "out_trace_exact": t_exact,
        "out_trace_lsh": t_b,
    });
    let cfg_path = dir.path().join("bench.json");
    write_json(&cfg_path, &cfg);
    run_ok(&["bench", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(
        std::fs::read(&t_exact).unwrap(),
        std::fs::read(&t_b).unwrap(),
        "exact-vs-exact arms must produce identical traces"
    );
    let report_v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report_v["schema_version"], 1);
    assert_eq!(
        report_v["iterations_exact"], report_v["iterations_lsh"],
        "degenerate arms disagree"
    );
}

#[test]
fn bench_lsh_report_validates_and_shows_savings() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("ds");
    run_ok(&[
        "gen",
        "uniform-sphere",
        "--n",
        "2000",
        "--d",
        "16",
        "--seed",
        "12",
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    let report = dir.path().join("report.json");
    let cfg = serde_json::json!({
        "data": { "csv": { "path": data_dir.join("dataset.csv") } },
        "objective": { "distance": { "target": { "random_hull": { "seed": 4 } }, "scale": 0.5 } },
        "epsilon": 1e-2,
        "max_iters": 150,
        "seed": 6,
        "lsh": { "tau": 0.2, "k": 9, "l": 48, "hash_seed": 3 },
        "c": 0.9,
        "out_report": report,
    });
    let cfg_path = dir.path().join("bench.json");
    write_json(&cfg_path, &cfg);
    let stdout = run_ok(&["bench", "--config", cfg_path.to_str().unwrap()]);
    assert!(stdout.contains("bench:"), "stdout: {stdout}");
    let report_v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    sublinear_cgm::cli::validate_bench_report(&report_v).unwrap();
    let frac = report_v["candidates_fraction_lsh"].as_f64().unwrap();
    assert!(
        frac < 1.0,
        "the LSH arm touched as much as a full scan: {frac}"
    );
}

#[test]
fn certify_command_passes_and_fails_correctly() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("two.csv");
    std::fs::write(&csv, "1,0\n0,1\n").unwrap();
    let trace = dir.path().join("trace.jsonl");
    let summary = dir.path().join("summary.json");
    let cfg = serde_json::json!({
        "data": { "csv": { "path": csv } },
        "objective": { "distance": { "target": { "coords": { "coords": [0.5, 0.5] } }, "scale": 1.0 } },
        "epsilon": 1e-9,
        "c": 1.0,
        "max_iters": 150,
        "search": "exact",
        "seed": 3,
        "out_trace": trace,
        "out_summary": summary,
    });
    let cfg_path = dir.path().join("fw.json");
    write_json(&cfg_path, &cfg);
    run_ok(&["run", "fw", "--config", cfg_path.to_str().unwrap()]);

    let gnuplot = dir.path().join("curve.dat");
    let stdout = run_ok(&[
        "certify",
        "--trace",
        trace.to_str().unwrap(),
        "--g-star",
        "0",
        "--beta",
        "1",
        "--d-max",
        "1.4142135623730951",
        "--c",
        "1",
        "--gnuplot",
        gnuplot.to_str().unwrap(),
    ]);
    assert!(stdout.contains("PASS"), "stdout: {stdout}");
    let curve = std::fs::read_to_string(&gnuplot).unwrap();
    assert_eq!(curve.lines().count(), 150);
    assert!(curve.lines().next().unwrap().starts_with("0 "));

    // An absurd g* makes h_t huge: certification must fail with nonzero exit.
    let err_out = bin()
        .args([
            "certify",
            "--trace",
            trace.to_str().unwrap(),
            "--g-star=-100",
            "--beta",
            "1",
            "--d-max",
            "1.4142135623730951",
        ])
        .output()
        .unwrap();
    assert!(!err_out.status.success());
    let stdout = String::from_utf8_lossy(&err_out.stdout);
    assert!(stdout.contains("FAIL"), "stdout: {stdout}");
}
