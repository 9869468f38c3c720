//! Subcommands run through the real binary: exit codes, written files and
//! their schemas.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn toy(file: &str) -> String {
    root().join("fixtures/toy").join(file).display().to_string()
}

fn srr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srr"))
        .args(args)
        .env_remove("SRR_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = srr(args);
    assert!(
        out.status.success(),
        "srr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = srr(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_schema(schema: &str, doc: &Value) {
    let schema = read_json(root().join("schemas").join(schema));
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
}

#[test]
fn analyze_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let stdout = ok(&["analyze", "--weights", &toy("weights.nrpw"), "--arch", &toy("arch.json"), "--out", d]);
    // Sorted by R, descending.
    let order: Vec<&str> = stdout.lines().skip(1).take(3).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(order, ["conv2", "conv1", "conv3"]);

    let got = read_json(dir.path().join("analyze.json"));
    let golden = read_json(toy("analyze_golden.json"));
    assert_schema("analyze.schema.json", &got);
    for (g, e) in got["layers"].as_array().unwrap().iter().zip(golden["layers"].as_array().unwrap()) {
        for key in ["layer", "n", "k", "n1", "n2", "n1c_estimate"] {
            assert_eq!(g[key], e[key]);
        }
        assert!((g["r"].as_f64().unwrap() - e["r"].as_f64().unwrap()).abs() <= 1e-12);
    }
    assert_eq!(got["source_digest"], golden["source_digest"]);
}

#[test]
fn tiny_gamma_gives_unit_redundancy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["analyze", "--weights", &toy("weights.nrpw"), "--gamma", "1e-9", "--out", d]);
    for l in read_json(dir.path().join("analyze.json"))["layers"].as_array().unwrap() {
        assert_eq!(l["r"].as_f64(), Some(1.0));
    }
}

#[test]
fn exit_codes() {
    let (c, err) = code(&["analyze", "--weights", "/no/such/file.nrpw"]);
    assert_eq!(c, 2);
    assert!(err.contains("/no/such/file.nrpw"), "{err}");

    let (c, _) = code(&["analyze", "--weights", &toy("weights.nrpw"), "--gamma=-1"]);
    assert_eq!(c, 3);
    let (c, _) = code(&["analyze", "--weights", &toy("weights.nrpw"), "--w1", "0.5", "--w2", "0.6"]);
    assert_eq!(c, 3);
    // Arch file given where weights are expected.
    let (c, _) = code(&["analyze", "--weights", &toy("arch.json")]);
    assert_eq!(c, 2);

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (c, err) = code(&["plan", "--weights", &toy("weights.nrpw"), "--filters", "17", "--out", d]);
    assert_eq!(c, 4, "{err}");
    let (c, _) = code(&["plan", "--weights", &toy("weights.nrpw"), "--out", d]);
    assert_eq!(c, 2, "clap rejects a missing budget");

    let out = Command::new(env!("CARGO_BIN_EXE_srr"))
        .args(["analyze", "--weights", &toy("weights.nrpw")])
        .env("SRR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

fn toy_w() -> String {
    toy("weights.nrpw")
}

fn toy_a() -> String {
    toy("arch.json")
}

fn plan_in(dir: &Path, extra: &[&str]) -> Value {
    let (w, a) = (toy_w(), toy_a());
    let mut args = vec!["plan", "--weights", &w, "--arch", &a, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&args);
    read_json(dir.join("plan.json"))
}

#[test]
fn zero_budget_plan_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan_in(dir.path(), &["--filters", "0"]);
    assert_eq!(plan["layers"], serde_json::json!({}));
    let flops = read_json(dir.path().join("flops.json"));
    assert_eq!(flops["drop_fraction"].as_f64(), Some(0.0));
}

#[test]
fn plan_bytes_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    plan_in(a.path(), &["--filters", "6", "--seed", "7"]);
    plan_in(b.path(), &["--filters", "6", "--seed", "7"]);
    for f in ["plan.json", "allocation.json", "flops.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn flops_target_overshoots_by_at_most_one_step() {
    let dir = tempfile::tempdir().unwrap();
    plan_in(dir.path(), &["--flops-drop", "0.40", "--seed", "7"]);
    let alloc = read_json(dir.path().join("allocation.json"));
    let flops = read_json(dir.path().join("flops.json"));
    let drop = flops["drop_fraction"].as_f64().unwrap();
    let trace = alloc["trace"].as_array().unwrap();
    let last = trace[trace.len() - 1]["flops_drop"].as_f64().unwrap();
    let before = if trace.len() > 1 {
        trace[trace.len() - 2]["flops_drop"].as_f64().unwrap()
    } else {
        0.0
    };
    assert_eq!(drop, last);
    assert!(drop >= 0.40 && before < 0.40);
    assert!(drop - 0.40 <= last - before);

    assert_schema("plan.schema.json", &read_json(dir.path().join("plan.json")));
    assert_schema("allocation.schema.json", &alloc);
    assert_schema("flops.schema.json", &flops);
}

#[test]
fn plan_flags_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan_in(
        dir.path(),
        &["--filters", "4", "--metric", "nof", "--criterion", "random", "--removal", "min-weight", "--deterministic-ties", "--seed", "3"],
    );
    assert_eq!(plan["criterion"], "random");
    assert_eq!(plan["provenance"]["metric"], "nof");
    assert_eq!(plan["provenance"]["removal"], "min_weight");
    let alloc = read_json(dir.path().join("allocation.json"));
    assert_eq!(alloc["config"]["ties"], "lowest_index");
    // Filter counts 5, 8, 6: the count metric drains the widest layer first.
    assert_eq!(alloc["counts"]["conv2"], 3);
}

#[test]
fn apply_empty_plan_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    plan_in(dir.path(), &["--filters", "0"]);
    let d = dir.path().to_str().unwrap();
    let plan = dir.path().join("plan.json");
    ok(&["apply", "--weights", &toy_w(), "--arch", &toy_a(), "--plan", plan.to_str().unwrap(), "--out", d]);
    assert_eq!(
        std::fs::read(dir.path().join("pruned.nrpw")).unwrap(),
        std::fs::read(toy_w()).unwrap()
    );
}

#[test]
fn apply_follows_plan_and_rejects_stale() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan_in(dir.path(), &["--filters", "5", "--seed", "2"]);
    let d = dir.path().to_str().unwrap();
    let plan_path = dir.path().join("plan.json");
    ok(&["apply", "--weights", &toy_w(), "--arch", &toy_a(), "--plan", plan_path.to_str().unwrap(), "--out", d]);
    let arch = read_json(dir.path().join("pruned_arch.json"));
    let original = read_json(toy_a());
    for (new, old) in arch["layers"].as_array().unwrap().iter().zip(original["layers"].as_array().unwrap()) {
        let name = old["name"].as_str().unwrap();
        let removed = plan["layers"].get(name).map_or(0, |v| v.as_array().unwrap().len());
        assert_eq!(new["out_channels"].as_u64().unwrap(), old["out_channels"].as_u64().unwrap() - removed as u64);
    }
    // The slimmed weights load and match the emitted architecture.
    let pruned = dir.path().join("pruned.nrpw");
    ok(&["analyze", "--weights", pruned.to_str().unwrap(), "--arch", dir.path().join("pruned_arch.json").to_str().unwrap()]);

    // Same plan against the slimmed weights: digest no longer matches.
    let (c, err) = code(&[
        "apply", "--weights", pruned.to_str().unwrap(), "--plan", plan_path.to_str().unwrap(), "--out", d,
    ]);
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("hash"), "{err}");
}

#[test]
fn simulate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sat.json");
    std::fs::write(
        &cfg,
        r#"{"m":4,"n":100,"dist_xi":{"kind":"constant","value":1},"dist_eta":{"kind":"constant","value":1},"a":2,"b":50,"trials":500,"seed":1}"#,
    )
    .unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--sweep", "16,64", "--out", d]);
    let report = read_json(dir.path().join("simulation.json"));
    assert_schema("simulation.schema.json", &report);
    for k in ["p_o", "p_eta_r", "p_eta_bar", "p_xi_bar", "p_g"] {
        assert_eq!(report["estimates"][k]["value"].as_f64(), Some(2.0), "{k}");
    }
    assert_schema("sweep.schema.json", &read_json(dir.path().join("sweep.json")));
    assert_eq!(std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap().lines().count(), 3);

    std::fs::write(&cfg, r#"{"m":4,"n":100,"dist_xi":{"kind":"cauchy"},"dist_eta":{"kind":"constant","value":1},"a":2,"b":50,"trials":500}"#).unwrap();
    assert_eq!(code(&["simulate", "--config", cfg.to_str().unwrap()]).0, 3);
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&["simulate", "--config", cfg.to_str().unwrap()]).0, 2);
}

#[test]
fn simulate_regression_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = root().join("fixtures/stat/exp_m8_n512.json");
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", d]);
    let got = read_json(dir.path().join("simulation.json"));
    let expected = read_json(root().join("fixtures/stat/exp_m8_n512.expected.json"));
    assert_eq!(got["estimates"]["pattern_counts"], expected["pattern_counts"]);
}

#[test]
fn bench_cover_small_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let stdout = ok(&["bench-cover", "--sizes", "8,200", "--max-cover", "2", "--per-bin", "2", "--out", d]);
    assert!(stdout.contains("skipped"));
    let rows = read_json(dir.path().join("bench_cover.json"));
    assert_schema("bench_cover.schema.json", &rows);
    for r in rows.as_array().unwrap() {
        match r["n"].as_u64().unwrap() {
            8 => assert!(r["oracle_secs"].is_number()),
            200 => assert!(r["oracle_secs"].is_null()),
            n => panic!("unexpected size {n}"),
        }
    }
}

#[test]
fn flops_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let arch = root().join("fixtures/arch/resnet20_cifar.json");
    let stdout = ok(&["flops", "--arch", arch.to_str().unwrap(), "--out", d]);
    assert!(stdout.contains("total 81100800"));
    assert_schema("flops.schema.json", &read_json(dir.path().join("flops.json")));
}
