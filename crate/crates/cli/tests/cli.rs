use std::path::Path;

use qmu_cli::config::{parse_config, Experiment, RunConfig};
use qmu_cli::run::{run, Manifest};
use qmu_cli::{exit_code, main_with, EXIT_INVARIANT, EXIT_IO, EXIT_OK, EXIT_VALIDATION};
use qmu_core::audit::parse_report;
use qmu_core::Error;

const SMALL: &str = r#"
seed = 11

[dataset]
generator = "blobs"
n = 40
noise = 0.2
forget = { kind = "random", count = 5, seed = 2 }

[model]
depth = 1

[train]
epochs = 20
batch_size = 64

[unlearn]
iterations = 5

[unlearn.fine_tune]
epochs = 5
batch_size = 64
optimizer = { kind = "natural", mode = { kind = "diagonal" } }
lr = 0.05

[fed]
clients = 3
rounds = 4
unlearn = [{ round = 2, client = 1, mode = "gradient_subtract" }]

[kernel]
queries = 20

[bench]
repeats = 1
qubits = [2]
kernel_sizes = [12]
"#;

fn small(out: &Path) -> RunConfig {
    RunConfig {
        out: Some(out.to_path_buf()),
        ..parse_config(SMALL).unwrap()
    }
}

fn run_in(dir: &Path, name: &str, experiment: Experiment) -> Manifest {
    run(experiment, small(&dir.join(name))).unwrap()
}

#[test]
fn every_experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for e in [
        Experiment::GenData,
        Experiment::Train,
        Experiment::Retrain,
        Experiment::Unlearn,
        Experiment::Fed,
        Experiment::Kernel,
        Experiment::Bench,
    ] {
        let a = run_in(dir.path(), &format!("{}-a", e.name()), e);
        let b = run_in(dir.path(), &format!("{}-b", e.name()), e);
        assert!(!a.reports.is_empty(), "{}", e.name());
        assert_eq!(a.reports, b.reports, "{}", e.name());
        assert_eq!(a.seeds, b.seeds);
        assert_eq!(a.dataset_digest, b.dataset_digest);
    }
}

#[test]
fn seed_changes_digest() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_in(dir.path(), "a", Experiment::Train);
    let mut cfg = small(&dir.path().join("b"));
    cfg.seed = Some(12);
    let b = run(Experiment::Train, cfg).unwrap();
    assert_ne!(a.reports, b.reports);
}

#[test]
fn unlearn_emits_report_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_in(dir.path(), "u", Experiment::Unlearn);
    let out = dir.path().join("u");
    let report = parse_report(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.mechanism, "qmu_i");
    assert!(report.distances.is_some() && report.membership.is_some());
    assert_eq!(report.param_gap_bound.as_ref().unwrap().label, "heuristic");
    let curve = std::fs::read_to_string(out.join("forgetting_curve.csv")).unwrap();
    assert!(curve.starts_with("iteration,trace_distance\n"));
    assert_eq!(curve.lines().count(), report.forgetting_curve.len() + 1);
    for seed in ["train", "unlearn", "fine_tune", "generate"] {
        assert!(m.seeds.contains_key(seed), "{seed}");
        assert_eq!(report.reproducibility.seeds[seed], m.seeds[seed]);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["reports"]["report.json"], m.reports["report.json"].as_str());
}

#[test]
fn other_mechanisms_run() {
    let dir = tempfile::tempdir().unwrap();
    for (k, mech) in ["influence", "fisher_step", "reset_partial", "retrain"]
        .iter()
        .enumerate()
    {
        let text = format!("{SMALL}\n").replace("[unlearn]\n", &format!("[unlearn]\nmechanism = \"{mech}\"\n"));
        let cfg = RunConfig {
            out: Some(dir.path().join(format!("m{k}"))),
            ..parse_config(&text).unwrap()
        };
        let m = run(Experiment::Unlearn, cfg).unwrap();
        assert!(m.reports.contains_key("report.json"), "{mech}");
    }
    let text = SMALL.replace("[unlearn]\n", "[unlearn]\nmechanism = \"client_channel\"\n");
    let cfg = RunConfig {
        out: Some(dir.path().join("bad")),
        ..parse_config(&text).unwrap()
    };
    assert!(
        matches!(run(Experiment::Unlearn, cfg), Err(Error::Validation { field, .. }) if field == "unlearn.mechanism")
    );
}

#[test]
fn retrain_mechanism_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("[unlearn]\n", "[unlearn]\nmechanism = \"retrain\"\n");
    let cfg = RunConfig {
        out: Some(dir.path().to_path_buf()),
        ..parse_config(&text).unwrap()
    };
    run(Experiment::Unlearn, cfg).unwrap();
    let report = parse_report(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let d = report.distances.unwrap();
    assert!(d.trace_after < 1e-9 && d.certified);
}

#[test]
fn fed_emits_ledger() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), "f", Experiment::Fed);
    let ledger = std::fs::read_to_string(dir.path().join("f/fed_ledger.csv")).unwrap();
    let lines: Vec<&str> = ledger.lines().collect();
    assert_eq!(
        lines[0],
        "round,participants,sigma,epsilon,mask_cancellation_error,masked_digest"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("2,0;2,"));
}

#[test]
fn fed_with_dp_reports_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[dp]\nclip = 1.0\nsigma = 2.0\ndelta = 1e-5\n");
    let cfg = RunConfig {
        out: Some(dir.path().to_path_buf()),
        ..parse_config(&text).unwrap()
    };
    run(Experiment::Fed, cfg).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let eps = report["privacy"]["epsilon"].as_f64().unwrap();
    let naive = report["privacy"]["naive_epsilon"].as_f64().unwrap();
    assert!(eps > 0.0 && eps <= naive);
}

#[test]
fn bench_emits_timing_table() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), "b", Experiment::Bench);
    let table = std::fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    let ops: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ops, ["parameter_shift_gradient", "qfim_full", "smw_delete"]);
}

#[test]
fn kernel_writes_gram() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), "k", Experiment::Kernel);
    let report = parse_report(&std::fs::read_to_string(dir.path().join("k/report.json")).unwrap()).unwrap();
    let k = report.kernel.unwrap();
    assert!(k.min_bound_slack.unwrap() >= -1e-9);
    assert!(k.smw_alpha_error.unwrap() <= 1e-8);
    assert!(std::fs::read_to_string(dir.path().join("k/gram.csv"))
        .unwrap()
        .starts_with("k0,"));
}

#[test]
fn audit_reads_saved_models() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), "u", Experiment::Unlearn);
    let cfg_path = dir.path().join("audit.toml");
    let text = format!("{SMALL}\n").replace(
        "[kernel]",
        "[audit]\nbefore = \"u/model_before.json\"\nafter = \"u/model.json\"\n\n[kernel]",
    );
    std::fs::write(&cfg_path, text).unwrap();
    let code = main_with([
        "qmu",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("a").to_str().unwrap(),
        "audit",
    ]);
    assert_eq!(code, EXIT_OK);
    let audited = parse_report(&std::fs::read_to_string(dir.path().join("a/report.json")).unwrap()).unwrap();
    let original = parse_report(&std::fs::read_to_string(dir.path().join("u/report.json")).unwrap()).unwrap();
    assert_eq!(audited.mechanism, "audit");
    assert_eq!(audited.distances, original.distances);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(main_with(["qmu", "--out", out, "gen-data"]), EXIT_VALIDATION);
    assert_eq!(main_with(["qmu", "--seed", "3", "--out", out, "gen-data"]), EXIT_OK);
    assert_eq!(
        main_with(["qmu", "--config", "/nonexistent/run.toml", "--seed", "3", "train"]),
        EXIT_IO
    );
    assert_eq!(main_with(["qmu", "frobnicate"]), EXIT_VALIDATION);

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[model]\nqubits = 3\n").unwrap();
    assert_eq!(
        main_with(["qmu", "--config", cfg.to_str().unwrap(), "--out", out, "train"]),
        EXIT_VALIDATION
    );

    std::fs::write(&cfg, "seed = 1\nexperiment = \"fed\"\n").unwrap();
    assert_eq!(
        main_with(["qmu", "--config", cfg.to_str().unwrap(), "--out", out, "train"]),
        EXIT_VALIDATION
    );

    assert_eq!(exit_code(&Error::Invariant("x".into())), EXIT_INVARIANT);
    assert_eq!(exit_code(&Error::Singular(0.0)), EXIT_INVARIANT);
}

#[test]
fn validation_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.dataset.path = Some(dir.path().join("missing.csv"));
    assert!(matches!(run(Experiment::Train, cfg), Err(Error::Validation { field, .. }) if field == "dataset.path"));
    let mut cfg = small(dir.path());
    cfg.audit.eps_cert = -1.0;
    assert!(matches!(run(Experiment::Train, cfg), Err(Error::Validation { field, .. }) if field == "audit.eps_cert"));
    let mut cfg = small(dir.path());
    cfg.fed.clients = 1;
    assert!(matches!(run(Experiment::Fed, cfg), Err(Error::Validation { field, .. }) if field == "fed.n_clients"));
    assert!(
        matches!(run(Experiment::Audit, small(dir.path())), Err(Error::Validation { field, .. }) if field == "audit.before")
    );
    match parse_config("seed = 1\n[train]\nlr = \"fast\"\n") {
        Err(Error::Parse(msg)) => assert!(msg.contains("invalid type"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
    match parse_config("seed = 1\n[model]\nqubits = 3\n") {
        Err(Error::Parse(msg)) => assert!(msg.contains("qubits"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn csv_dataset_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), "g", Experiment::GenData);
    let cfg_path = dir.path().join("csv.toml");
    std::fs::write(
        &cfg_path,
        "seed = 4\n[dataset]\npath = \"g/dataset.csv\"\nforget = { kind = \"none\" }\n[train]\nepochs = 2\n",
    )
    .unwrap();
    let mut cfg = RunConfig::load(&cfg_path).unwrap();
    cfg.out = Some(dir.path().join("t"));
    let m = run(Experiment::Train, cfg).unwrap();
    assert!(!m.seeds.contains_key("generate"));
    assert!(m.seeds.contains_key("split"));
}

#[test]
fn resolved_config_round_trips() {
    let cfg = parse_config(SMALL).unwrap();
    assert_eq!(parse_config(&cfg.to_toml().unwrap()).unwrap(), cfg);
}
