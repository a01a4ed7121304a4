use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn seqcox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqcox"))
        .args(args)
        .env("SEQCOX_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn bladder() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/bladder1.csv")
        .display()
        .to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn ingest_reports_the_bladder_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqcox(&[
        "ingest",
        "--input",
        &bladder(),
        "--workdir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let report = json(&dir.path().join("data_report.json"));
    assert_eq!(report["data"]["n_patients"], 118);
    assert_eq!(report["data"]["summary"]["treatment_counts"]["placebo"], 48);
    assert!(dir.path().join("sequences.sqcx").exists());
    assert!(dir.path().join("outcomes.csv").exists());
}

#[test]
fn empty_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = seqcox(&[
        "ingest",
        "--input",
        empty.to_str().unwrap(),
        "--workdir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `ingest` failed"));
}

#[test]
fn models_none_has_nothing_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqcox(&[
        "run-all",
        "--source",
        "simulate",
        "--models",
        "none",
        "--workdir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to run"));
}

#[test]
fn unknown_keys_and_bad_values_fail() {
    assert!(!seqcox(&["ingest", "--source", "simulate", "--no-such-key", "1"])
        .status
        .success());
    assert!(!seqcox(&["ingest", "--source", "simulate", "--epochs"]).status.success());
    assert!(!seqcox(&["ingest", "--source", "simulate", "--ties", "exact"])
        .status
        .success());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "# simulated run\nsource = simulate\nworkdir = {}\nepochs = 3\nmodels = lstm\nclassical = ag\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = seqcox(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs=2",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&dir.path().join("out/metrics.json"));
    assert_eq!(m["config"]["epochs"], 2);
    assert_eq!(m["seed"], 5);
    let models: Vec<&str> = m["data"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["model"].as_str().unwrap())
        .collect();
    assert_eq!(models, ["lstm-cox", "ag"]);
}

#[test]
fn run_all_on_simulated_data_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().to_str().unwrap();
    let out = seqcox(&[
        "run-all",
        "--source",
        "simulate",
        "--workdir",
        work,
        "--epochs",
        "10",
        "--tsne-iterations",
        "300",
        "--lime-samples",
        "100",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&dir.path().join("metrics.json"));
    let models: Vec<&str> = m["data"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["model"].as_str().unwrap())
        .collect();
    for label in ["lstm-cox", "transformer-cox", "mamba-cox"] {
        assert!(models.contains(&label), "{models:?}");
        for prefix in ["km", "tsne"] {
            assert!(dir.path().join(format!("{prefix}_{label}.csv")).exists());
        }
        assert!(dir.path().join(format!("fit_{label}.json")).exists());
    }
    for name in ["lime_freq.json", "saliency.csv", "fit_pwp.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
