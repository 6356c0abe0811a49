use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CHAIN: [&str; 13] = [
    "ingest", "suite-scan", "map-known", "map-speculate", "map-review", "fuse", "label", "features", "split", "train",
    "evaluate", "sweep", "report",
];

fn alertlab(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alertlab"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .unwrap()
}

fn ok(ws: &Path, args: &[&str]) -> String {
    let out = alertlab(ws, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stage(ws: &Path, cmd: &str) -> String {
    ok(ws, &["--config", "synth/alertlab.toml", cmd])
}

fn synth_workspace(testcases: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "5", "synth", "--testcases", testcases]);
    dir
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_chain_produces_reports_and_is_idempotent() {
    let ws = synth_workspace("120");
    for cmd in CHAIN {
        stage(ws.path(), cmd);
    }
    let overall = fs::read_to_string(ws.path().join("reports/overall.csv")).unwrap();
    assert_eq!(overall.lines().count(), 2);
    assert!(overall.starts_with("test_count,tp_rate,auroc,precision,recall,accuracy\n"));
    let sweep = fs::read_to_string(ws.path().join("reports/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 14);
    let summary = fs::read_to_string(ws.path().join("reports/summary.md")).unwrap();
    assert!(summary.contains("All stage outputs match"), "{summary}");

    let before = files(ws.path());
    for cmd in CHAIN {
        stage(ws.path(), cmd);
    }
    let after = files(ws.path());
    assert_eq!(before.keys().collect::<Vec<_>>(), after.keys().collect::<Vec<_>>());
    for (k, v) in &before {
        assert!(after[k] == *v, "{} changed on rerun", k.display());
    }
}

#[test]
fn split_before_label_names_the_label_stage() {
    let ws = synth_workspace("30");
    for cmd in ["ingest", "suite-scan", "map-known", "map-speculate", "fuse"] {
        stage(ws.path(), cmd);
    }
    let out = alertlab(ws.path(), &["--config", "synth/alertlab.toml", "split"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`label`"), "{err}");
    assert!(!ws.path().join("splits").exists());
}

#[test]
fn every_stage_reports_its_missing_predecessor() {
    let ws = tempfile::tempdir().unwrap();
    for (cmd, upstream) in [
        ("map-known", "ingest"),
        ("fuse", "ingest"),
        ("label", "fuse"),
        ("features", "label"),
        ("train", "split"),
        ("evaluate", "train"),
        ("sweep", "split"),
        ("report", "label"),
    ] {
        let out = alertlab(ws.path(), &[cmd]);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(&format!("`{upstream}`")), "{cmd}: {err}");
    }
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let ws = tempfile::tempdir().unwrap();
    assert_eq!(alertlab(ws.path(), &["ingest", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(alertlab(ws.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(alertlab(ws.path(), &["train", "--training-set", "sideways:5"]).status.code(), Some(1));
    let help = alertlab(ws.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in CHAIN.iter().chain(&["synth"]) {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
    // No alert inputs configured.
    assert_eq!(alertlab(ws.path(), &["ingest"]).status.code(), Some(1));
    assert_eq!(alertlab(ws.path(), &["--config", "absent.toml", "ingest"]).status.code(), Some(1));
    fs::write(ws.path().join("alertlab.toml"), "[inputs]\nbogus = 1\n").unwrap();
    assert_eq!(alertlab(ws.path(), &["ingest"]).status.code(), Some(1));
}

#[test]
fn model_schema_version_mismatch_is_rejected() {
    let ws = synth_workspace("60");
    for cmd in &CHAIN[..10] {
        stage(ws.path(), cmd);
    }
    let path = ws.path().join("models/model.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1)).unwrap();
    let out = alertlab(ws.path(), &["--config", "synth/alertlab.toml", "evaluate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("99"));
}

#[test]
fn report_flags_stages_with_changed_inputs() {
    let ws = synth_workspace("60");
    for cmd in &CHAIN[..11] {
        stage(ws.path(), cmd);
    }
    let metrics = ws.path().join("synth/metrics.csv");
    let mut text = fs::read_to_string(&metrics).unwrap();
    text.push_str("synth,file,extra.c,,,,FILE_LINES,3\n");
    fs::write(&metrics, text).unwrap();
    stage(ws.path(), "report");
    let summary = fs::read_to_string(ws.path().join("reports/summary.md")).unwrap();
    assert!(summary.contains("`features` is stale"), "{summary}");
    assert!(summary.contains("`synth` is stale"), "{summary}");
    assert!(!summary.contains("`train` is stale"), "{summary}");
}

#[test]
fn lasso_and_speculative_training_sets_run() {
    let ws = synth_workspace("120");
    for cmd in &CHAIN[..9] {
        stage(ws.path(), cmd);
    }
    ok(ws.path(), &["--config", "synth/alertlab.toml", "train", "--kind", "lasso-logit", "--training-set", "forward:25"]);
    stage(ws.path(), "evaluate");
    let importance = fs::read_to_string(ws.path().join("reports/importance.csv")).unwrap();
    assert!(importance.lines().nth(1).unwrap().contains("abs_weight"));
    let counts = fs::read_to_string(ws.path().join("models/train_counts.json")).unwrap();
    assert!(counts.contains("\"forward:25\""));
    let out = alertlab(ws.path(), &["--config", "synth/alertlab.toml", "train", "--training-set", "forward:30"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn manifests_record_digests_of_inputs_and_outputs() {
    let ws = synth_workspace("30");
    stage(ws.path(), "ingest");
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path().join("alerts/ingest.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["seed"], 5);
    let inputs = m["inputs"].as_object().unwrap();
    assert_eq!(inputs.len(), 4);
    assert!(inputs.keys().all(|k| k.starts_with("synth/alerts/")));
    let outputs = m["outputs"].as_object().unwrap();
    assert_eq!(
        outputs.keys().collect::<Vec<_>>(),
        ["alerts/alerts.jsonl", "alerts/runs.json"]
    );
    assert!(outputs.values().all(|v| v.as_str().unwrap().len() == 64));
}
