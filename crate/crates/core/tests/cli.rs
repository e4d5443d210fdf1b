use std::path::Path;
use std::process::{Command, Output};

fn prenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prenet")).args(args).output().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn theory_prints_closed_forms() {
    let out = prenet(&["theory", "--eps", "0"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("anomaly-anomaly: 0.25\n"));
    assert!(text.contains("anomaly-normal:  0.25\n"));
    assert!(text.contains("normal-normal:   0.5\n"));

    let out = prenet(&["theory", "--eps", "0.02", "--k", "60", "--n", "5000"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("expected score, true anomaly: 6\n"));
    assert!(text.contains("expected score, true normal:  1.84\n"));
    assert!(text.contains("27000000000000000\n"));
}

#[test]
fn invalid_contamination_exits_2() {
    let out = prenet(&["theory", "--eps", "1.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn help_exits_0_and_shows_defaults() {
    for cmd in ["synth", "train", "score", "eval", "experiment", "ablate", "sweep", "theory"] {
        let out = prenet(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
    }
    let help = String::from_utf8(prenet(&["experiment", "--help"]).stdout).unwrap();
    for default in ["[default: 60]", "[default: 0.02]", "[default: 50]", "[default: 512]", "[default: 8,4,0]", "[default: 30]"] {
        assert!(help.contains(default), "missing {default}");
    }
    assert_eq!(prenet(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = prenet(&["experiment", "--data", &path(dir.path(), "absent.csv"), "-o", &path(dir.path(), "r.json")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn capacity_shortfall_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path(), "d.csv");
    assert!(prenet(&["synth", "--n-normal", "300", "--n-anomaly", "10", "--dim", "2", "-o", &d]).status.success());
    let out = prenet(&["experiment", "--data", &d, "--runs", "1", "-o", &path(dir.path(), "r.json")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("required"));
}

#[test]
fn synth_then_experiment_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path(), "d.csv");
    let rep = path(dir.path(), "rep.json");
    let out = prenet(&["synth", "--n-normal", "1000", "--n-anomaly", "50", "--dim", "2", "--separation", "6", "--seed", "7", "-o", &d]);
    assert!(out.status.success());
    // 40 training anomalies cannot host the default 60 labeled ones
    let out = prenet(&["experiment", "--data", &d, "--runs", "3", "--seed", "1", "--n-labeled", "20", "-o", &rep]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    let pr: Vec<f64> = runs.iter().map(|r| r["auc_pr"].as_f64().unwrap()).collect();
    let mean = pr.iter().sum::<f64>() / 3.0;
    let std = (pr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!((report["auc_pr"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((report["auc_pr"]["std"].as_f64().unwrap() - std).abs() < 1e-12);
    assert_eq!(report["seeds"], serde_json::json!([1, 2, 3]));
}

#[test]
fn train_score_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| path(dir.path(), n);
    assert!(prenet(&["synth", "--seed", "2", "-o", &p("d.csv")]).status.success());
    let out = prenet(&[
        "train", "--data", &p("d.csv"), "--n-labeled", "30", "--epochs", "10", "--seed", "3",
        "-o", &p("m.json"), "--test-out", &p("t.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&p("m.json.report.json")).is_file());

    assert!(prenet(&["score", "--model", &p("m.json"), "--data", &p("t.csv"), "-o", &p("s.csv")]).status.success());
    let scores = std::fs::read_to_string(p("s.csv")).unwrap();
    assert!(scores.starts_with("row_index,score,true_label\n"));
    assert_eq!(scores.lines().count(), 421);

    assert!(prenet(&["eval", "--scores", &p("s.csv"), "-o", &p("e.json")]).status.success());
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("e.json")).unwrap()).unwrap();
    assert_eq!(m["n_test"], 420);
    assert_eq!(m["n_anomalies"], 20);
    assert!(m["auc_roc"].as_f64().unwrap() > 0.9);
}

#[test]
fn spec_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| path(dir.path(), n);
    assert!(prenet(&["synth", "--n-normal", "500", "--n-anomaly", "60", "--seed", "1", "-o", &p("d.csv")]).status.success());
    std::fs::write(
        p("exp.spec"),
        format!("# small run\ndata = {}\nn-labeled = 20\nepochs = 3\nruns = 4\nseed = 10\n", p("d.csv")),
    )
    .unwrap();
    let out = prenet(&["experiment", "--spec", &p("exp.spec"), "--runs", "2", "-o", &p("r.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("r.json")).unwrap()).unwrap();
    assert_eq!(r["seeds"], serde_json::json!([10, 11]));
    assert_eq!(r["config"]["train"]["n_epochs"], 3);

    std::fs::write(p("bad.spec"), "no-such-flag = 1\n").unwrap();
    let out = prenet(&["experiment", "--spec", &p("bad.spec"), "--data", &p("d.csv"), "-o", &p("r2.json")]);
    assert_eq!(out.status.code(), Some(2));
}
