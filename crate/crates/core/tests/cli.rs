use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data")
}

fn cqwb(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqwb"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn experiment_resume_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data_dir().join("cqwb.toml");
    let dir = tmp.path().join("exp");
    let dir_s = dir.to_str().unwrap();

    let first = cqwb(
        &cfg,
        &[
            "--mock",
            "experiment",
            "--manifest",
            dir_s,
            "--max-runs",
            "10",
        ],
    );
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(stdout(&first).contains("remaining 26"));

    let again = cqwb(&cfg, &["--mock", "experiment", "--manifest", dir_s]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--resume"));

    let resumed = cqwb(
        &cfg,
        &[
            "--mock",
            "experiment",
            "--manifest",
            dir_s,
            "--resume",
            "--parallel",
            "3",
        ],
    );
    assert_eq!(resumed.status.code(), Some(0));
    assert!(stdout(&resumed).contains("skipped 10, remaining 0"));

    let rep = cqwb(&cfg, &["--mock", "report", "--manifest", dir_s]);
    assert_eq!(rep.status.code(), Some(0));
    assert!(stdout(&rep).contains("anova n_paper"));
    for f in [
        "report.json",
        "precision_table.csv",
        "consistency.csv",
        "anova.csv",
        "runs.csv",
    ] {
        assert!(dir.join("report").join(f).is_file(), "{f}");
    }
    let table = fs::read_to_string(dir.join("report/precision_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
    assert!(table.starts_with("mode,n_paper,mean_precision,std_precision,n_runs"));

    let eval = cqwb(
        &cfg,
        &[
            "evaluate",
            dir.join("runs/rag-n02-t1_00-r01.jsonl").to_str().unwrap(),
        ],
    );
    assert_eq!(eval.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report["run_id"], "rag-n02-t1_00-r01");
    assert_eq!(report["theta"], 0.6);
}

#[test]
fn generate_and_evaluate_plain_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data_dir().join("cqwb.toml");
    let gen = cqwb(
        &cfg,
        &["generate", "--mode", "zero-shot", "--temperature", "0.5"],
    );
    assert_eq!(gen.status.code(), Some(0));
    let cqs = stdout(&gen);
    assert_eq!(cqs.lines().count(), 15);
    assert!(cqs.lines().all(|l| l.ends_with('?')));

    let list = tmp.path().join("cqs.txt");
    fs::write(
        &list,
        "1. What is usability?\n2. What do pandas mostly eat?\n",
    )
    .unwrap();
    let eval = cqwb(
        &cfg,
        &["evaluate", list.to_str().unwrap(), "--theta", "0.9"],
    );
    assert_eq!(eval.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report["tp"], 1);
    assert_eq!(report["fp"], 1);
}

#[test]
fn failed_runs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    // A scripted model with no responses fails every call.
    fs::write(tmp.path().join("script.json"), r#"{"responses": {}}"#).unwrap();
    let cfg = tmp.path().join("cqwb.toml");
    let text = fs::read_to_string(data_dir().join("cqwb.toml"))
        .unwrap()
        .replace(
            "ground_truth.txt",
            data_dir().join("ground_truth.txt").to_str().unwrap(),
        )
        .replace(
            "corpus.toml",
            data_dir().join("corpus.toml").to_str().unwrap(),
        )
        .replace(
            "provider = \"mock\"\n\n[retrieval",
            "provider = \"scripted\"\nscript = \"script.json\"\n\n[retrieval",
        )
        .replace("repetitions = 3", "repetitions = 1");
    fs::write(&cfg, text).unwrap();

    let out = cqwb(&cfg, &["experiment"]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("failed 12"));
    let rep = cqwb(&cfg, &["report"]);
    assert_eq!(rep.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rep.stderr).contains("no completed runs"));
}

#[test]
fn bad_config_is_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("broken.toml");
    fs::write(&cfg, "[task]\ntask_id = \"x\"\n").unwrap();
    let out = cqwb(&cfg, &["report"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
