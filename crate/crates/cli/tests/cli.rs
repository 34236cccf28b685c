use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn perfest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfest")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let o = perfest(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

/// Labelled validation scores plus an unlabelled copy of a shifted test set.
fn fixtures(dir: &TempDir) -> (PathBuf, PathBuf, PathBuf) {
    let g = dir.path().join("gen");
    ok(&[
        "generate",
        "--n",
        "400",
        "--distortion",
        "2",
        "--seed",
        "1",
        "--out",
        s(&g.join("val")),
    ]);
    ok(&[
        "generate",
        "--n",
        "300",
        "--distortion",
        "2",
        "--prevalence",
        "0.3",
        "--seed",
        "2",
        "--out",
        s(&g.join("test")),
    ]);
    let val = g.join("val/scores.csv");
    let labelled = g.join("test/scores.csv");
    let unlabelled = dir.path().join("test.csv");
    let stripped: String = read(&labelled)
        .lines()
        .map(|l| {
            let mut parts: Vec<&str> = l.split(',').collect();
            parts.truncate(2);
            parts.join(",") + "\n"
        })
        .collect();
    fs::write(&unlabelled, stripped).unwrap();
    (val, labelled, unlabelled)
}

#[test]
fn estimate_on_unlabelled_test() {
    let dir = tempfile::tempdir().unwrap();
    let (val, _, test) = fixtures(&dir);
    let out = dir.path().join("out");
    ok(&[
        "estimate",
        "--val",
        s(&val),
        "--test",
        s(&test),
        "--methods",
        "cbpe,cm-atc,doc",
        "--out",
        s(&out),
    ]);
    let table = read(out.join("estimates.csv"));
    for method in ["cbpe", "cm_atc", "naive_doc"] {
        assert_eq!(
            table.lines().filter(|l| l.starts_with(&format!("{method},"))).count(),
            8
        );
    }
    assert!(!table.contains("naive_atc"));
    assert!(out.join("confusion.csv").exists());
    assert!(out.join("manifest.json").exists());
    assert!(!out.join("realized.csv").exists());
    assert!(!out.join("mae.csv").exists());
}

#[test]
fn estimate_with_test_equal_to_val_gives_zero_doc_error() {
    let dir = tempfile::tempdir().unwrap();
    let (val, _, _) = fixtures(&dir);
    let out = dir.path().join("out");
    ok(&["estimate", "--val", s(&val), "--test", s(&val), "--out", s(&out)]);
    let mae = read(out.join("mae.csv"));
    let doc_rows: Vec<&str> = mae.lines().filter(|l| l.contains("_doc,")).collect();
    assert!(!doc_rows.is_empty());
    for row in doc_rows {
        let cols: Vec<&str> = row.split(',').collect();
        if cols[1] == "auc" {
            continue;
        }
        assert_eq!(cols[3], "0", "{row}");
    }
    let realized = read(out.join("realized.csv"));
    assert!(realized.starts_with("accuracy,balanced_accuracy,recall,specificity,ppv,npv,f1,auc,rbs,ace\n"));
    assert!(read(out.join("confusion.csv")).contains("\nrealized,"));
}

#[test]
fn missing_input_is_a_validation_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (val, _, _) = fixtures(&dir);
    let o = perfest(&[
        "estimate",
        "--val",
        s(&val),
        "--test",
        "no/such/test.csv",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such/test.csv"));
}

#[test]
fn bad_settings_exit_with_two() {
    for args in [
        &["estimate", "--val", "x.csv"][..],
        &["generate", "--n", "0"],
        &["generate", "--latent", "gamma"],
        &["simulate", "--levels", "0.5,0.2"],
        &["estimate", "--bogus", "1"],
        &["calibrate", "--val", "x.csv"],
    ] {
        assert_eq!(perfest(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unlabelled_validation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, test) = fixtures(&dir);
    let o = perfest(&[
        "estimate",
        "--val",
        s(&test),
        "--test",
        s(&test),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("label"));
}

#[test]
fn prevalence_sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "simulate",
            "--levels",
            "0.2,0.5,0.8",
            "--repetitions",
            "2",
            "--sample-size",
            "60",
            "--n",
            "200",
            "--pool-size",
            "500",
            "--seed",
            "3",
            "--out",
            s(&out),
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let sweep = read(a.join("sweep.csv"));
    assert!(sweep.starts_with("level,repetition_mean,metric,method,realized,estimated,rbs,ace\n"));
    let levels: std::collections::BTreeSet<&str> =
        sweep.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(levels.len(), 3);
    for f in ["sweep.csv", "sweep_summary.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn covariate_sweep_over_three_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cov");
    ok(&[
        "simulate",
        "--kind",
        "covariate",
        "--levels",
        "0,0.5,1",
        "--repetitions",
        "2",
        "--sample-size",
        "80",
        "--pool-size",
        "400",
        "--out",
        s(&out),
    ]);
    let sweep = read(out.join("sweep.csv"));
    for level in ["0", "0.5", "1"] {
        assert!(
            sweep.lines().any(|l| l.starts_with(&format!("{level},"))),
            "level {level}"
        );
    }
    let summary = read(out.join("sweep_summary.csv"));
    assert!(summary.starts_with("level,method,metric,mae,defined,undefined\n"));
}

#[test]
fn simulate_from_score_files() {
    let dir = tempfile::tempdir().unwrap();
    let (val, pool, _) = fixtures(&dir);
    let out = dir.path().join("files");
    ok(&[
        "simulate",
        "--val",
        s(&val),
        "--pool",
        s(&pool),
        "--levels",
        "0.3,0.6",
        "--repetitions",
        "3",
        "--sample-size",
        "100",
        "--metrics",
        "accuracy,ppv",
        "--out",
        s(&out),
    ]);
    let sweep = read(out.join("sweep.csv"));
    assert!(sweep
        .lines()
        .skip(1)
        .all(|l| l.contains(",accuracy,") || l.contains(",ppv,")));

    let g = dir.path().join("groups");
    ok(&["generate", "--groups", "true", "--n", "600", "--out", s(&g)]);
    let grouped = g.join("scores.csv");
    ok(&[
        "simulate",
        "--kind",
        "covariate",
        "--val",
        s(&grouped),
        "--pool",
        s(&grouped),
        "--levels",
        "0,1",
        "--repetitions",
        "2",
        "--sample-size",
        "100",
        "--out",
        s(&dir.path().join("cov")),
    ]);
}

#[test]
fn generate_writes_header_rows_and_groups() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["generate", "--n", "100", "--seed", "4", "--out", s(&a)]);
    ok(&["generate", "--n", "100", "--seed", "4", "--out", s(&b)]);
    let text = read(a.join("scores.csv"));
    assert_eq!(text.lines().count(), 101);
    assert_eq!(text.lines().next(), Some("id,score,label"));
    assert_eq!(
        fs::read(a.join("scores.csv")).unwrap(),
        fs::read(b.join("scores.csv")).unwrap()
    );

    let g = dir.path().join("g");
    ok(&["generate", "--n", "50", "--groups", "true", "--out", s(&g)]);
    let text = read(g.join("scores.csv"));
    assert_eq!(text.lines().next(), Some("id,score,label,group"));
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.ends_with(",majority") || l.ends_with(",minority")));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# generator\nn = 30\nseed = 8\ndistortion = 3\n").unwrap();
    let out = dir.path().join("out");
    ok(&["generate", "--config", s(&cfg), "--n", "12", "--out", s(&out)]);
    assert_eq!(read(out.join("scores.csv")).lines().count(), 13);
    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 8);
    assert_eq!(manifest["config"]["generator"]["n"], 12);
    assert_eq!(manifest["config"]["generator"]["distortion"], 3.0);

    fs::write(&cfg, "n = 30\nnot a setting line\n").unwrap();
    let o = perfest(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn manifest_replay_reproduces_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let (val, test, _) = fixtures(&dir);
    let first = dir.path().join("first");
    ok(&[
        "estimate",
        "--val",
        s(&val),
        "--test",
        s(&test),
        "--calibration",
        "ts",
        "--out",
        s(&first),
    ]);
    let second = dir.path().join("second");
    ok(&[
        "estimate",
        "--manifest",
        s(&first.join("manifest.json")),
        "--out",
        s(&second),
    ]);
    for f in [
        "estimates.csv",
        "confusion.csv",
        "realized.csv",
        "mae.csv",
        "calibration.json",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
    let o = perfest(&[
        "simulate",
        "--manifest",
        s(&first.join("manifest.json")),
        "--out",
        s(&second),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_then_reuse_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (val, test, unlabelled) = fixtures(&dir);
    let cal = dir.path().join("cal");
    let fit = dir.path().join("fit.json");
    ok(&[
        "calibrate",
        "--val",
        s(&val),
        "--test",
        s(&unlabelled),
        "--calibration",
        "csts",
        "--calibration-file",
        s(&fit),
        "--out",
        s(&cal),
    ]);
    let saved = read(&fit);
    assert_eq!(saved, read(cal.join("calibration.json")));
    assert!(saved.contains("classwise"));
    let report = read(cal.join("calibration.csv"));
    assert!(report.starts_with("set,n,nll_before,nll_after,"));
    assert_eq!(report.lines().count(), 2);
    assert_eq!(read(cal.join("calibrated_test.csv")).lines().count(), 301);

    let est = dir.path().join("est");
    ok(&[
        "estimate",
        "--val",
        s(&val),
        "--test",
        s(&test),
        "--calibration-file",
        s(&fit),
        "--out",
        s(&est),
    ]);
    assert_eq!(read(est.join("calibration.json")), saved);

    let ev = dir.path().join("ev");
    ok(&[
        "evaluate",
        "--test",
        s(&test),
        "--auc-method",
        "quantile_100",
        "--out",
        s(&ev),
    ]);
    let realized = read(ev.join("realized.csv"));
    assert_eq!(realized.lines().count(), 2);
    assert!(read(ev.join("confusion.csv")).starts_with("source,tp,fp,tn,fn\nrealized,"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        ok(&[
            "simulate",
            "--kind",
            "covariate",
            "--repetitions",
            "3",
            "--sample-size",
            "100",
            "--pool-size",
            "500",
            "--threads",
            threads,
            "--out",
            s(&out),
        ]);
        outs.push(out);
    }
    for f in ["sweep.csv", "sweep_summary.csv", "manifest.json"] {
        assert_eq!(
            fs::read(outs[0].join(f)).unwrap(),
            fs::read(outs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}
