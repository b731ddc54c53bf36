use std::path::Path;
use std::process::{Command, Output};

const FAST: [&str; 8] = [
    "--epochs",
    "3",
    "--pnn-hidden",
    "4,4",
    "--conditioner-hidden",
    "8",
    "--seeds",
    "0",
];

fn vsde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsde"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vsde(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn synth_train_score_diagnose() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--seed", "3", "--out", "data.csv"]);
    let data = read(dir, "data.csv");
    assert!(data.starts_with("x0,x1,label\n"));
    assert_eq!(data.lines().count(), 341);

    ok(
        dir,
        &[&["train", "--data", "data.csv", "--out", "model"][..], &FAST].concat(),
    );
    for f in [
        "manifest.txt",
        "member_0.model",
        "permutations.txt",
        "standardization.txt",
        "test.csv",
    ] {
        assert!(dir.join("model").join(f).exists(), "missing {f}");
    }

    let stdout = ok(
        dir,
        &[
            "score",
            "--model",
            "model",
            "--data",
            "model/test.csv",
            "--out",
            "scores.csv",
        ],
    );
    assert!(stdout.contains("auc ="));
    let scores = read(dir, "scores.csv");
    assert!(scores.starts_with("row_index,anomaly_score,label\n"));
    assert_eq!(scores.lines().count(), 191);

    let stdout = ok(
        dir,
        &[
            "diagnose",
            "--scores",
            "scores.csv",
            "--data",
            "model/test.csv",
            "--repeats",
            "2",
            "--out",
            "vr.txt",
        ],
    );
    assert!(stdout.contains("sigma2_normal"));
    assert!(read(dir, "vr.txt").contains("ratio_per_repeat"));
}

#[test]
fn score_without_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "data.csv"]);
    ok(
        dir,
        &[&["train", "--data", "data.csv", "--out", "model"][..], &FAST].concat(),
    );
    let unlabeled: String = read(dir, "data.csv")
        .lines()
        .map(|l| format!("{}\n", l.rsplit_once(',').unwrap().0))
        .collect();
    std::fs::write(dir.join("plain.csv"), unlabeled).unwrap();
    let stdout = ok(
        dir,
        &[
            "score",
            "--model",
            "model",
            "--data",
            "plain.csv",
            "--no-labels",
            "--out",
            "s.csv",
        ],
    );
    assert!(!stdout.contains("auc ="));
    assert!(read(dir, "s.csv").starts_with("row_index,anomaly_score\n"));
}

#[test]
fn eval_writes_metrics_and_honours_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "data.csv"]);
    std::fs::write(
        dir.join("run.conf"),
        "# short run\nepochs = 2\nn-perm = 2\nseeds = 4,5\nmean_ensemble = true\n",
    )
    .unwrap();
    let stdout = ok(
        dir,
        &[
            "eval",
            "--data",
            "data.csv",
            "--config",
            "run.conf",
            "--pnn-hidden",
            "4",
            "--out",
            "ev",
        ],
    );
    assert!(stdout.contains("over 2 seeds"));
    let metrics = read(dir, "ev/metrics.txt");
    assert!(metrics.contains("epochs = 2\n"));
    assert!(metrics.contains("n_perm = 2\n"));
    assert!(metrics.contains("pnn_hidden = 4\n"));
    assert!(metrics.contains("mean_ensemble = true\n"));
    assert_eq!(read(dir, "ev/runs.csv").lines().count(), 3);
    assert!(dir.join("ev/scores_seed_5.csv").exists());
}

#[test]
fn sweep_and_bench_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "data.csv"]);
    ok(
        dir,
        &[
            &["sweep", "--data", "data.csv", "--lambda", "1,3.33", "--out", "sw"][..],
            &FAST,
        ]
        .concat(),
    );
    let sweep = read(dir, "sw/sweep.csv");
    assert!(sweep.starts_with("n_perm,contamination,lambda,auc_mean,auc_std,baseline_auc,ratio\n"));
    assert_eq!(sweep.lines().count(), 3);

    std::fs::write(dir.join("datasets.txt"), "synthetic = data.csv labels\n").unwrap();
    let mut args = vec!["bench", "--out", "bench", "--thetas", "11"];
    args.extend(FAST);
    let out = Command::new(env!("CARGO_BIN_EXE_vsde"))
        .current_dir(dir)
        .env("VSDE_MANIFEST", "datasets.txt")
        .args(&args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(dir, "bench/profile.csv").lines().count(), 1 + 3 * 11);
    assert!(read(dir, "bench/summary.csv").starts_with("method,mean,median,q1,q3,min,max\n"));
    assert!(read(dir, "bench/auc_table.csv").contains("vsde,synthetic,"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "data.csv"]);
    for args in [
        &["eval", "--data", "data.csv", "--seeds", "1,1"][..],
        &["eval", "--data", "data.csv", "--lambda", "-1"],
        &["eval", "--data", "data.csv", "--dropout", "1.5"],
        &["train", "--data", "data.csv", "--out", "m", "--lambda", "1,2"],
        &["bench", "--out", "b"],
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_vsde"))
            .current_dir(dir)
            .env_remove("VSDE_MANIFEST")
            .args(args)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
    }
    std::fs::write(dir.join("bad.conf"), "no_such_key = 1\n").unwrap();
    assert_eq!(
        vsde(dir, &["eval", "--data", "data.csv", "--config", "bad.conf"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_input_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vsde(tmp.path(), &["eval", "--data", "absent.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}
