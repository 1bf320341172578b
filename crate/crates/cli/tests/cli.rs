//! End-to-end tests of the `stance` binary: exit codes, validation findings,
//! training outputs, determinism, evaluation cross-checks, and prediction.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stance"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generates a small bundle into `dir` and returns the config path.
fn make_bundle(dir: &Path) -> PathBuf {
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--labeled",
        "48",
        "--unlabeled",
        "24",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "synth failed: {}", stderr(&out));
    dir.join("run.cfg")
}

/// Fast training overrides used by every training test.
const FAST: &[&str] = &[
    "--set",
    "train.max_epochs=3",
    "--set",
    "train.patience=3",
    "--set",
    "train.batch_size=8",
    "--set",
    "train.learning_rate=0.001",
    "--set",
    "train.geo_hidden=8",
];

#[test]
fn validate_clean_bundle_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = make_bundle(tmp.path());
    let out = run(&["validate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("0 findings"));
}

#[test]
fn validate_reports_geo_unknown_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = make_bundle(tmp.path());
    let labeled = tmp.path().join("labeled.tsv");
    let mut content = fs::read_to_string(&labeled).unwrap();
    content.push_str("t0\tfavor\tnowhere\tsome text\n");
    let bad_line = content.lines().count();
    fs::write(&labeled, content).unwrap();

    let out = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out);
    assert!(text.contains("GEO_UNKNOWN"), "{text}");
    assert!(text.contains(&format!(":{bad_line}:")), "{text}");
}

#[test]
fn validate_reports_desc_missing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = make_bundle(tmp.path());
    let policies = tmp.path().join("policies.tsv");
    let content = fs::read_to_string(&policies).unwrap();
    let kept: Vec<&str> = content.lines().filter(|l| !l.starts_with("t1\t")).collect();
    fs::write(&policies, kept.join("\n") + "\n").unwrap();

    let out = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("DESC_MISSING"), "{}", stdout(&out));
}

#[test]
fn unknown_config_key_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = make_bundle(tmp.path());
    let out = run(&["validate", cfg.to_str().unwrap(), "--set", "train.alpa=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("train.alpa"));
}

#[test]
fn train_writes_layout_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = make_bundle(tmp.path());
    let cfg = cfg.to_str().unwrap();

    let run_dir = |name: &str| {
        let dir = tmp.path().join(name);
        let mut args = vec!["train", cfg, "--seed", "1"];
        args.extend_from_slice(FAST);
        let dir_arg = format!("data.output_dir={}", dir.display());
        args.extend_from_slice(&["--set", &dir_arg]);
        let out = run(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        dir
    };
    let a = run_dir("out_a");
    let b = run_dir("out_b");

    assert!(a.join("config.snapshot").exists());
    let log_a = a.join("logs/t0_to_t1_s1.tsv");
    let ckpt_a = a.join("checkpoints/t0_to_t1_s1.json");
    assert!(log_a.exists(), "missing {}", log_a.display());
    assert!(ckpt_a.exists(), "missing {}", ckpt_a.display());

    // Same config and seed into a fresh directory: byte-identical outputs.
    assert_eq!(fs::read(&log_a).unwrap(), fs::read(b.join("logs/t0_to_t1_s1.tsv")).unwrap());
    assert_eq!(fs::read(&ckpt_a).unwrap(), fs::read(b.join("checkpoints/t0_to_t1_s1.json")).unwrap());
}

#[test]
fn eval_reproduces_best_dev_score_and_rejects_missing_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = make_bundle(tmp.path());
    let cfg = cfg_path.to_str().unwrap();
    let dir = tmp.path().join("run");

    let mut args = vec!["train", cfg, "--seed", "2"];
    args.extend_from_slice(FAST);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));

    let ckpt = dir.join("checkpoints/t0_to_t1_s2.json");
    let mut args = vec!["eval", cfg, "--seed", "2", "--checkpoint", ckpt.to_str().unwrap()];
    args.extend_from_slice(FAST);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));

    // The dev row of the eval report equals the best dev F_avg in the log.
    let log = fs::read_to_string(dir.join("logs/t0_to_t1_s2.tsv")).unwrap();
    let best_dev: f64 = log
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse::<f64>().unwrap())
        .fold(f64::MIN, f64::max);
    let report = fs::read_to_string(dir.join("reports/eval_t0_to_t1_s2.tsv")).unwrap();
    let dev_row = report.lines().find(|l| l.contains("[dev]")).unwrap();
    let dev_f_avg: f64 = dev_row.split('\t').nth(5).unwrap().parse().unwrap();
    assert!(
        (dev_f_avg - best_dev).abs() < 5e-5,
        "eval dev F_avg {dev_f_avg} vs training log best {best_dev}"
    );

    let out = run(&["eval", cfg, "--checkpoint", tmp.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_preserves_order_and_probabilities_sum_to_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = make_bundle(tmp.path());
    let cfg = cfg_path.to_str().unwrap();

    let mut args = vec!["train", cfg, "--seed", "1"];
    args.extend_from_slice(FAST);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let ckpt = tmp.path().join("run/checkpoints/t0_to_t1_s1.json");

    // Reuse generated unlabeled records, including one with an unknown geo.
    let unlabeled = tmp.path().join("unlabeled.tsv");
    let lines: Vec<String> =
        fs::read_to_string(&unlabeled).unwrap().lines().take(7).map(String::from).collect();
    let input = tmp.path().join("to_predict.tsv");
    fs::write(&input, lines.join("\n") + "\n").unwrap();

    let out = run(&[
        "predict",
        cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 7);
    for row in rows {
        let fields: Vec<&str> = row.split('\t').collect();
        assert_eq!(fields.len(), 4, "{row}");
        assert!(["favor", "against", "none"].contains(&fields[0]));
        let probs: Vec<f64> = fields[1..].iter().map(|p| p.parse().unwrap()).collect();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "{row}");
        // Label matches the argmax column.
        let argmax = (0..3).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
        let labels = ["favor", "against", "none"];
        assert_eq!(fields[0], labels[argmax], "{row}");
    }
}

#[test]
fn predict_empty_input_gives_empty_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = make_bundle(tmp.path());
    let cfg = cfg_path.to_str().unwrap();

    let mut args = vec!["train", cfg, "--seed", "1"];
    args.extend_from_slice(FAST);
    assert!(run(&args).status.success());
    let ckpt = tmp.path().join("run/checkpoints/t0_to_t1_s1.json");

    let input = tmp.path().join("empty.tsv");
    fs::write(&input, "").unwrap();
    let out = run(&[
        "predict",
        cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
}

#[test]
fn suite_emits_expected_row_count() {
    let tmp = tempfile::tempdir().unwrap();
    // 3 topics so the cross-target suite has 6 tasks.
    let out = run(&[
        "synth",
        "--out",
        tmp.path().to_str().unwrap(),
        "--topics",
        "3",
        "--labeled",
        "30",
        "--unlabeled",
        "12",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = tmp.path().join("run.cfg");

    let mut args = vec!["suite", cfg.to_str().unwrap(), "--seed", "1"];
    args.extend_from_slice(FAST);
    args.extend_from_slice(&["--set", "train.max_epochs=1", "--set", "train.patience=1"]);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));

    let tsv = fs::read_to_string(tmp.path().join("run/reports/suite_cross_target.tsv")).unwrap();
    // Header + 6 tasks x (1 seed row + 1 mean row).
    assert_eq!(tsv.lines().count(), 1 + 6 * 2, "{tsv}");
}
