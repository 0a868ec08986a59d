//! End-to-end run of every subcommand on a tiny cohort, plus the exit-code
//! contract for bad configs, missing artifacts and tampered files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use renalseg_cli::commands::ComparisonReport;
use renalseg_cli::run_args;

fn args(root: &Path, cmd: &[&str], extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
    v.extend(
        [
            "--preset",
            "smoke",
            "--paths.cohort",
            &root.join("cohort").display().to_string(),
            "--paths.workdir",
            &root.join("work").display().to_string(),
            "--synth.n_cases",
            "30",
            "--synth.volume_shape",
            "[32,40,40]",
            "--split.fractions",
            "[0.4,0.4,0.2]",
            "--preprocess.patch_size",
            "[16,32,32]",
            "--network.levels",
            "3",
            "--train.epochs",
            "2",
            "--train.samples_per_epoch",
            "8",
        ]
        .map(String::from),
    );
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn code(root: &Path, cmd: &[&str], extra: &[&str]) -> i32 {
    match run_args(args(root, cmd, extra)) {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    }
}

const STEPS: [&[&str]; 12] = [
    &["synth"],
    &["split"],
    &["preprocess"],
    &["train", "--sampling", "uniform"],
    &["select-features"],
    &["retrain"],
    &["predict", "--arm", "uniform"],
    &["predict", "--arm", "cognizant"],
    &["evaluate", "--arm", "uniform"],
    &["evaluate", "--arm", "cognizant"],
    &["compare"],
    &["report"],
];

#[test]
fn full_pipeline_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for step in STEPS {
        assert_eq!(code(root, step, &[]), 0, "{step:?}");
    }
    let work = root.join("work");

    let split: serde_json::Value = serde_json::from_slice(&std::fs::read(work.join("split.json")).unwrap()).unwrap();
    let train: BTreeSet<String> =
        split["train"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let weights: BTreeMap<String, f64> =
        serde_json::from_slice(&std::fs::read(work.join("selection/weights.json")).unwrap()).unwrap();
    assert_eq!(weights.keys().cloned().collect::<BTreeSet<_>>(), train);
    let mean = weights.values().sum::<f64>() / weights.len() as f64;
    assert!((mean - 1.0).abs() < 1e-9);

    let cmp: ComparisonReport = serde_json::from_slice(&std::fs::read(work.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp.rows.len(), 6);
    assert_eq!(cmp.n_cases, 6);
    for name in ["report.md", "cv_curve.svg", "weights_hist.svg", "dice_boxplots.svg"] {
        assert!(work.join("report").join(name).is_file(), "{name}");
    }
    for arm in ["uniform", "cognizant"] {
        assert_eq!(std::fs::read_dir(work.join("predictions").join(arm)).unwrap().count(), 6);
        assert!(work.join(arm).join("best.ckpt").is_file());
    }

    // the cognizant arm may differ from the uniform run only in sampling
    assert_eq!(code(root, &["retrain"], &["--train.lr0", "0.01"]), 2);
    assert_eq!(code(root, &["retrain"], &[]), 0);

    // a tampered artifact is refused
    let split_path = work.join("split.json");
    let original = std::fs::read(&split_path).unwrap();
    std::fs::write(&split_path, b"{}").unwrap();
    assert_eq!(code(root, &["preprocess"], &[]), 3);
    std::fs::write(&split_path, original).unwrap();
    assert_eq!(code(root, &["compare"], &[]), 0);
}

#[test]
fn missing_inputs_and_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(root, &["preprocess"], &[]), 3);
    assert_eq!(code(root, &["train", "--sampling", "uniform"], &[]), 3);
    assert_eq!(code(root, &["synth"], &["--train.no_such_key", "1"]), 2);
    assert_eq!(code(root, &["synth"], &["--train.batch_size", "0"]), 2);
    assert_eq!(code(root, &["no-such-command"], &[]), 2);
    assert!(run_args(vec!["--help".into()]).is_ok());
    assert!(run_args(vec!["show-config".into(), "--preset".into(), "smoke".into()]).is_ok());
}
