use std::path::Path;
use std::process::{Command, Output};

const FAST: &[&str] = &[
    "--data.synthetic",
    "two-clusters",
    "--data.synthetic_train_records",
    "512",
    "--data.synthetic_test_records",
    "256",
    "--wavelet.sw",
    "64",
    "--wavelet.levels",
    "2",
    "--sae.pretrain_epochs",
    "2",
    "--sae.finetune_epochs",
    "2",
    "--classifier.epochs",
    "3",
    "--experiment.folds",
    "3",
];

fn msrc(args: &[&str], out: &Path) -> Output {
    let out = format!("--experiment.output_dir={}", out.display());
    Command::new(env!("CARGO_BIN_EXE_msrc"))
        .args(args)
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn with_fast<'a>(command: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![command];
    v.extend_from_slice(FAST);
    v.extend_from_slice(extra);
    v
}

#[test]
fn config_errors_exit_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = msrc(&["train", "--wavelet.sw", "800", "--wavelet.levels", "10"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[config]") && err.contains("floor(log2(800)) = 9"), "{err}");

    let o = msrc(&["cv", "--data.train", "/definitely/missing.csv"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("[ingest]"));

    let o = msrc(&["train", "--wavelet.colour", "red"], dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[data]\nsynthetic = \"two-clusters\"\n[wavelet]\nsw = 2048\nlevels = 2\n").unwrap();
    // sw exceeds the synthetic record counts until overridden
    let o = msrc(&["preprocess", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    let o = msrc(
        &["preprocess", "--config", cfg.to_str().unwrap(), "--wavelet.sw=64"],
        &dir.path().join("out"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/train_features.csv")).unwrap();
    assert_eq!(text.lines().count(), 2001);
}

#[test]
fn train_eval_cv_sweep_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = msrc(&with_fast("train", &[]), out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trained = std::fs::read_to_string(out.join("metrics.csv")).unwrap();

    let o = msrc(&with_fast("eval", &[]), out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let evaluated = std::fs::read_to_string(out.join("eval_metrics.csv")).unwrap();
    // the saved model scores the test split exactly as the trained one did
    assert_eq!(trained.lines().nth(2).unwrap().split_once(',').unwrap().1,
               evaluated.lines().nth(1).unwrap().split_once(',').unwrap().1);

    let o = msrc(&with_fast("cv", &[]), out);
    assert!(o.status.success());
    let cv = std::fs::read_to_string(out.join("cv_results.csv")).unwrap();
    assert_eq!(cv.lines().count(), 1 + 3 + 1);

    let o = msrc(&with_fast("sweep", &["--sweep.sw", "[4,64]", "--sweep.levels", "[2,6]"]), out);
    assert!(o.status.success());
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    assert!(sweep.contains("4,6,skipped"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipped"));

    let o = msrc(&["report"], out);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("spearman"));

    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    for f in ["model.ckpt", "cv_results.csv", "sweep.csv", "sweep_heatmap.svg", "eval_roc_test.svg"] {
        assert!(manifest.contains(f), "{f} missing from manifest");
    }
}

#[test]
fn report_on_empty_directory_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = msrc(&["report"], &dir.path().join("nothing"));
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("no results") && stdout.contains("nothing to export"), "{stdout}");
}

#[test]
fn synth_writes_loadable_nsl_kdd_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = Command::new(env!("CARGO_BIN_EXE_msrc"))
        .args(["synth", "--out", data.to_str().unwrap(), "--train-records", "300", "--test-records", "200"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = msrc(
        &[
            "preprocess",
            "--data.train",
            data.join("train.csv").to_str().unwrap(),
            "--data.test",
            data.join("test.csv").to_str().unwrap(),
            "--wavelet.sw",
            "64",
            "--wavelet.levels",
            "2",
        ],
        &dir.path().join("out"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let test = std::fs::read_to_string(dir.path().join("out/test_features.csv")).unwrap();
    // duplicates are dropped during cleaning
    let rows = test.lines().count() - 1;
    assert!((180..=200).contains(&rows), "{rows} rows");
}
