use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn fusion(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusion"))
        .args(args)
        .env("FUSION_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = fusion(&["selftest"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn run_writes_report_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let o = fusion(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.csv", "timing.csv", "accuracy.svg", "results.json", "config.toml"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let first = std::fs::read(dir.path().join("results.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().next(), Some("variant,k,seed,num_classes,accuracy"));
    // two variants, two seeds, four test classes
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 4);

    let o = fusion(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(dir.path().join("results.csv")).unwrap(), first);

    std::fs::remove_file(dir.path().join("results.csv")).unwrap();
    let o = fusion(&["report", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(dir.path().join("results.csv")).unwrap(), first);
}

#[test]
fn sweep_flags_one_best_value_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let o = fusion(
        &["sweep", smoke().to_str().unwrap(), "--param", "k", "--values", "3,6"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for variant in ["meml", "oml"] {
        let best = rows.iter().filter(|r| r[1] == variant && r[4] == "true").count();
        assert_eq!(best, 1, "{variant}");
    }
    assert!(dir.path().join("k=3/results.csv").is_file());
    assert!(dir.path().join("k=6/results.csv").is_file());
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[training]\nsteps = 0\n").unwrap();
    assert_eq!(code(&fusion(&["run", bad.to_str().unwrap()], dir.path())), 1);
    std::fs::write(&bad, "[clustering]\nkay = 3\n").unwrap();
    assert_eq!(code(&fusion(&["run", bad.to_str().unwrap()], dir.path())), 1);
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&fusion(&["run", missing.to_str().unwrap()], dir.path())), 1);
    assert_eq!(code(&fusion(&["frobnicate"], dir.path())), 1);
    let o = fusion(&["sweep", smoke().to_str().unwrap(), "--param", "nope", "--values", "1"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // results dir without a results.json
    assert_eq!(code(&fusion(&["report", dir.path().to_str().unwrap()], dir.path())), 2);
    // more clusters than images per class allows: every seed fails inside the pipeline
    let cfg = dir.path().join("k.toml");
    let text = std::fs::read_to_string(smoke()).unwrap().replace("k = 6", "k = 400");
    std::fs::write(&cfg, text).unwrap();
    let o = fusion(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}
