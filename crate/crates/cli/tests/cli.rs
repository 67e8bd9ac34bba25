use haptic_core::bench::{Catalog, ExperimentPlan};
use haptic_core::Config;
use std::path::Path;
use std::process::{Command, Output};

fn bench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haptic-bench"))
        .arg("--out")
        .arg(dir)
        .arg("--catalog")
        .arg(dir.join("catalog.json"))
        .arg("--plan")
        .arg(dir.join("plan.toml"))
        .args(["--jobs", "2"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bench(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup(dir: &Path) {
    std::fs::write(dir.join("catalog.json"), Catalog::standard().truncated(3).to_text()).unwrap();
    let plan = ExperimentPlan {
        seed: 5,
        trials: 4,
        curve_sizes: vec![1, 2],
        curve_test: 1,
        curve_repeats: 2,
        ..Default::default()
    };
    std::fs::write(dir.join("plan.toml"), plan.to_text()).unwrap();
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn piecewise_pipeline_matches_full_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(d, &["gen-demos"]);
    ok(d, &["fit-gmm"]);
    assert!(ok(d, &["collect", "--mode", "full"]).starts_with("12 trials, 0 failed"));
    ok(d, &["collect", "--mode", "benchmark"]);
    for f in ["demos.csv", "dataset_full.csv", "dataset_benchmark.csv"] {
        assert!(first_line(&d.join(f)).starts_with("# schema="), "{f}");
    }
    assert!(first_line(&d.join("gmm.txt")).starts_with("schema="));

    let table = ok(d, &["ablate"]);
    assert_eq!(table.lines().count(), 5);
    ok(d, &["ablate", "--mode", "benchmark"]);
    ok(d, &["ablate", "--ycb-only"]);
    ok(d, &["curve"]);
    ok(d, &["curve", "--mode", "benchmark"]);
    assert!(ok(d, &["compare"]).contains("gap"));
    let summary = ok(d, &["report"]);
    assert!(summary.contains("seed"));
    let piecewise = std::fs::read_to_string(d.join("bundle.json")).unwrap();

    ok(d, &["report", "--analyze"]);
    let analyzed = std::fs::read_to_string(d.join("bundle.json")).unwrap();
    assert_eq!(piecewise, analyzed);
    for f in ["summary.txt", "accuracy.csv", "learning_curve.csv", "confusion_full.csv"] {
        assert!(d.join("report").join(f).exists(), "{f}");
    }

    ok(d, &["train", "--subset", "all-encoders"]);
    let model = d.join("classifier_full_all-encoders.txt");
    let eval = ok(d, &["eval", "--model", model.to_str().unwrap(), "--dataset", d.join("dataset_full.csv").to_str().unwrap()]);
    assert!(eval.starts_with("accuracy"), "{eval}");
    ok(d, &["train", "--lambda", "0.001", "--sigma-factor", "1"]);
}

#[test]
fn collection_replays_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        setup(d);
        ok(d, &["collect", "--mode", "benchmark", "--jobs", "1"]);
    }
    let read = |d: &Path| std::fs::read(d.join("dataset_benchmark.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    ok(a.path(), &["collect", "--mode", "benchmark", "--seed", "6"]);
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn exit_codes_separate_bad_input_from_failed_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    assert_eq!(bench(d, &["collect", "--mode", "sideways"]).status.code(), Some(2));
    assert_eq!(bench(d, &["curve", "--subset", "nope"]).status.code(), Some(2));
    // full mode without a fitted model
    assert_eq!(bench(d, &["collect", "--mode", "full"]).status.code(), Some(2));
    assert_eq!(bench(d, &["report"]).status.code(), Some(2));
    std::fs::write(d.join("plan.toml"), "schema=\"haptic-plan/1\"\ntrials = 0\n").unwrap();
    assert_eq!(bench(d, &["gen-demos"]).status.code(), Some(2));

    // every trial times out
    setup(d);
    let mut cfg = Config::default();
    cfg.trial.timeout = 0.01;
    std::fs::write(d.join("config.toml"), cfg.to_text()).unwrap();
    let out = bench(d, &["--config", d.join("config.toml").to_str().unwrap(), "collect", "--mode", "benchmark"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed after retries"));
}
