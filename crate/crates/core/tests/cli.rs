use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
r = 5
trials = 2
method = pca knn 3
method = pca svm localized N=8 q=6 gamma=0.8 C=1
synthetic.classes = 2
synthetic.subjects = 2
synthetic.per_cell = 6
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lockernel")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn kernel_eval_prints_grid() {
    let o = run(&["kernel-eval", "--N", "1", "--q", "2", "--steps", "4"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,phi");
    assert_eq!(lines.len(), 6);
    let phi: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(phi.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn kernel_eval_writes_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.csv");
    let o = run(&["kernel-eval", "--N", "8", "--q", "18", "--output", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(path).unwrap().lines().count(), 202);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&run(&["kernel-eval", "--N", "4", "--q", "2", "--steps", "0"])), 2);
    assert_eq!(code(&run(&["kernel-eval", "--N", "4", "--q", "0"])), 2);
    assert_eq!(code(&run(&["verify"])), 2);
    assert_eq!(code(&run(&["verify", "--benchmark", "nope"])), 2);
    assert_eq!(code(&run(&["experiment", "--manifest", "/nonexistent/manifest.csv"])), 2);
    assert_eq!(code(&run(&["experiment"])), 2);
}

#[test]
fn bad_config_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "r = 5\nbogus = 1\n").unwrap();
    let o = run(&["experiment", "--synthetic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("bogus") && err.contains('2'), "{err}");
}

#[test]
fn verify_reduction_passes() {
    let o = run(&["verify", "--benchmark", "reduction"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}

#[test]
fn experiment_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let o = run(&["--seed", "3", "experiment", "--synthetic", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let acc = fs::read_to_string(out.join("results_accuracy.csv")).unwrap();
    let mut lines = acc.lines();
    assert_eq!(lines.next().unwrap(), "method,r,Average Accuracy (%),Accuracy Variance");
    assert_eq!(lines.count(), 2);
    let full = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(full.lines().next().unwrap().ends_with("Train Time Variance"));
    let manifest = fs::read_to_string(out.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 3"));
    let hash = manifest.lines().find_map(|l| l.strip_prefix("config_sha256 = ")).unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let read = |name: &str| {
        let out = dir.path().join(name);
        assert_eq!(code(&run(&["experiment", "--synthetic", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
        fs::read(out.join("results_accuracy.csv")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn sweeps_and_holdout_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("dim");
    let o = run(&["sweep-dim", "--synthetic", "--config", &cfg, "--r-values", "2..4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let acc = fs::read_to_string(out.join("results_accuracy.csv")).unwrap();
    assert_eq!(acc.lines().filter(|l| l.contains("PCA 3-NN")).count(), 3);
    assert!(acc.starts_with("r,method,"));

    let out = dir.path().join("frac");
    let o = run(&["sweep-frac", "--synthetic", "--config", &cfg, "--fractions", "0.5,1.0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let out = dir.path().join("hold");
    let o = run(&["holdout", "--synthetic", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let acc = fs::read_to_string(out.join("results_accuracy.csv")).unwrap();
    assert!(acc.contains('A') && acc.contains('B'));
}

#[test]
fn features_pca_emits_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = run(&["features", "--synthetic", "--config", &cfg, "--kind", "pca", "--r", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("features.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "sample,label,subject,c0,c1,c2");
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 6);
}
