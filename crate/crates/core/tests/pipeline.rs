use std::collections::BTreeSet;
use std::fs;

use lockernel::experiments::{
    gen_synthetic_gestures, holdout_subject, run_experiment, stratified_split, sweep_train_fraction, Dataset,
    ExperimentConfig, GestureGenConfig, Method,
};
use lockernel::io::{load_manifest, spectrogram_to_csv, RunSpec};
use lockernel::kernels::KernelSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_set(seed: u64) -> Dataset {
    let cfg = GestureGenConfig { classes: 3, subjects: 3, per_cell: 5, ..Default::default() };
    gen_synthetic_gestures(&cfg, seed).unwrap().into()
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        r: 6,
        trials: 2,
        methods: vec![Method::pca_knn(3), Method::pca_svm(KernelSpec::localized(8.0, 6, 0.8).unwrap())],
        ..Default::default()
    }
}

#[test]
fn manifest_roundtrip_matches_in_memory_run() {
    let ds = small_set(5);
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::from("path,label,subject\n");
    for (i, s) in ds.samples.iter().enumerate() {
        let name = format!("s{i}.csv");
        fs::write(dir.path().join(&name), spectrogram_to_csv(s)).unwrap();
        manifest.push_str(&format!("{name},{},{}\n", ds.labels[i], ds.subjects[i]));
    }
    let mpath = dir.path().join("manifest.csv");
    fs::write(&mpath, manifest).unwrap();
    let loaded = load_manifest(&mpath).unwrap();
    assert_eq!(loaded.labels, ds.labels);
    assert_eq!(loaded.subjects, ds.subjects);

    let cfg = small_config();
    let a = run_experiment(&cfg, &ds).unwrap().to_csv(false);
    let b = run_experiment(&cfg, &loaded).unwrap().to_csv(false);
    assert_eq!(a, b);
}

#[test]
fn stratified_split_partitions_and_balances() {
    let ds = small_set(1);
    let idx: Vec<usize> = (0..ds.labels.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (train, test) = stratified_split(&idx, &ds.labels, 0.8, &mut rng);
    let all: BTreeSet<usize> = train.iter().chain(&test).copied().collect();
    assert_eq!(all.len(), idx.len());
    assert_eq!(train.len() + test.len(), idx.len());
    for class in 0..3 {
        let n = train.iter().filter(|&&i| ds.labels[i] == class).count();
        assert_eq!(n, 12);
    }
}

#[test]
fn full_fraction_reproduces_run_experiment() {
    let ds = small_set(2);
    let cfg = small_config();
    let base = run_experiment(&cfg, &ds).unwrap();
    let sweep = sweep_train_fraction(&cfg, &ds, &[1.0]).unwrap();
    assert_eq!(sweep.len(), 1);
    for (a, b) in base.rows.iter().zip(&sweep[0].rows) {
        assert_eq!(a.accuracy_mean, b.accuracy_mean);
        assert_eq!(a.accuracy_var, b.accuracy_var);
    }
}

#[test]
fn holdout_reports_one_table_per_subject() {
    let ds = small_set(3);
    let tables = holdout_subject(&small_config(), &ds).unwrap();
    assert_eq!(tables.len(), 3);
    for t in &tables {
        assert_eq!(t.rows.len(), 2);
        for r in &t.rows {
            assert!((0.0..=100.0).contains(&r.accuracy_mean));
        }
    }
}

#[test]
fn run_spec_canonical_form_roundtrips() {
    let text = "r = 12\ntrials = 3\nseed = 9\nmethod = pca knn 7\nfeature_scale = nn:1.5\nsynthetic.noise = 0.1\n";
    let spec = RunSpec::parse(text).unwrap();
    let again = RunSpec::parse(&spec.to_kv()).unwrap();
    assert_eq!(spec.to_kv(), again.to_kv());
    assert_eq!(spec.hash(), again.hash());
    assert_ne!(spec.hash(), RunSpec::default().hash());
}
