//! Acceptance gate. Runs every criterion, prints one `PASS`/`FAIL` line each, and exits
//! nonzero if any criterion fails or exceeds its runtime budget.

use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lockernel::approximation::{fit_empirical, minimal_separation};
use lockernel::classify::knn_predict;
use lockernel::experiments::{
    gen_circle, gen_synthetic_gestures, run_experiment, Dataset, ExperimentConfig, GestureGenConfig, Method,
};
use lockernel::features::{arma_fit, FeatureVec, NormalizeMode};
use lockernel::hermite::{hermite_batch, LocalizedKernelSpec};
use lockernel::kernels::{gram, grassmann_kernel, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(id: u32, title: &str, pass: bool, elapsed: Duration, budget: Duration, detail: String) -> bool {
    let ok = pass && elapsed < budget;
    println!(
        "{} criterion {id:>2} {title}: {detail} [{:.3}s / {:.0}s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    ok
}

/// `ψ_k(x)` for `k = 0..=k_max` from the three-term recurrence on the Hermite functions.
fn psi_oracle(k_max: usize, x: f64) -> Vec<f64> {
    let mut v = vec![0.0; k_max + 1];
    v[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if k_max >= 1 {
        v[1] = std::f64::consts::SQRT_2 * x * v[0];
    }
    for k in 2..=k_max {
        let kf = k as f64;
        v[k] = (2.0 / kf).sqrt() * x * v[k - 1] - ((kf - 1.0) / kf).sqrt() * v[k - 2];
    }
    v
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

fn c01_gaussian_reduction() -> bool {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for q in [1u32, 2, 18] {
        let k = LocalizedKernelSpec::new(1.0, q, 1.0).unwrap();
        let peak = k.eval(0.0);
        for i in 0..=200 {
            let x = 5.0 * i as f64 / 200.0;
            worst = worst.max((k.eval(x) * (0.5 * x * x).exp() / peak - 1.0).abs());
        }
    }
    report(1, "Gaussian reduction at N=1", worst < 1e-10, t.elapsed(), Duration::from_secs(1), format!("max deviation {worst:.3e} (< 1e-10)"))
}

fn c02_clenshaw_matches_naive_sum() -> bool {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for n in [1.0, 2.0, 4.0, 8.0] {
        for q in [1u32, 2, 10, 18] {
            let k = LocalizedKernelSpec::new(n, q, 1.0).unwrap();
            let c = k.coeffs();
            for i in 0..=1000 {
                let x = 10.0 * i as f64 / 1000.0;
                let psi = psi_oracle(2 * (c.len() - 1), x);
                let naive: f64 = c.iter().enumerate().map(|(l, cl)| cl * psi[2 * l]).sum();
                let scale: f64 = c.iter().enumerate().map(|(l, cl)| (cl * psi[2 * l]).abs()).sum();
                if scale == 0.0 {
                    continue;
                }
                worst = worst.max((k.eval(x) - naive).abs() / scale);
            }
        }
    }
    report(
        2,
        "Clenshaw vs naive summation",
        worst < 1e-10,
        t.elapsed(),
        Duration::from_secs(5),
        format!("max relative deviation {worst:.3e} (< 1e-10)"),
    )
}

fn c03_orthonormality() -> bool {
    let t = Instant::now();
    let (half, steps) = (12.0, 4800usize);
    let h = 2.0 * half / steps as f64;
    let mut g = vec![vec![0.0; 21]; 21];
    for i in 0..=steps {
        let x = -half + i as f64 * h;
        let w = if i == 0 || i == steps { 0.5 * h } else { h };
        let e = hermite_batch(20, x).unwrap();
        let damp = (-x * x).exp();
        for j in 0..=20 {
            for k in 0..=20 {
                g[j][k] += w * e.values[j] * e.values[k] * damp;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for (j, row) in g.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            worst = worst.max((v - if j == k { 1.0 } else { 0.0 }).abs());
        }
    }
    report(3, "Hermite orthonormality j,k <= 20", worst < 1e-6, t.elapsed(), Duration::from_secs(5), format!("max defect {worst:.3e} (< 1e-6)"))
}

fn c04_localization_envelope() -> bool {
    let t = Instant::now();
    let s = 4;
    let constant = |n: f64| {
        let k = LocalizedKernelSpec::new(n, 2, 1.0).unwrap();
        (0..=20_000)
            .map(|i| {
                let x = 20.0 * i as f64 / 20_000.0;
                k.eval(x).abs() * (n * x).powi(s).max(1.0) / n.powi(2)
            })
            .fold(0.0, f64::max)
    };
    let (c4, c8) = (constant(4.0), constant(8.0));
    let ratio = c4.max(c8) / c4.min(c8);
    report(
        4,
        "localization envelope, q=2, S=4",
        ratio < 3.0,
        t.elapsed(),
        Duration::from_secs(5),
        format!("constants {c4:.4} (N=4), {c8:.4} (N=8), ratio {ratio:.3} (< 3)"),
    )
}

struct Circle {
    nodes: Vec<FeatureVec>,
    values: Vec<f64>,
    probes: Vec<DVector<f64>>,
    truth: Vec<f64>,
    eta: f64,
}

fn circle(noise: f64) -> Circle {
    let set = gen_circle(3, 20, noise, 42).unwrap();
    let nodes = set.node_features();
    let (probe_feats, truth) = set.probes(1000);
    let probes = probe_feats.iter().map(|p| DVector::from_column_slice(p.coords().unwrap())).collect();
    let pts: Vec<DVector<f64>> = set.points.row_iter().map(|r| r.transpose()).collect();
    let eta = minimal_separation(&pts, |a, b| (a - b).norm()).unwrap();
    Circle { nodes, values: set.truth.clone(), probes, truth, eta }
}

fn node_coords(c: &Circle) -> Vec<DVector<f64>> {
    c.nodes.iter().map(|n| DVector::from_column_slice(n.coords().unwrap())).collect()
}

/// Direct kernel sum `Σ a_k Φ(γ|x − y_k|)`.
fn model_at(k: &LocalizedKernelSpec, coeffs: &DVector<f64>, nodes: &[DVector<f64>], x: &DVector<f64>) -> f64 {
    coeffs.iter().zip(nodes).map(|(a, y)| a * k.eval(k.gamma() * (x - y).norm())).sum()
}

fn c05_interpolation_exactness() -> bool {
    let t = Instant::now();
    let c = circle(0.0);
    let k = LocalizedKernelSpec::new(8.0, 1, 2.0).unwrap();
    let model = fit_empirical(&KernelSpec::Localized(k.clone()), &c.nodes, &c.values).unwrap();
    let ys = node_coords(&c);
    let residual = ys
        .iter()
        .zip(&c.values)
        .map(|(y, f)| (model_at(&k, &model.coeffs, &ys, y) - f).abs())
        .fold(0.0, f64::max);
    let dominance = (0..ys.len())
        .map(|i| {
            let off: f64 = (0..ys.len()).filter(|&j| j != i).map(|j| k.eval(k.gamma() * (&ys[i] - &ys[j]).norm()).abs()).sum();
            off / k.eval(0.0)
        })
        .fold(0.0, f64::max);
    report(
        5,
        "interpolation on the circle, M=20, N=8",
        residual < 1e-8 && dominance < 0.5,
        t.elapsed(),
        Duration::from_secs(10),
        format!("max node residual {residual:.3e} (< 1e-8), dominance {dominance:.4} (< 0.5)"),
    )
}

fn c06_far_field_decay() -> bool {
    let t = Instant::now();
    let c = circle(0.0);
    let ys = node_coords(&c);
    let radius = (c.eta / 3.0).min(1.0) / 3.0;
    let far: Vec<&DVector<f64>> =
        c.probes.iter().filter(|x| ys.iter().map(|y| (*x - y).norm()).fold(f64::INFINITY, f64::min) > radius).collect();
    let sup = |n: f64| {
        let k = LocalizedKernelSpec::new(n, 1, 2.0).unwrap();
        let model = fit_empirical(&KernelSpec::Localized(k.clone()), &c.nodes, &c.values).unwrap();
        far.iter().map(|x| model_at(&k, &model.coeffs, &ys, x).abs()).fold(0.0, f64::max)
    };
    let (s4, s8) = (sup(4.0), sup(8.0));
    report(
        6,
        "far-field sup decreases N=4 -> N=8",
        !far.is_empty() && s8 < s4,
        t.elapsed(),
        Duration::from_secs(10),
        format!("{} far probes, sup |P| {s4:.6} (N=4) -> {s8:.6} (N=8)", far.len()),
    )
}

fn c07_overfitting_tradeoff() -> bool {
    let t = Instant::now();
    let c = circle(0.02);
    let ys = node_coords(&c);
    let ns = [2.0, 4.0, 8.0, 16.0];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let k = LocalizedKernelSpec::new(n, 1, 1.0).unwrap();
            let model = fit_empirical(&KernelSpec::Localized(k.clone()), &c.nodes, &c.values).unwrap();
            c.probes
                .iter()
                .zip(&c.truth)
                .map(|(x, f)| (model_at(&k, &model.coeffs, &ys, x) - f).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let best = (0..ns.len()).min_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap();
    report(
        7,
        "sup error minimized at interior N",
        best > 0 && best + 1 < ns.len(),
        t.elapsed(),
        Duration::from_secs(30),
        format!("sup errors {errs:.4?} at N={ns:?}, minimum at N={}", ns[best]),
    )
}

fn c08_arma_recovery() -> bool {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (p, d, tau) = (8usize, 3usize, 100usize);
    let (th, rho) = (0.3f64, 0.99);
    let a = DMatrix::from_row_slice(3, 3, &[rho * th.cos(), -rho * th.sin(), 0.0, rho * th.sin(), rho * th.cos(), 0.0, 0.0, 0.0, 0.97]);
    let c_true = DMatrix::from_fn(p, d, |_, _| StandardNormal.sample(&mut rng));
    let mut z = DVector::from_fn(d, |_, _| rng.random_range(0.5..1.5));
    let mut series = DMatrix::zeros(p, tau);
    for i in 0..tau {
        series.set_column(i, &(&c_true * &z));
        z = &a * z;
    }
    let fit = arma_fit(&series, d).unwrap();
    let q_true = c_true.clone().qr().q();
    let residual = &fit.c - &q_true * (q_true.transpose() * &fit.c);
    let angle = residual.singular_values().max().min(1.0).asin();
    let mut pred_err: f64 = 0.0;
    for i in 0..tau - 1 {
        let f_next = &fit.c * (&fit.a * (fit.c.transpose() * series.column(i)));
        let truth = series.column(i + 1);
        pred_err = pred_err.max((f_next - truth).norm() / truth.norm());
    }
    report(
        8,
        "ARMA recovery p=8, d=3, tau=100",
        angle < 1e-6 && pred_err < 1e-6,
        t.elapsed(),
        Duration::from_secs(1),
        format!("subspace angle {angle:.3e} (< 1e-6), one-step error {pred_err:.3e} (< 1e-6)"),
    )
}

fn c09_grassmann_kernel() -> bool {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rot_dev: f64 = 0.0;
    let mut bases = Vec::new();
    for _ in 0..12 {
        let g = DMatrix::from_fn(20, 4, |_, _| StandardNormal.sample(&mut rng));
        let u = g.qr().q();
        bases.push(u);
    }
    let mut exact_one = true;
    for u1 in &bases {
        exact_one &= grassmann_kernel(u1, u1, 0.2).unwrap() == 1.0;
        for u2 in &bases {
            let r = random_orthogonal(4, &mut rng);
            let a = grassmann_kernel(u1, u2, 0.2).unwrap();
            let b = grassmann_kernel(&(u1 * &r), u2, 0.2).unwrap();
            rot_dev = rot_dev.max((a - b).abs());
        }
    }
    let points: Vec<FeatureVec> = bases
        .iter()
        .map(|u| FeatureVec::Grassmann(lockernel::features::GrassmannPoint::new(u.clone()).unwrap()))
        .collect();
    let g = gram(&KernelSpec::grassmann_default(), &points).unwrap();
    let symmetric = g.entries == g.entries.transpose();
    report(
        9,
        "Grassmann kernel invariances",
        rot_dev < 1e-10 && exact_one && symmetric,
        t.elapsed(),
        Duration::from_secs(1),
        format!("rotation deviation {rot_dev:.3e} (< 1e-10), k(U,U)=1 exactly: {exact_one}, Gram symmetric: {symmetric}"),
    )
}

fn gesture_config() -> (Dataset, ExperimentConfig) {
    let ds: Dataset = gen_synthetic_gestures(&GestureGenConfig::default(), 42).unwrap().into();
    let cfg = ExperimentConfig {
        normalize: NormalizeMode::Unit,
        r: 30,
        methods: vec![Method::pca_svm(KernelSpec::localized(8.0, 18, 0.8).unwrap()), Method::pca_knn(5)],
        trials: 5,
        seed: 42,
        ..Default::default()
    };
    (ds, cfg)
}

fn c10_gesture_end_to_end() -> bool {
    let t = Instant::now();
    let (ds, cfg) = gesture_config();
    assert_eq!(ds.len(), 4 * 6 * 25);
    let table = run_experiment(&cfg, &ds).unwrap();
    let loc = table.row("PCA LocSVM64").unwrap();
    let knn = table.row("PCA KNN").unwrap();
    let gap = (loc.accuracy_mean - knn.accuracy_mean).abs();
    report(
        10,
        "synthetic gestures, PCA(30) LocSVM64 vs 5-NN",
        loc.trials_ok == 5 && knn.trials_ok == 5 && loc.accuracy_mean >= 90.0 && gap <= 5.0,
        t.elapsed(),
        Duration::from_secs(180),
        format!(
            "LocSVM64 {:.2}% (var {:.3}), KNN {:.2}% (var {:.3}), gap {gap:.2} (LocSVM64 >= 90, gap <= 5)",
            loc.accuracy_mean, loc.accuracy_var, knn.accuracy_mean, knn.accuracy_var
        ),
    )
}

fn c11_determinism() -> bool {
    let t = Instant::now();
    let (ds1, cfg) = gesture_config();
    let a = run_experiment(&cfg, &ds1).unwrap().to_csv(false);
    let (ds2, _) = gesture_config();
    let b = run_experiment(&cfg, &ds2).unwrap().to_csv(false);
    report(
        11,
        "rerun with the same seed is byte-identical",
        a == b && a.lines().count() == 3,
        t.elapsed(),
        Duration::from_secs(360),
        format!("{} bytes of CSV without timing columns, identical: {}", a.len(), a == b),
    )
}

/// Brute force: repeated linear scans for the next nearest unused point, then a vote.
fn knn_oracle(train: &[[f64; 2]], labels: &[usize], x: &[f64; 2], k: usize) -> usize {
    let dist = |p: &[f64; 2]| ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
    let mut used = vec![false; train.len()];
    let mut picked = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..train.len() {
            if used[i] {
                continue;
            }
            if best.is_none_or(|b| dist(&train[i]) < dist(&train[b])) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        used[b] = true;
        picked.push(b);
    }
    let max_label = labels.iter().copied().max().unwrap();
    let mut winner = None;
    let mut best_count = 0;
    let mut best_mean = f64::INFINITY;
    for label in 0..=max_label {
        let ds: Vec<f64> = picked.iter().filter(|&&i| labels[i] == label).map(|&i| dist(&train[i])).collect();
        if ds.is_empty() {
            continue;
        }
        let mean = ds.iter().sum::<f64>() / ds.len() as f64;
        if ds.len() > best_count || (ds.len() == best_count && mean < best_mean) {
            winner = Some(label);
            best_count = ds.len();
            best_mean = mean;
        }
    }
    winner.unwrap()
}

fn c12_knn_oracle() -> bool {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Integer coordinates make equal distances common, exercising every tie rule.
    let train: Vec<[f64; 2]> = (0..150).map(|_| [rng.random_range(0..8) as f64, rng.random_range(0..8) as f64]).collect();
    let labels: Vec<usize> = (0..150).map(|_| rng.random_range(0..3)).collect();
    let queries: Vec<[f64; 2]> =
        (0..200).map(|_| [rng.random_range(0..16) as f64 / 2.0, rng.random_range(0..16) as f64 / 2.0]).collect();
    let metric = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut mismatches = 0;
    for x in &queries {
        for k in [1usize, 4, 5] {
            if knn_predict(&train, &labels, x, k, metric).unwrap() != knn_oracle(&train, &labels, x, k) {
                mismatches += 1;
            }
        }
    }
    report(
        12,
        "KNN matches brute-force scan",
        mismatches == 0,
        t.elapsed(),
        Duration::from_secs(1),
        format!("{mismatches} mismatches over 200 queries x k in {{1,4,5}}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> bool); 12] = [
        (1, c01_gaussian_reduction),
        (2, c02_clenshaw_matches_naive_sum),
        (3, c03_orthonormality),
        (4, c04_localization_envelope),
        (5, c05_interpolation_exactness),
        (6, c06_far_field_decay),
        (7, c07_overfitting_tradeoff),
        (8, c08_arma_recovery),
        (9, c09_grassmann_kernel),
        (10, c10_gesture_end_to_end),
        (11, c11_determinism),
        (12, c12_knn_oracle),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        match panic::catch_unwind(run) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(_) => {
                println!("FAIL criterion {id:>2}: panicked");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
