use lockernel::classify::{knn_predict, svm_train_binary, LabelFunction};
use lockernel::features::{fit_pca, FeatureVec, GrassmannPoint};
use lockernel::hermite::LocalizedKernelSpec;
use lockernel::kernels::{gram, grassmann_kernel, KernelSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn flat_points(n: usize, dim: usize, seed: u64, scale: f64) -> Vec<FeatureVec> {
    let g = gaussian(n, dim, seed);
    g.row_iter().map(|r| FeatureVec::Flat(r.transpose() * scale)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn localized_gram_is_symmetric_with_constant_diagonal(
        seed in any::<u64>(), n in 2usize..16, q in 1u32..20, big_n in 1.0f64..12.0, gamma in 0.1f64..3.0,
    ) {
        let spec = KernelSpec::localized(big_n, q, gamma).unwrap();
        let g = gram(&spec, &flat_points(n, 3, seed, 1.0)).unwrap();
        let peak = LocalizedKernelSpec::new(big_n, q, gamma).unwrap().eval(0.0);
        for i in 0..n {
            prop_assert_eq!(g.entries[(i, i)], peak);
            for j in 0..n {
                prop_assert_eq!(g.entries[(i, j)], g.entries[(j, i)]);
            }
        }
    }

    #[test]
    fn gram_depends_only_on_gamma_times_distance(seed in any::<u64>(), n in 2usize..12, s in 0.2f64..5.0) {
        let a = gram(&KernelSpec::localized(6.0, 3, 1.0).unwrap(), &flat_points(n, 4, seed, 1.0)).unwrap();
        let b = gram(&KernelSpec::localized(6.0, 3, 1.0 / s).unwrap(), &flat_points(n, 4, seed, s)).unwrap();
        let peak = a.entries[(0, 0)].abs();
        prop_assert!((a.entries - b.entries).amax() <= 1e-10 * peak);
    }

    #[test]
    fn grassmann_kernel_is_invariant_under_basis_rotation(seed in any::<u64>(), d in 1usize..6) {
        let u1 = gaussian(12, d, seed).qr().q();
        let u2 = gaussian(12, d, seed.wrapping_add(1)).qr().q();
        let r = gaussian(d, d, seed.wrapping_add(2)).qr().q();
        let a = grassmann_kernel(&u1, &u2, 0.5).unwrap();
        let b = grassmann_kernel(&(&u1 * &r), &(&u2 * r.transpose()), 0.5).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!((a - grassmann_kernel(&u2, &u1, 0.5).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn pca_projection_is_affine_and_centered(seed in any::<u64>(), m in 4usize..20, dim in 3usize..10, t in -2.0f64..2.0) {
        let x = gaussian(m, dim, seed);
        let r = dim.min(m - 1).min(3);
        let basis = fit_pca(&x, r).unwrap();
        let ctc = basis.components.transpose() * &basis.components;
        prop_assert!((ctc - DMatrix::identity(r, r)).amax() < 1e-10);
        let mean: Vec<f64> = basis.mean.iter().copied().collect();
        prop_assert!(basis.project(&mean).unwrap().amax() < 1e-10);
        let a: Vec<f64> = x.row(0).iter().copied().collect();
        let b: Vec<f64> = x.row(1).iter().copied().collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(p, q)| t * p + (1.0 - t) * q).collect();
        let lhs = basis.project(&mix).unwrap();
        let rhs = basis.project(&a).unwrap() * t + basis.project(&b).unwrap() * (1.0 - t);
        prop_assert!((lhs - rhs).amax() < 1e-9);
    }

    #[test]
    fn svm_dual_solution_is_feasible(seed in any::<u64>(), n in 4usize..30, c in 0.1f64..10.0) {
        let pts = flat_points(n, 2, seed, 1.0);
        let labels: Vec<f64> =
            pts.iter().map(|p| if p.coords().unwrap()[0] > 0.0 { 1.0 } else { -1.0 }).collect();
        prop_assume!(labels.contains(&1.0) && labels.contains(&-1.0));
        let g = gram(&KernelSpec::EuclideanRbf { gamma: 0.5 }, &pts).unwrap();
        let model = svm_train_binary(&g, &labels, c).unwrap();
        let sum: f64 = model.support_coeffs.iter().sum();
        prop_assert!(sum.abs() < 1e-9 * c * n as f64);
        for (&coeff, &id) in model.support_coeffs.iter().zip(&model.support_ids) {
            prop_assert!(coeff.abs() <= c * (1.0 + 1e-12));
            prop_assert!(coeff * labels[id] > 0.0);
        }
        prop_assert!(model.kkt_violation < 1e-3 * 1.01);
    }

    #[test]
    fn label_function_recovers_labels(labels in prop::collection::vec(0usize..6, 1..60)) {
        let f = LabelFunction::from_labels(&labels);
        prop_assert!(f.is_consistent());
        for (i, &l) in labels.iter().enumerate() {
            prop_assert_eq!(f.label(i), Some(l));
        }
    }

    #[test]
    fn one_nn_returns_label_of_a_training_point(seed in any::<u64>(), n in 1usize..25) {
        let pts: Vec<DVector<f64>> = gaussian(n, 3, seed).row_iter().map(|r| r.transpose()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        for (i, p) in pts.iter().enumerate() {
            prop_assert_eq!(knn_predict(&pts, &labels, p, 1, |a, b| (a - b).norm()).unwrap(), labels[i]);
        }
    }

    #[test]
    fn grassmann_points_reject_non_orthonormal_bases(seed in any::<u64>()) {
        let g = gaussian(6, 2, seed) * 3.0;
        prop_assert!(GrassmannPoint::new(g).is_err());
    }
}
