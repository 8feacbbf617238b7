mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use skpd::eval::{aggregate, sign_align, support_rates, EvalReport};
use skpd::simgen::{
    build_joint_covariance, generate_dataset, generate_xz, generate_y, make_ground_truth, CovFamily, SignalShape,
    SimConfig,
};

use common::{normal_matrix, small_config};

fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let ac = a.add_scalar(-ma);
    let bc = b.add_scalar(-mb);
    ac.dot(&bc) / (ac.norm() * bc.norm())
}

fn cov_strategy() -> impl Strategy<Value = CovFamily> {
    prop_oneof![
        Just(CovFamily::Identity),
        (0.1f64..0.95).prop_map(|decay| CovFamily::Toeplitz { decay })
    ]
}

fn shape_strategy() -> impl Strategy<Value = SignalShape> {
    prop_oneof![Just(SignalShape::one_block()), Just(SignalShape::Butterfly)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn outcome_correlation_is_exact(seed in any::<u64>(), rho2 in 0.0f64..0.999, n in 3usize..200) {
        let cfg = SimConfig { image_dims: vec![32, 32], ..small_config(seed) };
        let truth = make_ground_truth(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = normal_matrix(&mut rng, n, cfg.voxels());
        let y = generate_y(&images, &truth, rho2, seed).unwrap();
        let x_star = &images * DVector::from_column_slice(truth.c_true.data());
        prop_assert!((pearson(&y, &x_star) - rho2).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn joint_covariance_blocks_are_exact(seed in any::<u64>(), cov in cov_strategy(), rho1 in 0.0f64..0.95) {
        let cfg = SimConfig { cov_family: cov, rho1, ..small_config(seed) };
        let truth = make_ground_truth(&cfg).unwrap();
        let joint = build_joint_covariance(&cfg, &truth).unwrap();
        let m = joint.matrix();
        let (d, q) = (cfg.voxels(), cfg.q);
        prop_assert_eq!(m, &m.transpose());
        prop_assert_eq!(m.view((0, 0), (d, d)).into_owned(), cov.matrix(d));
        prop_assert_eq!(m.view((d, d), (q, q)).into_owned(), cov.matrix(q));
        // population canonical correlation of the planted directions
        let c = DVector::from_column_slice(truth.c_true.data());
        let t = DVector::from_vec(truth.theta_true.clone());
        let cross = m.view((0, d), (d, q)).into_owned();
        prop_assert!((c.dot(&(&cross * &t)) - rho1).abs() <= 1e-10);
    }

    #[test]
    fn theta_truth_is_equal_valued_and_unit(seed in any::<u64>(), s0 in 1usize..=15, shape in shape_strategy()) {
        let cfg = SimConfig { theta_sparsity: s0, shape, image_dims: vec![32, 32], ..small_config(seed) };
        let truth = make_ground_truth(&cfg).unwrap();
        let nz: Vec<f64> = truth.theta_unit.iter().copied().filter(|v| *v != 0.0).collect();
        prop_assert_eq!(nz.len(), s0);
        prop_assert!(nz.iter().all(|v| *v == nz[0]));
        let norm = truth.theta_unit.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-12);
        let again = make_ground_truth(&cfg).unwrap();
        prop_assert_eq!(again.theta_support, truth.theta_support);
    }

    #[test]
    fn generation_is_byte_identical(seed in any::<u64>()) {
        let cfg = small_config(seed);
        let (a, ta) = generate_dataset(&cfg).unwrap();
        let (b, tb) = generate_dataset(&cfg).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ta, tb);
        let truth = make_ground_truth(&cfg).unwrap();
        let joint = build_joint_covariance(&cfg, &truth).unwrap();
        let x1 = generate_xz(&cfg, &joint, seed).unwrap();
        let x2 = generate_xz(&cfg, &joint, seed).unwrap();
        prop_assert_eq!(x1, x2);
    }
}

fn sparse_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], 1..40)
}

proptest! {
    #[test]
    fn support_rates_ignore_positive_scale(est in sparse_vec(), scale in 1e-6f64..1e6, seed in any::<u64>()) {
        let truth: Vec<f64> = est
            .iter()
            .enumerate()
            .map(|(i, _)| if (seed >> (i % 64)) & 1 == 1 { 1.0 } else { 0.0 })
            .collect();
        // keep entries well clear of the zero threshold
        let est: Vec<f64> = est.iter().map(|v| if v.abs() < 1e-3 { 0.0 } else { *v }).collect();
        let scaled: Vec<f64> = est.iter().map(|v| v * scale).collect();
        prop_assert_eq!(support_rates(&est, &truth).unwrap(), support_rates(&scaled, &truth).unwrap());
    }

    #[test]
    fn sign_alignment_is_idempotent(
        theta in prop::collection::vec(-2.0f64..2.0, 6),
        c in prop::collection::vec(-2.0f64..2.0, 9),
        theta_true in prop::collection::vec(-2.0f64..2.0, 6),
        c_true in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let (t1, c1, _) = sign_align(&theta, &c, &theta_true, &c_true).unwrap();
        let (t2, c2, flipped) = sign_align(&t1, &c1, &theta_true, &c_true).unwrap();
        prop_assert!(!flipped);
        prop_assert_eq!((t1, c1), (t2, c2));
    }

    #[test]
    fn aggregate_means_ignore_order(values in prop::collection::vec(0.0f64..1.0, 1..25), rot in 0usize..25) {
        let reports: Vec<EvalReport> = values
            .iter()
            .enumerate()
            .map(|(i, v)| EvalReport {
                method: "m".into(),
                replicate: i,
                tpr_c: Some(*v),
                fpr_c: Some(1.0 - v),
                tpr_theta: None,
                fpr_theta: Some(v * 0.5),
                mse_c: v * 3.0,
                mse_theta: *v,
                wall_time_seconds: *v,
                degenerate: false,
            })
            .collect();
        let mut shuffled = reports.clone();
        shuffled.rotate_left(rot % reports.len());
        shuffled.reverse();
        let a = &aggregate(&reports).unwrap()[0];
        let b = &aggregate(&shuffled).unwrap()[0];
        for (x, y) in [(a.tpr_c, b.tpr_c), (a.fpr_c, b.fpr_c), (a.mse_c, b.mse_c), (a.mse_theta, b.mse_theta)] {
            let (x, y) = (x.unwrap().mean, y.unwrap().mean);
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert_eq!(a.median_wall_time, b.median_wall_time);
    }
}

#[test]
fn covariance_symmetrization_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = normal_matrix(&mut rng, 30, 7);
    let s = skpd::linalg::sample_covariance(&rows, 0.01).unwrap();
    let m: &DMatrix<f64> = s.matrix();
    assert_eq!(m, &m.transpose());
}
