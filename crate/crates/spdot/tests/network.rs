//! Layer-level network checks: positive-definiteness preservation, spectrum
//! floors, gradient correctness across dimensions, Stiefel invariants, and
//! the minimum-distance baseline on separable data.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spdot::gradcheck::{self, random_spd};
use spdot::mat::Mat;
use spdot::net::{mdm_fit, stiefel_update, BiMapLayer, ClassifierHead, DotModel, ReEigLayer};
use spdot::spd::{coords_to_sym, lem_distance, sym_coord_len, Metric, SpdMatrix};

#[test]
fn layers_preserve_the_cone() {
    let mut rng = ChaCha8Rng::seed_from_u64(211);
    for trial in 0..20 {
        let d_in = 3 + trial % 4;
        let d_out = 1 + trial % d_in;
        let bimap = BiMapLayer::random_semi_orthogonal(d_out, d_in, &mut rng).unwrap();
        let s = random_spd(d_in, &mut rng);
        let out = bimap.forward(&s).unwrap();
        assert!(out.min_eigenvalue() > 0.0);

        let reeig = ReEigLayer::new(1e-3).unwrap();
        let rect = reeig.forward(&out);
        assert!(rect.min_eigenvalue() >= 1e-3 - 1e-12);
        // Log output is symmetric.
        let log = rect.log();
        assert!(log.mat().asymmetry() <= 1e-12);
    }
}

#[test]
fn reeig_spectrum_floor_holds_for_tiny_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(223);
    let reeig = ReEigLayer::new(1e-4).unwrap();
    for _ in 0..20 {
        let eigs = [1e-8, 5e-5, 0.5, 2.0];
        let s = gradcheck::spd_with_spectrum(&eigs, &mut rng);
        let out = reeig.forward(&s);
        assert!(out.min_eigenvalue() >= 1e-4 - 1e-12);
        for (&before, &after) in s.eigenvalues().iter().zip(out.eigenvalues()) {
            assert!(after >= before - 1e-12);
        }
    }
}

#[test]
fn layer_gradients_match_finite_differences_across_dims() {
    let mut report = gradcheck::GradCheckReport::default();
    for (i, dim) in (3..=8).enumerate() {
        gradcheck::check_layers(dim, 400 + i as u64, &mut report).unwrap();
    }
    assert!(report.pass(), "worst case {:?}", report.worst_case());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut report = gradcheck::GradCheckReport::default();
    for (i, dim) in (3..=6).enumerate() {
        gradcheck::check_dot_objective(dim, 500 + i as u64, &mut report).unwrap();
        gradcheck::check_deepjdot_objective(dim, 600 + i as u64, &mut report).unwrap();
    }
    assert!(report.pass(), "worst case {:?}", report.worst_case());
}

#[test]
fn stiefel_updates_preserve_semi_orthogonality_for_rectangular_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(227);
    for (d_out, d_in) in [(1usize, 4usize), (2, 5), (3, 3)] {
        let layer = BiMapLayer::random_semi_orthogonal(d_out, d_in, &mut rng).unwrap();
        let mut w = layer.w().clone();
        for _ in 0..50 {
            let grad = Mat::from_fn(d_out, d_in, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            w = stiefel_update(&w, &grad, 5e-2).unwrap();
        }
        let defect = w
            .matmul(&w.transpose())
            .sub(&Mat::identity(d_out))
            .frobenius_norm();
        assert!(defect <= 1e-8, "defect {defect} for {d_out}x{d_in}");
    }
    let nan_grad = Mat::from_fn(1, 4, |_, _| f64::NAN);
    let w = Mat::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
    assert!(stiefel_update(&w, &nan_grad, 1e-2).is_err());
}

#[test]
fn prediction_is_invariant_under_positive_affine_logit_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(229);
    let dim = 3;
    let features = sym_coord_len(dim);
    let head = ClassifierHead::new(
        Mat::from_fn(3, features, |_, _| rng.random::<f64>() * 2.0 - 1.0),
        vec![0.3, -0.1, 0.2],
    )
    .unwrap();
    // a·logits + b·1 with a > 0 re-expressed through the head parameters.
    let (a, b) = (2.5, -0.7);
    let scaled_head = ClassifierHead::new(
        {
            let mut w = head.weight().clone();
            w = w.scale(a);
            w
        },
        head.bias().iter().map(|x| a * x + b).collect(),
    )
    .unwrap();
    let base = DotModel::new(BiMapLayer::identity(dim), ReEigLayer::new(1e-4).unwrap(), head).unwrap();
    let scaled = DotModel::new(BiMapLayer::identity(dim), ReEigLayer::new(1e-4).unwrap(), scaled_head).unwrap();
    for _ in 0..20 {
        let s = random_spd(dim, &mut rng);
        assert_eq!(base.predict(&s).unwrap(), scaled.predict(&s).unwrap());
    }
}

/// Two log-domain Gaussian classes with centers a fixed distance apart and a
/// spread much smaller than the gap are classified perfectly by the
/// minimum-distance rule.
#[test]
fn mdm_separates_well_separated_classes() {
    let dim = 3;
    let coords = sym_coord_len(dim);
    let center = |sign: f64| {
        let mut c = vec![0.0; coords];
        c[0] = sign * 1.5; // distance 3 between the two centers
        coords_to_sym(dim, &c).unwrap().exp().unwrap()
    };
    let c0 = center(-1.0);
    let c1 = center(1.0);
    assert!((lem_distance(&c0, &c1).unwrap() - 3.0).abs() < 1e-12);

    let draw = |center: &SpdMatrix, seed: u64, label: usize| -> Vec<(SpdMatrix, usize)> {
        let spec = spdot::data::GaussianSpec::new(center.clone(), 0.1, 30, seed).unwrap();
        spdot::data::sample_spd_gaussian(&spec)
            .into_iter()
            .map(|s| (s, label))
            .collect()
    };
    let mut train: Vec<(SpdMatrix, usize)> = draw(&c0, 7, 0);
    train.extend(draw(&c1, 8, 1));

    for metric in [Metric::LogEuclidean, Metric::AffineInvariant] {
        let clf = mdm_fit(&train, 2, metric).unwrap();
        let correct = train
            .iter()
            .filter(|(s, y)| clf.predict(s).unwrap() == *y)
            .count();
        assert_eq!(correct, train.len(), "metric {metric:?}");
    }
}
