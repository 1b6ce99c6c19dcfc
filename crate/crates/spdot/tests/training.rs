//! Loss-family checks against independent computations, alternating-update
//! behavior, pseudo-label plumbing, and bitwise reproducibility of training.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spdot::data::{apply_bimap_shift, sample_spd_gaussian, GaussianSpec};
use spdot::gradcheck::random_spd;
use spdot::mat::Mat;
use spdot::net::DotModel;
use spdot::ot::mean_distance;
use spdot::spd::{lem_distance, lem_frechet_mean, SpdMatrix};
use spdot::train::{
    cda_loss, cross_entropy, deepjdot_loss, deepjdot_step, mda_loss, refresh_pseudo_labels, train,
    BiMapParam, LossWeights, PseudoLabelSource, PseudoLabeler, TrainBatch, TrainConfig, TrainMode,
};

fn random_batch(n: usize, dim: usize, seed: u64) -> Vec<SpdMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_spd(dim, &mut rng)).collect()
}

/// The marginal loss equals the distance between batch Fréchet means.
#[test]
fn mda_equals_distance_between_frechet_means() {
    let bs = random_batch(5, 3, 301);
    let bt = random_batch(4, 3, 302);
    let loss = mda_loss(&bs, &bt).unwrap();
    let oracle = lem_distance(
        &lem_frechet_mean(&bs).unwrap(),
        &lem_frechet_mean(&bt).unwrap(),
    )
    .unwrap();
    assert!((loss - oracle).abs() <= 1e-12);
}

/// Kernel-expansion route to the same number:
/// `MMD² = n⁻²ΣΣ⟨φᵢ,φⱼ⟩ + m⁻²ΣΣ⟨φ̄ᵢ,φ̄ⱼ⟩ − 2(nm)⁻¹ΣΣ⟨φᵢ,φ̄ⱼ⟩` with the log
/// feature map.
#[test]
fn mda_matches_mmd_kernel_expansion() {
    let bs = random_batch(6, 3, 303);
    let bt = random_batch(5, 3, 304);
    let logs_s: Vec<Mat> = bs.iter().map(|s| s.log().mat().clone()).collect();
    let logs_t: Vec<Mat> = bt.iter().map(|s| s.log().mat().clone()).collect();
    let gram = |a: &[Mat], b: &[Mat]| -> f64 {
        let mut acc = 0.0;
        for x in a {
            for y in b {
                acc += x.frobenius_inner(y);
            }
        }
        acc
    };
    let n = logs_s.len() as f64;
    let m = logs_t.len() as f64;
    let mmd_sq = gram(&logs_s, &logs_s) / (n * n) + gram(&logs_t, &logs_t) / (m * m)
        - 2.0 * gram(&logs_s, &logs_t) / (n * m);
    let mda = mda_loss(&bs, &bt).unwrap();
    assert!((mda * mda - mmd_sq).abs() <= 1e-10, "{} vs {}", mda * mda, mmd_sq);
}

#[test]
fn mda_is_symmetric_and_zero_on_equal_batches() {
    let bs = random_batch(4, 2, 305);
    let bt = random_batch(3, 2, 306);
    assert_eq!(mda_loss(&bs, &bs).unwrap(), 0.0);
    let ab = mda_loss(&bs, &bt).unwrap();
    let ba = mda_loss(&bt, &bs).unwrap();
    assert!((ab - ba).abs() <= 1e-15);
}

#[test]
fn cda_matches_per_class_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(307);
    let embed_s = random_batch(8, 3, 308);
    let embed_t = random_batch(7, 3, 309);
    let labels_s: Vec<usize> = (0..8).map(|_| rand::Rng::random_range(&mut rng, 0..2)).collect();
    let pseudo_t: Vec<usize> = (0..7).map(|_| rand::Rng::random_range(&mut rng, 0..2)).collect();
    let loss = cda_loss(&embed_s, &labels_s, &embed_t, &pseudo_t, 2).unwrap();
    let mut oracle = 0.0;
    for class in 0..2 {
        let s: Vec<SpdMatrix> = embed_s
            .iter()
            .zip(&labels_s)
            .filter(|(_, &y)| y == class)
            .map(|(x, _)| x.clone())
            .collect();
        let t: Vec<SpdMatrix> = embed_t
            .iter()
            .zip(&pseudo_t)
            .filter(|(_, &y)| y == class)
            .map(|(x, _)| x.clone())
            .collect();
        if s.is_empty() || t.is_empty() {
            continue;
        }
        oracle += lem_distance(
            &lem_frechet_mean(&s).unwrap(),
            &lem_frechet_mean(&t).unwrap(),
        )
        .unwrap();
    }
    assert!((loss - oracle).abs() <= 1e-12);
}

#[test]
fn cda_is_zero_for_perfectly_matched_classes() {
    let a = random_batch(3, 2, 310);
    let labels = vec![0, 1, 0];
    let loss = cda_loss(&a, &labels, &a, &labels, 2).unwrap();
    assert!(loss <= 1e-12);
}

/// Direct double-loop re-evaluation of the joint objective.
#[test]
fn deepjdot_loss_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(311);
    let model = DotModel::init(3, 3, 2, 1e-4, &mut rng).unwrap();
    let batch = TrainBatch::new(
        random_batch(3, 3, 312).into_iter().zip([0, 1, 0]).collect(),
        random_batch(4, 3, 313).into_iter().map(|s| (s, None)).collect(),
    )
    .unwrap();
    let plan = spdot::train::solve_batch_plan(&model, &batch).unwrap();
    let weights = LossWeights { jd_alpha1: 1.3, jd_alpha2: 0.4, ..Default::default() };
    let loss = deepjdot_loss(&model, &batch, &plan, &weights).unwrap();

    let mut oracle = 0.0;
    for (s, y) in &batch.source {
        let (logits, _) = model.forward(s).unwrap();
        oracle += cross_entropy(&logits, *y) / batch.source.len() as f64;
    }
    for (i, (s, y)) in batch.source.iter().enumerate() {
        let (_, cs) = model.forward(s).unwrap();
        for (j, (t, _)) in batch.target.iter().enumerate() {
            let (logits_t, ct) = model.forward(t).unwrap();
            let d = cs.log_feature.sub(&ct.log_feature).frobenius_norm();
            oracle += plan.get(i, j)
                * (weights.jd_alpha1 * d * d + weights.jd_alpha2 * cross_entropy(&logits_t, *y));
        }
    }
    assert!((loss - oracle).abs() <= 1e-12, "{loss} vs {oracle}");
}

#[test]
fn deepjdot_step_zero_lr_returns_model_and_plan() {
    let mut rng = ChaCha8Rng::seed_from_u64(317);
    let model = DotModel::init(2, 2, 2, 1e-4, &mut rng).unwrap();
    let batch = TrainBatch::new(
        random_batch(3, 2, 318).into_iter().zip([0, 1, 0]).collect(),
        random_batch(3, 2, 319).into_iter().map(|s| (s, None)).collect(),
    )
    .unwrap();
    let (next, plan) =
        deepjdot_step(&model, &batch, &LossWeights::default(), 0.0, BiMapParam::Stiefel).unwrap();
    assert_eq!(next, model);
    assert_eq!(plan.rows(), 3);
    assert_eq!(plan.cols(), 3);
}

#[test]
fn deepjdot_identity_plan_on_identical_domains() {
    let mut rng = ChaCha8Rng::seed_from_u64(331);
    let model = DotModel::init(2, 2, 2, 1e-4, &mut rng).unwrap();
    let source = random_batch(4, 2, 332);
    let batch = TrainBatch::new(
        source.iter().cloned().zip([0, 1, 0, 1]).collect(),
        source.iter().cloned().map(|s| (s, None)).collect(),
    )
    .unwrap();
    let (_, plan) =
        deepjdot_step(&model, &batch, &LossWeights::default(), 1e-3, BiMapParam::Stiefel).unwrap();
    assert!(plan.is_identity_coupling(), "deviation {}", plan.identity_deviation());
}

#[test]
fn deepjdot_descends_on_a_fixed_tiny_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(337);
    let mut model = DotModel::init(2, 2, 2, 1e-4, &mut rng).unwrap();
    let batch = TrainBatch::new(
        random_batch(4, 2, 338).into_iter().zip([0, 1, 0, 1]).collect(),
        random_batch(4, 2, 339).into_iter().map(|s| (s, None)).collect(),
    )
    .unwrap();
    let weights = LossWeights::default();
    let mut losses = Vec::new();
    for _ in 0..10 {
        let plan = spdot::train::solve_batch_plan(&model, &batch).unwrap();
        losses.push(deepjdot_loss(&model, &batch, &plan, &weights).unwrap());
        let (next, _) = deepjdot_step(&model, &batch, &weights, 1e-3, BiMapParam::Stiefel).unwrap();
        model = next;
    }
    let plan = spdot::train::solve_batch_plan(&model, &batch).unwrap();
    losses.push(deepjdot_loss(&model, &batch, &plan, &weights).unwrap());
    let violations = losses.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    assert!(violations <= 2, "losses {losses:?}");
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn pseudo_labels_are_deterministic_and_match_separable_sources() {
    let c0 = SpdMatrix::from_diag(&[0.2, 0.2]).unwrap();
    let c1 = SpdMatrix::from_diag(&[5.0, 5.0]).unwrap();
    let draw = |center: &SpdMatrix, seed: u64| {
        sample_spd_gaussian(&GaussianSpec::new(center.clone(), 0.1, 10, seed).unwrap())
    };
    let mut source: Vec<(SpdMatrix, usize)> =
        draw(&c0, 51).into_iter().map(|s| (s, 0)).collect();
    source.extend(draw(&c1, 52).into_iter().map(|s| (s, 1)));
    let clf = spdot::net::mdm_fit(&source, 2, spdot::Metric::LogEuclidean).unwrap();
    let labeler = PseudoLabeler::Mdm(clf);

    // Targets are the source samples themselves: labels must match.
    let targets: Vec<SpdMatrix> = source.iter().map(|(s, _)| s.clone()).collect();
    let labels = refresh_pseudo_labels(&labeler, &targets).unwrap();
    let expected: Vec<usize> = source.iter().map(|(_, y)| *y).collect();
    assert_eq!(labels, expected);
    // Determinism.
    assert_eq!(labels, refresh_pseudo_labels(&labeler, &targets).unwrap());

    // Single-class source labels everything with that class.
    let single: Vec<(SpdMatrix, usize)> = draw(&c0, 53).into_iter().map(|s| (s, 0)).collect();
    let clf = spdot::net::mdm_fit(&single, 1, spdot::Metric::LogEuclidean).unwrap();
    let labels = refresh_pseudo_labels(&PseudoLabeler::Mdm(clf), &targets).unwrap();
    assert!(labels.iter().all(|&y| y == 0));
}

fn shifted_pair(seed: u64) -> (Vec<(SpdMatrix, usize)>, Vec<SpdMatrix>, Vec<usize>) {
    let spec = GaussianSpec::new(SpdMatrix::identity(2), 0.4, 24, seed).unwrap();
    let source = sample_spd_gaussian(&spec);
    let w = Mat::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let target = apply_bimap_shift(&w, &source).unwrap();
    let labeled: Vec<(SpdMatrix, usize)> =
        source.into_iter().enumerate().map(|(i, s)| (s, i % 2)).collect();
    let labels: Vec<usize> = (0..target.len()).map(|i| i % 2).collect();
    (labeled, target, labels)
}

#[test]
fn training_is_bit_reproducible() {
    let (source, target, labels) = shifted_pair(61);
    let model = DotModel::with_identity_bimap(2, 2, 1e-4).unwrap();
    let config = TrainConfig {
        mode: TrainMode::MdaCda,
        epochs: 4,
        batch_size: 8,
        lr: 1e-2,
        seed: 1234,
        ..Default::default()
    };
    let (m1, h1) = train(&model, &source, &target, Some(&labels), &config).unwrap();
    let (m2, h2) = train(&model, &source, &target, Some(&labels), &config).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(h1.to_csv(), h2.to_csv());
}

/// With both adaptation weights zero, every mode follows the identical
/// source-only trajectory, bit for bit.
#[test]
fn zero_adaptation_weights_reproduce_source_only_training() {
    let (source, target, _) = shifted_pair(67);
    let model = DotModel::with_identity_bimap(2, 2, 1e-4).unwrap();
    let weights = LossWeights { alpha1: 1.0, alpha2: 0.0, alpha3: 0.0, ..Default::default() };
    let mk = |mode: TrainMode| TrainConfig {
        mode,
        epochs: 3,
        batch_size: 8,
        lr: 1e-2,
        seed: 77,
        weights,
        ..Default::default()
    };
    let (m_mda, h_mda) = train(&model, &source, &target, None, &mk(TrainMode::Mda)).unwrap();
    let (m_both, h_both) = train(&model, &source, &target, None, &mk(TrainMode::MdaCda)).unwrap();
    assert_eq!(m_mda, m_both);
    assert_eq!(h_mda.to_csv(), h_both.to_csv());
    // And the loss column is pure cross-entropy.
    for e in &h_mda.epochs {
        assert_eq!(e.mda, 0.0);
        assert_eq!(e.cda, 0.0);
        assert!((e.total - e.ce).abs() <= 1e-15);
    }
}

/// Free-parameterization marginal alignment on the congruence-shifted pair
/// drives the embedded mean distance well below its starting point.
#[test]
fn mda_training_aligns_embedded_means() {
    let (source, target, labels) = shifted_pair(71);
    let model = DotModel::with_identity_bimap(2, 2, 1e-4).unwrap();
    let config = TrainConfig {
        mode: TrainMode::Mda,
        epochs: 200,
        batch_size: 8,
        lr: 1e-2,
        seed: 7,
        weights: LossWeights { alpha1: 0.0, alpha2: 1.0, alpha3: 0.0, ..Default::default() },
        bimap_param: BiMapParam::Free,
        pseudo_labels: PseudoLabelSource::Mdm,
        ..Default::default()
    };
    let embed = |m: &DotModel, xs: &[SpdMatrix]| -> Vec<SpdMatrix> {
        xs.iter().map(|s| m.forward(s).unwrap().1.embedding).collect()
    };
    let src_mats: Vec<SpdMatrix> = source.iter().map(|(s, _)| s.clone()).collect();
    let before = mean_distance(&embed(&model, &src_mats), &embed(&model, &target)).unwrap();
    let (trained, history) = train(&model, &source, &target, Some(&labels), &config).unwrap();
    let after = mean_distance(&embed(&trained, &src_mats), &embed(&trained, &target)).unwrap();
    assert!(
        after < before / 10.0,
        "mean distance {before} -> {after} (history tail {:?})",
        history.epochs.last()
    );
}
