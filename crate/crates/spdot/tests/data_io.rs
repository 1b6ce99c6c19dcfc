//! Dataset generation and file-format checks: the golden fixture, lossless
//! round trips, malformed-input errors, sampling statistics, and the banded
//! construction's distance-table guarantees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spdot::data::{
    diagonal_minimal_rows, distance_table, load_dataset, make_banded_dataset, sample_spd_gaussian,
    save_dataset, segment_means, BandedConfig, BandedMode, Domain, GaussianSpec, SpdDataset,
    SpdSample,
};
use spdot::gradcheck::random_spd;
use spdot::mat::Mat;
use spdot::ot::corollary_identity_plan;
use spdot::spd::SpdMatrix;
use spdot::DataError;

fn tmp_path(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("spdot-data-io");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn golden_fixture_parses_to_expected_record() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/dataset_v1.jsonl");
    let data = load_dataset(path).unwrap();
    assert_eq!(data.dim(), 2);
    assert_eq!(data.num_classes(), 2);
    assert_eq!(data.num_segments(), 1);
    assert_eq!(data.len(), 1);
    let sample = &data.samples()[0];
    assert_eq!(sample.label, 1);
    assert_eq!(sample.domain, Domain::Target);
    assert_eq!(sample.segment, 0);
    let expected = SpdMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    assert_eq!(sample.matrix, expected);
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let samples: Vec<SpdSample> = (0..12)
        .map(|i| SpdSample {
            matrix: random_spd(3, &mut rng),
            label: i % 3,
            domain: if i % 2 == 0 { Domain::Source } else { Domain::Target },
            segment: i % 4,
        })
        .collect();
    let data = SpdDataset::new(samples, 3, 3, 4).unwrap();
    let path = tmp_path("round_trip.jsonl");
    save_dataset(&path, &data).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded, data);
    // Order is preserved and entries are bitwise identical.
    for (a, b) in data.samples().iter().zip(loaded.samples()) {
        assert_eq!(a.matrix.mat().data(), b.matrix.mat().data());
    }
}

#[test]
fn truncated_file_is_a_parse_error() {
    let path = tmp_path("truncated.jsonl");
    std::fs::write(
        &path,
        "{\"version\":1,\"dim\":2,\"num_classes\":1,\"num_segments\":1}\n{\"m\":[1.0,0.0,0.0",
    )
    .unwrap();
    assert!(matches!(load_dataset(&path), Err(DataError::Parse { line: 2, .. })));
}

#[test]
fn non_spd_sample_is_rejected_with_its_index() {
    let path = tmp_path("bad_sample.jsonl");
    std::fs::write(
        &path,
        concat!(
            "{\"version\":1,\"dim\":2,\"num_classes\":1,\"num_segments\":1}\n",
            "{\"m\":[1.0,0.0,0.0,1.0],\"y\":0,\"dom\":\"source\",\"seg\":0}\n",
            "{\"m\":[1.0,0.0,0.0,-1.0],\"y\":0,\"dom\":\"source\",\"seg\":0}\n",
        ),
    )
    .unwrap();
    match load_dataset(&path) {
        Err(DataError::InvalidSample { index, .. }) => assert_eq!(index, 1),
        other => panic!("expected invalid-sample error, got {other:?}"),
    }
}

#[test]
fn empty_file_is_a_parse_error() {
    let path = tmp_path("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    assert!(matches!(load_dataset(&path), Err(DataError::Parse { .. })));
}

#[test]
fn gaussian_samples_are_valid_and_unbiased() {
    let spec = GaussianSpec::new(SpdMatrix::identity(2), 0.4, 10_000, 4242).unwrap();
    let samples = sample_spd_gaussian(&spec);
    let mut mean_log = Mat::zeros(2, 2);
    for s in &samples {
        assert!(s.min_eigenvalue() > 0.0);
        mean_log.add_in_place(s.log().mat(), 1.0 / samples.len() as f64);
    }
    // Per-entry law of large numbers: |mean| <= 3σ/√N.
    let bound = 3.0 * 0.4 / (samples.len() as f64).sqrt();
    for i in 0..2 {
        for j in 0..2 {
            assert!(
                mean_log[(i, j)].abs() <= bound,
                "entry ({i},{j}) drifted: {} > {bound}",
                mean_log[(i, j)]
            );
        }
    }
}

#[test]
fn experiment_scale_config_is_constructible() {
    let spec = GaussianSpec::new(SpdMatrix::identity(2), 0.4, 50, 42).unwrap();
    let samples = sample_spd_gaussian(&spec);
    assert_eq!(samples.len(), 50);
    assert!(samples.iter().all(|s| s.dim() == 2));
}

fn banded_config(mode: BandedMode) -> BandedConfig {
    BandedConfig {
        dim: 4,
        num_bands: 9,
        per_band_count: 16,
        sigma: 0.1,
        band_separation: 3.0,
        within_band_shift: 0.3,
        mode,
        seed: 77,
    }
}

#[test]
fn within_band_dataset_is_diagonal_minimal() {
    let (source, target) = make_banded_dataset(&banded_config(BandedMode::WithinBand)).unwrap();
    assert_eq!(source.num_segments(), 9);
    let table = distance_table(&source, &target).unwrap();
    let rows = diagonal_minimal_rows(&table);
    assert!(rows.iter().all(|&ok| ok), "rows {rows:?}");
    // The shifted diagonal sits near the configured shift magnitude.
    for k in 0..9 {
        assert!((table[(k, k)] - 0.3).abs() < 0.1, "diagonal {}", table[(k, k)]);
    }
    let means_s = segment_means(&source).unwrap();
    let means_t = segment_means(&target).unwrap();
    assert!(corollary_identity_plan(&means_s, &means_t).unwrap());
}

#[test]
fn cross_band_dataset_breaks_the_diagonal() {
    let (source, target) = make_banded_dataset(&banded_config(BandedMode::CrossBand)).unwrap();
    let table = distance_table(&source, &target).unwrap();
    let rows = diagonal_minimal_rows(&table);
    assert!(rows.iter().any(|&ok| !ok), "expected a violated row, got {rows:?}");
    let means_s = segment_means(&source).unwrap();
    let means_t = segment_means(&target).unwrap();
    assert!(!corollary_identity_plan(&means_s, &means_t).unwrap());
}

#[test]
fn distance_table_transposes_under_domain_swap() {
    let (source, target) = make_banded_dataset(&banded_config(BandedMode::WithinBand)).unwrap();
    let forward = distance_table(&source, &target).unwrap();
    let backward = distance_table(&target, &source).unwrap();
    assert!(forward.sub(&backward.transpose()).frobenius_norm() <= 1e-12);
}

#[test]
fn distance_table_rejects_mismatched_segments() {
    let (source, _) = make_banded_dataset(&banded_config(BandedMode::WithinBand)).unwrap();
    let other = BandedConfig { num_bands: 4, ..banded_config(BandedMode::WithinBand) };
    let (_, target) = make_banded_dataset(&other).unwrap();
    assert!(matches!(distance_table(&source, &target), Err(DataError::Params(_))));
}
