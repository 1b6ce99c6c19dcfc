//! Synthetic SPD datasets and their line-oriented JSON file format.
//!
//! Sampling uses the log-domain wrapped Gaussian: draw an isotropic normal
//! vector in the Frobenius-isometric coordinates of the symmetric matrices,
//! lift it through [`coords_to_sym`], and push it out of the tangent space
//! with the matrix exponential around a chosen center. The result is always
//! a valid SPD matrix, and the log-domain sample mean converges to the log
//! of the center.
//!
//! Banded datasets place per-segment clusters along orthonormal symmetric
//! directions, far enough apart (and shifted gently enough) that every
//! segment's closest counterpart in the other domain is its own image. A
//! cross-band mode breaks that property on purpose for negative tests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::eig::sym_eig;
use crate::mat::Mat;
use crate::spd::{coords_to_sym, lem_distance, lem_frechet_mean, sym_coord_len, SpdMatrix};

/// Which side of an adaptation problem a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// A labeled SPD sample tagged with its domain and segment (frequency band).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdSample {
    pub matrix: SpdMatrix,
    pub label: usize,
    pub domain: Domain,
    pub segment: usize,
}

/// A collection of SPD samples with shared dimension and label/segment ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdDataset {
    samples: Vec<SpdSample>,
    dim: usize,
    num_classes: usize,
    num_segments: usize,
}

impl SpdDataset {
    pub fn new(
        samples: Vec<SpdSample>,
        dim: usize,
        num_classes: usize,
        num_segments: usize,
    ) -> Result<Self, DataError> {
        for (index, s) in samples.iter().enumerate() {
            if s.matrix.dim() != dim {
                return Err(DataError::InvalidSample {
                    index,
                    msg: format!("dimension {} does not match dataset dimension {dim}", s.matrix.dim()),
                });
            }
            if s.label >= num_classes {
                return Err(DataError::InvalidSample {
                    index,
                    msg: format!("label {} out of range for {num_classes} classes", s.label),
                });
            }
            if s.segment >= num_segments {
                return Err(DataError::InvalidSample {
                    index,
                    msg: format!("segment {} out of range for {num_segments} segments", s.segment),
                });
            }
        }
        Ok(SpdDataset { samples, dim, num_classes, num_segments })
    }

    pub fn samples(&self) -> &[SpdSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn matrices(&self) -> Vec<SpdMatrix> {
        self.samples.iter().map(|s| s.matrix.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn labeled(&self) -> Vec<(SpdMatrix, usize)> {
        self.samples.iter().map(|s| (s.matrix.clone(), s.label)).collect()
    }

    pub fn segment_matrices(&self, segment: usize) -> Vec<SpdMatrix> {
        self.samples
            .iter()
            .filter(|s| s.segment == segment)
            .map(|s| s.matrix.clone())
            .collect()
    }
}

/// Parameters of a log-domain Gaussian cloud on the cone.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub center: SpdMatrix,
    /// Log-domain standard deviation in the isometric chart.
    pub sigma: f64,
    pub count: usize,
    pub seed: u64,
}

impl GaussianSpec {
    pub fn new(center: SpdMatrix, sigma: f64, count: usize, seed: u64) -> Result<Self, DataError> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(DataError::Params(format!("sigma must be positive, got {sigma}")));
        }
        if count == 0 {
            return Err(DataError::Params("count must be positive".into()));
        }
        Ok(GaussianSpec { center, sigma, count, seed })
    }
}

fn draw_gaussian(center_log: &Mat, sigma: f64, rng: &mut ChaCha8Rng) -> SpdMatrix {
    let dim = center_log.rows();
    let coords: Vec<f64> =
        (0..sym_coord_len(dim)).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let x = coords_to_sym(dim, &coords).expect("coordinate length is consistent");
    let shifted = crate::spd::SymMatrix::new(center_log.add(x.mat())).expect("sum of symmetric");
    shifted.exp().expect("exponential of finite symmetric matrix")
}

/// Draws `spec.count` samples `exp(log(center) + X)` with `X` isotropic
/// Gaussian in the isometric chart; deterministic in the seed.
pub fn sample_spd_gaussian(spec: &GaussianSpec) -> Vec<SpdMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center_log = spec.center.log().mat().clone();
    (0..spec.count).map(|_| draw_gaussian(&center_log, spec.sigma, &mut rng)).collect()
}

/// Pushes every sample through the congruence `S ↦ W·S·Wᵀ`.
pub fn apply_bimap_shift(w: &Mat, data: &[SpdMatrix]) -> Result<Vec<SpdMatrix>, DataError> {
    if !w.is_square() {
        return Err(DataError::Params(format!("shift matrix must be square, got {}x{}", w.rows(), w.cols())));
    }
    // Full rank check through the singular values of W.
    let gram = w.transpose().matmul(w);
    let eig = sym_eig(&gram).map_err(DataError::Geometry)?;
    let sigma_max = eig.eigenvalues[0].max(0.0).sqrt();
    let sigma_min = eig.eigenvalues.last().unwrap().max(0.0).sqrt();
    if sigma_min <= 1e-12 * sigma_max.max(1.0) {
        return Err(DataError::SingularShift { sigma_min });
    }
    data.iter()
        .map(|s| SpdMatrix::new(w.congruence(s.mat()).symmetrize()).map_err(DataError::Geometry))
        .collect()
}

/// How the target bands of a banded dataset are displaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandedMode {
    /// Each target band is its source band pushed along the band's own
    /// direction; the diagonal of the distance table is minimal by
    /// construction.
    WithinBand,
    /// Target band k is drawn near source band k+1 (cyclically); the
    /// diagonal-minimality property fails on purpose.
    CrossBand,
}

/// Parameters for [`make_banded_dataset`].
#[derive(Debug, Clone)]
pub struct BandedConfig {
    pub dim: usize,
    pub num_bands: usize,
    pub per_band_count: usize,
    /// Within-band log-domain spread.
    pub sigma: f64,
    /// Log-domain distance scale between band centers.
    pub band_separation: f64,
    /// Log-domain magnitude of the source-to-target shift.
    pub within_band_shift: f64,
    pub mode: BandedMode,
    pub seed: u64,
}

/// Builds a multi-band source/target pair. Band `k` of the source is a
/// Gaussian cloud centered at `exp(separation·B_k)` for the k-th orthonormal
/// symmetric direction `B_k`, so distinct band centers are `separation·√2`
/// apart; the target is the source pushed by the congruence
/// `exp(shift/2·B_k)` (within-band mode) or re-centered on the cyclically
/// next band (cross-band mode).
pub fn make_banded_dataset(cfg: &BandedConfig) -> Result<(SpdDataset, SpdDataset), DataError> {
    let coords = sym_coord_len(cfg.dim);
    if cfg.num_bands == 0 || cfg.num_bands > coords {
        return Err(DataError::Params(format!(
            "num_bands must be in 1..={coords} for dimension {} (one orthonormal direction per band)",
            cfg.dim
        )));
    }
    if cfg.per_band_count == 0 {
        return Err(DataError::Params("per_band_count must be positive".into()));
    }
    if !cfg.sigma.is_finite() || cfg.sigma <= 0.0 {
        return Err(DataError::Params(format!("sigma must be positive, got {}", cfg.sigma)));
    }
    if !cfg.band_separation.is_finite() || cfg.band_separation <= 0.0 {
        return Err(DataError::Params(format!(
            "band_separation must be positive, got {}",
            cfg.band_separation
        )));
    }
    match cfg.mode {
        BandedMode::WithinBand => {
            if !cfg.within_band_shift.is_finite()
                || cfg.within_band_shift < 0.0
                || cfg.within_band_shift >= cfg.band_separation
            {
                return Err(DataError::Params(format!(
                    "within-band mode requires 0 <= shift < separation, got shift {} vs separation {}",
                    cfg.within_band_shift, cfg.band_separation
                )));
            }
        }
        BandedMode::CrossBand => {
            if !cfg.within_band_shift.is_finite() || cfg.within_band_shift < 0.0 {
                return Err(DataError::Params("shift must be nonnegative".into()));
            }
        }
    }

    let direction = |band: usize| {
        let mut c = vec![0.0; coords];
        c[band] = 1.0;
        coords_to_sym(cfg.dim, &c).expect("basis coordinates")
    };

    let mut source = Vec::new();
    let mut target = Vec::new();
    for band in 0..cfg.num_bands {
        // Centers sit at log-radius `separation` along orthonormal
        // directions, so any two of them are `separation·√2` apart while the
        // spectra stay within a tame condition number.
        let center = direction(band)
            .scale(cfg.band_separation)
            .exp()
            .map_err(DataError::Geometry)?;
        let spec = GaussianSpec::new(
            center,
            cfg.sigma,
            cfg.per_band_count,
            cfg.seed.wrapping_add(band as u64),
        )?;
        let band_samples = sample_spd_gaussian(&spec);

        let band_targets = match cfg.mode {
            BandedMode::WithinBand => {
                let w = direction(band).scale(cfg.within_band_shift / 2.0).exp().map_err(DataError::Geometry)?;
                apply_bimap_shift(w.mat(), &band_samples)?
            }
            BandedMode::CrossBand => {
                let next = (band + 1) % cfg.num_bands;
                let center = direction(next)
                    .scale(cfg.band_separation)
                    .exp()
                    .map_err(DataError::Geometry)?;
                let spec = GaussianSpec::new(
                    center,
                    cfg.sigma,
                    cfg.per_band_count,
                    cfg.seed.wrapping_add(0x5eed).wrapping_add(band as u64),
                )?;
                sample_spd_gaussian(&spec)
            }
        };

        for s in band_samples {
            source.push(SpdSample { matrix: s, label: 0, domain: Domain::Source, segment: band });
        }
        for t in band_targets {
            target.push(SpdSample { matrix: t, label: 0, domain: Domain::Target, segment: band });
        }
    }

    Ok((
        SpdDataset::new(source, cfg.dim, 1, cfg.num_bands)?,
        SpdDataset::new(target, cfg.dim, 1, cfg.num_bands)?,
    ))
}

/// Log-Euclidean distances between per-segment Fréchet means:
/// entry `(a, b)` is the distance from source segment `a` to target
/// segment `b`.
pub fn distance_table(source: &SpdDataset, target: &SpdDataset) -> Result<Mat, DataError> {
    if source.num_segments() != target.num_segments() {
        return Err(DataError::Params(format!(
            "segment count mismatch: source {}, target {}",
            source.num_segments(),
            target.num_segments()
        )));
    }
    let k = source.num_segments();
    let mut source_means = Vec::with_capacity(k);
    let mut target_means = Vec::with_capacity(k);
    for seg in 0..k {
        let s = source.segment_matrices(seg);
        if s.is_empty() {
            return Err(DataError::EmptySegment { segment: seg });
        }
        let t = target.segment_matrices(seg);
        if t.is_empty() {
            return Err(DataError::EmptySegment { segment: seg });
        }
        source_means.push(lem_frechet_mean(&s).map_err(DataError::Geometry)?);
        target_means.push(lem_frechet_mean(&t).map_err(DataError::Geometry)?);
    }
    let mut table = Mat::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            table[(a, b)] =
                lem_distance(&source_means[a], &target_means[b]).map_err(DataError::Geometry)?;
        }
    }
    Ok(table)
}

/// Per-segment Fréchet means of a dataset, in segment order.
pub fn segment_means(data: &SpdDataset) -> Result<Vec<SpdMatrix>, DataError> {
    (0..data.num_segments())
        .map(|seg| {
            let m = data.segment_matrices(seg);
            if m.is_empty() {
                return Err(DataError::EmptySegment { segment: seg });
            }
            lem_frechet_mean(&m).map_err(DataError::Geometry)
        })
        .collect()
}

/// True per row when the diagonal entry is the strict row minimum.
pub fn diagonal_minimal_rows(table: &Mat) -> Vec<bool> {
    (0..table.rows())
        .map(|a| (0..table.cols()).all(|b| b == a || table[(a, a)] < table[(a, b)]))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    version: u32,
    dim: usize,
    num_classes: usize,
    num_segments: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    m: Vec<f64>,
    y: usize,
    dom: String,
    seg: usize,
}

const FORMAT_VERSION: u32 = 1;

/// Writes a dataset as line-oriented JSON: one header record followed by one
/// record per sample with row-major entries.
pub fn save_dataset(path: impl AsRef<Path>, data: &SpdDataset) -> Result<(), DataError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = HeaderRecord {
        version: FORMAT_VERSION,
        dim: data.dim(),
        num_classes: data.num_classes(),
        num_segments: data.num_segments(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for s in data.samples() {
        let record = SampleRecord {
            m: s.matrix.mat().data().to_vec(),
            y: s.label,
            dom: s.domain.as_str().to_string(),
            seg: s.segment,
        };
        writeln!(w, "{}", serde_json::to_string(&record).expect("record serializes"))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`], revalidating every matrix.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<SpdDataset, DataError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| DataError::Parse { line: 1, msg: "empty file".into() })?;
    let header_line = header_line?;
    let header: HeaderRecord = serde_json::from_str(&header_line)
        .map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?;
    if header.version != FORMAT_VERSION {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("unsupported format version {}", header.version),
        });
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| DataError::Parse { line: idx + 1, msg: e.to_string() })?;
        let index = samples.len();
        let mat = Mat::from_flat(header.dim, header.dim, record.m)
            .map_err(|e| DataError::InvalidSample { index, msg: e.to_string() })?;
        let matrix = SpdMatrix::new(mat)
            .map_err(|e| DataError::InvalidSample { index, msg: e.to_string() })?;
        let domain = match record.dom.as_str() {
            "source" => Domain::Source,
            "target" => Domain::Target,
            other => {
                return Err(DataError::InvalidSample {
                    index,
                    msg: format!("unknown domain {other:?}"),
                })
            }
        };
        samples.push(SpdSample { matrix, label: record.y, domain, segment: record.seg });
    }
    SpdDataset::new(samples, header.dim, header.num_classes, header.num_segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_sigma_sticks_to_center() {
        let center = SpdMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let spec = GaussianSpec::new(center.clone(), 1e-12, 5, 7).unwrap();
        for s in sample_spd_gaussian(&spec) {
            assert!(s.mat().sub(center.mat()).frobenius_norm() < 1e-9);
        }
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let spec = GaussianSpec::new(SpdMatrix::identity(3), 0.4, 4, 42).unwrap();
        let a = sample_spd_gaussian(&spec);
        let b = sample_spd_gaussian(&spec);
        assert_eq!(a, b);
    }

    #[test]
    fn shift_matches_hand_product() {
        let w = Mat::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let shifted = apply_bimap_shift(&w, &[SpdMatrix::identity(2)]).unwrap();
        let m = shifted[0].mat();
        assert!((m[(0, 0)] - 1.25).abs() < 1e-12);
        assert!((m[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((m[(1, 1)] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn identity_shift_is_a_no_op() {
        let s = SpdMatrix::from_rows(&[vec![2.0, 0.4], vec![0.4, 1.1]]).unwrap();
        let shifted = apply_bimap_shift(&Mat::identity(2), std::slice::from_ref(&s)).unwrap();
        assert!(shifted[0].mat().sub(s.mat()).frobenius_norm() < 1e-14);
    }

    #[test]
    fn singular_shift_rejected() {
        let w = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            apply_bimap_shift(&w, &[SpdMatrix::identity(2)]),
            Err(DataError::SingularShift { .. })
        ));
    }

    #[test]
    fn zero_shift_copies_source() {
        let cfg = BandedConfig {
            dim: 3,
            num_bands: 3,
            per_band_count: 4,
            sigma: 0.1,
            band_separation: 2.0,
            within_band_shift: 0.0,
            mode: BandedMode::WithinBand,
            seed: 5,
        };
        let (source, target) = make_banded_dataset(&cfg).unwrap();
        let table = distance_table(&source, &target).unwrap();
        for k in 0..3 {
            assert!(table[(k, k)] < 1e-10);
        }
    }

    #[test]
    fn banded_parameter_validation() {
        let cfg = BandedConfig {
            dim: 2,
            num_bands: 9,
            per_band_count: 4,
            sigma: 0.1,
            band_separation: 2.0,
            within_band_shift: 0.1,
            mode: BandedMode::WithinBand,
            seed: 5,
        };
        assert!(matches!(make_banded_dataset(&cfg), Err(DataError::Params(_))));
        let cfg = BandedConfig {
            dim: 4,
            num_bands: 3,
            per_band_count: 4,
            sigma: 0.1,
            band_separation: 1.0,
            within_band_shift: 2.0,
            mode: BandedMode::WithinBand,
            seed: 5,
        };
        assert!(matches!(make_banded_dataset(&cfg), Err(DataError::Params(_))));
    }
}
