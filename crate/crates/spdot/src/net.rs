//! A minimal SPD network: one Bi-Map congruence layer, eigenvalue
//! rectification, a log map to flat coordinates, and a linear classifier,
//! with exact gradients for every stage.
//!
//! Derivatives of the eigenvalue-function layers (`U·f(Λ)·Uᵀ` for
//! `f = max(·, ε)` and `f = ln`) use the Daleckii–Krein form: conjugate the
//! upstream gradient into the eigenbasis, multiply elementwise by the Loewner
//! matrix of divided differences `(f(λᵢ) − f(λⱼ))/(λᵢ − λⱼ)`, and conjugate
//! back, switching the quotient to `f'(λᵢ)` when the gap falls below `1e-9`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::eig::{sym_eig, EigDecomp};
use crate::error::NetError;
use crate::mat::Mat;
use crate::spd::{
    airm_distance, airm_frechet_mean, coords_to_sym, lem_distance, lem_frechet_mean, sym_coord_len,
    sym_to_coords, Metric, SpdMatrix, SymMatrix, AIRM_MEAN_MAX_ITER, AIRM_MEAN_TOL,
};

/// Eigenvalue-gap threshold below which divided differences switch to `f'`.
const GAP_TOL: f64 = 1e-9;
/// Default eigenvalue rectification threshold.
pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Smallest admissible singular value for a Bi-Map weight.
const RANK_TOL: f64 = 1e-10;

/// The congruence layer `S ↦ W·S·Wᵀ` with a full-row-rank weight.
#[derive(Debug, Clone, PartialEq)]
pub struct BiMapLayer {
    w: Mat,
}

impl BiMapLayer {
    /// Validates full row rank (`σ_min(W) ≥ 1e-10`).
    pub fn new(w: Mat) -> Result<Self, NetError> {
        if w.rows() > w.cols() {
            return Err(NetError::DimMismatch { expected: w.cols(), found: w.rows() });
        }
        if !w.is_finite() {
            return Err(NetError::NonFiniteGradient);
        }
        let sigma_min = smallest_singular_value(&w)?;
        if sigma_min < RANK_TOL {
            return Err(NetError::RankDeficient { sigma_min });
        }
        Ok(BiMapLayer { w })
    }

    pub fn identity(dim: usize) -> Self {
        BiMapLayer { w: Mat::identity(dim) }
    }

    /// Skips the rank validation. Free-parameterization training uses this;
    /// the rectification floor keeps the downstream pipeline well defined
    /// even for a nearly singular weight.
    pub(crate) fn new_unchecked(w: Mat) -> Self {
        BiMapLayer { w }
    }

    /// A uniformly random semi-orthogonal weight (rows orthonormal).
    pub fn random_semi_orthogonal(
        d_out: usize,
        d_in: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NetError> {
        if d_out > d_in {
            return Err(NetError::DimMismatch { expected: d_in, found: d_out });
        }
        let gaussian = Mat::from_fn(d_in, d_out, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = gaussian.qr_thin();
        Ok(BiMapLayer { w: q.transpose() })
    }

    pub fn w(&self) -> &Mat {
        &self.w
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    /// `‖W·Wᵀ − I‖_F`, zero for a semi-orthogonal weight.
    pub fn orthogonality_defect(&self) -> f64 {
        self.w
            .matmul(&self.w.transpose())
            .sub(&Mat::identity(self.w.rows()))
            .frobenius_norm()
    }

    /// `W·S·Wᵀ`, positive definite whenever `W` has full row rank.
    pub fn forward(&self, s: &SpdMatrix) -> Result<SpdMatrix, NetError> {
        if s.dim() != self.d_in() {
            return Err(NetError::DimMismatch { expected: self.d_in(), found: s.dim() });
        }
        SpdMatrix::new(self.w.congruence(s.mat()).symmetrize()).map_err(NetError::Geometry)
    }

    /// Gradients of `⟨G, W·S·Wᵀ⟩`: `(2·G·W·S, sym(Wᵀ·G·W))`.
    pub fn backward(&self, s: &SpdMatrix, upstream: &SymMatrix) -> (Mat, SymMatrix) {
        let d_w = upstream.mat().matmul(&self.w).matmul(s.mat()).scale(2.0);
        let d_s = SymMatrix::from_symmetric(self.w.transpose().congruence(upstream.mat()).symmetrize());
        (d_w, d_s)
    }
}

fn smallest_singular_value(w: &Mat) -> Result<f64, NetError> {
    let gram = w.matmul(&w.transpose());
    let eig = sym_eig(&gram).map_err(NetError::Geometry)?;
    Ok(eig.eigenvalues.last().unwrap().max(0.0).sqrt())
}

/// Eigenvalue rectification `U·max(εI, Λ)·Uᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReEigLayer {
    epsilon: f64,
}

impl ReEigLayer {
    pub fn new(epsilon: f64) -> Result<Self, NetError> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(NetError::InvalidEpsilon(epsilon));
        }
        Ok(ReEigLayer { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Floors the spectrum at ε; idempotent, and the identity map when every
    /// eigenvalue already clears the threshold.
    pub fn forward(&self, s: &SpdMatrix) -> SpdMatrix {
        self.forward_from_eig(s.eig())
    }

    pub(crate) fn forward_from_eig(&self, eig: &EigDecomp) -> SpdMatrix {
        let floored: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(self.epsilon)).collect();
        SpdMatrix::from_parts(eig.eigenvectors.clone(), floored)
    }

    /// Pulls `upstream` back through the rectification at the cached input
    /// decomposition.
    pub fn backward(&self, input_eig: &EigDecomp, upstream: &SymMatrix) -> SymMatrix {
        let eps = self.epsilon;
        loewner_backward(
            input_eig,
            |l| l.max(eps),
            |l| if l > eps { 1.0 } else { 0.0 },
            upstream,
        )
    }
}

/// `U·log(Λ)·Uᵀ`, the log map to flat tangent coordinates.
pub fn logeig_forward(s: &SpdMatrix) -> SymMatrix {
    s.log()
}

/// Pulls `upstream` back through the log map at the cached decomposition of
/// the (positive definite) input.
pub fn logeig_backward(input_eig: &EigDecomp, upstream: &SymMatrix) -> SymMatrix {
    loewner_backward(input_eig, f64::ln, |l| 1.0 / l, upstream)
}

/// Shared Daleckii–Krein pullback `G ↦ U·(K ∘ (Uᵀ·G·U))·Uᵀ`.
fn loewner_backward(
    eig: &EigDecomp,
    f: impl Fn(f64) -> f64,
    fprime: impl Fn(f64) -> f64,
    upstream: &SymMatrix,
) -> SymMatrix {
    let n = eig.dim();
    let u = &eig.eigenvectors;
    let m = u.transpose().matmul(upstream.mat()).matmul(u);
    let mut scaled = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let li = eig.eigenvalues[i];
            let lj = eig.eigenvalues[j];
            let k = if (li - lj).abs() < GAP_TOL {
                fprime(li)
            } else {
                (f(li) - f(lj)) / (li - lj)
            };
            scaled[(i, j)] = k * m[(i, j)];
        }
    }
    SymMatrix::from_symmetric(u.matmul(&scaled).matmul(&u.transpose()).symmetrize())
}

/// Linear classifier on the isometric coordinates of the log features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weight: Mat,
    bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(weight: Mat, bias: Vec<f64>) -> Result<Self, NetError> {
        if weight.rows() != bias.len() {
            return Err(NetError::DimMismatch { expected: weight.rows(), found: bias.len() });
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(NetError::NonFiniteGradient);
        }
        Ok(ClassifierHead { weight, bias })
    }

    pub fn zeros(classes: usize, features: usize) -> Self {
        ClassifierHead { weight: Mat::zeros(classes, features), bias: vec![0.0; classes] }
    }

    pub fn weight(&self) -> &Mat {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, features: &[f64]) -> Vec<f64> {
        let mut logits = self.weight.matvec(features);
        for (l, b) in logits.iter_mut().zip(&self.bias) {
            *l += b;
        }
        logits
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: SpdMatrix,
    /// Decomposition of the Bi-Map output (rectification input).
    pub bimap_eig: EigDecomp,
    /// Post-rectification SPD embedding.
    pub embedding: SpdMatrix,
    /// Log map of the embedding.
    pub log_feature: SymMatrix,
    /// Isometric coordinates fed to the head.
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Gradients with respect to every trainable parameter.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub d_w: Mat,
    pub d_head_weight: Mat,
    pub d_head_bias: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(model: &DotModel) -> Self {
        ParamGrads {
            d_w: Mat::zeros(model.bimap.d_out(), model.bimap.d_in()),
            d_head_weight: Mat::zeros(model.head.classes(), model.feature_len()),
            d_head_bias: vec![0.0; model.head.classes()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_w.is_finite()
            && self.d_head_weight.is_finite()
            && self.d_head_bias.iter().all(|x| x.is_finite())
    }
}

/// The full model: Bi-Map, rectification, log map, classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DotModel {
    pub bimap: BiMapLayer,
    pub reeig: ReEigLayer,
    pub head: ClassifierHead,
}

impl DotModel {
    pub fn new(bimap: BiMapLayer, reeig: ReEigLayer, head: ClassifierHead) -> Result<Self, NetError> {
        let expected = sym_coord_len(bimap.d_out());
        if head.weight.cols() != expected {
            return Err(NetError::DimMismatch { expected, found: head.weight.cols() });
        }
        Ok(DotModel { bimap, reeig, head })
    }

    /// Identity Bi-Map (requires `d_out = d_in`), zero head.
    pub fn with_identity_bimap(dim: usize, classes: usize, epsilon: f64) -> Result<Self, NetError> {
        DotModel::new(
            BiMapLayer::identity(dim),
            ReEigLayer::new(epsilon)?,
            ClassifierHead::zeros(classes, sym_coord_len(dim)),
        )
    }

    /// Random semi-orthogonal Bi-Map, zero head.
    pub fn init(
        d_in: usize,
        d_out: usize,
        classes: usize,
        epsilon: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, NetError> {
        DotModel::new(
            BiMapLayer::random_semi_orthogonal(d_out, d_in, rng)?,
            ReEigLayer::new(epsilon)?,
            ClassifierHead::zeros(classes, sym_coord_len(d_out)),
        )
    }

    /// [`DotModel::init`] with a self-contained deterministic generator.
    pub fn seeded_random(
        d_in: usize,
        d_out: usize,
        classes: usize,
        epsilon: f64,
        seed: u64,
    ) -> Result<Self, NetError> {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::init(d_in, d_out, classes, epsilon, &mut rng)
    }

    pub fn d_in(&self) -> usize {
        self.bimap.d_in()
    }

    pub fn d_out(&self) -> usize {
        self.bimap.d_out()
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn feature_len(&self) -> usize {
        sym_coord_len(self.bimap.d_out())
    }

    /// Full forward pass. The Bi-Map output is eigendecomposed once and the
    /// rectified embedding is assembled from the floored spectrum, so a
    /// weight that has drifted close to rank deficiency still produces a
    /// usable (rectified) embedding.
    pub fn forward(&self, s: &SpdMatrix) -> Result<(Vec<f64>, ForwardCache), NetError> {
        if s.dim() != self.d_in() {
            return Err(NetError::DimMismatch { expected: self.d_in(), found: s.dim() });
        }
        let b = self.bimap.w().congruence(s.mat()).symmetrize();
        let bimap_eig = sym_eig(&b).map_err(NetError::Geometry)?;
        let embedding = self.reeig.forward_from_eig(&bimap_eig);
        let log_feature = embedding.log();
        let features = sym_to_coords(&log_feature);
        let logits = self.head.forward(&features);
        Ok((
            logits.clone(),
            ForwardCache { input: s.clone(), bimap_eig, embedding, log_feature, features, logits },
        ))
    }

    /// Class prediction: argmax of the logits, smallest index on ties.
    pub fn predict(&self, s: &SpdMatrix) -> Result<usize, NetError> {
        let (logits, _) = self.forward(s)?;
        Ok(argmax(&logits))
    }

    /// Accumulates parameter gradients for one sample given the gradient of
    /// the loss with respect to its logits and (optionally) its log feature.
    pub fn backward_sample(
        &self,
        cache: &ForwardCache,
        d_logits: &[f64],
        d_log_feature: Option<&SymMatrix>,
        grads: &mut ParamGrads,
    ) {
        // Head.
        for (i, &dl) in d_logits.iter().enumerate() {
            grads.d_head_bias[i] += dl;
            if dl != 0.0 {
                for (j, &f) in cache.features.iter().enumerate() {
                    grads.d_head_weight[(i, j)] += dl * f;
                }
            }
        }
        // Gradient w.r.t. the log feature: head pullback plus any direct term.
        let d_features = self.head.weight.transpose().matvec(d_logits);
        let mut d_x = coords_to_sym(self.d_out(), &d_features).expect("feature length");
        if let Some(extra) = d_log_feature {
            d_x = d_x.add(extra);
        }
        // Log map pullback at the rectified spectrum.
        let d_embedding = logeig_backward(cache.embedding.eig(), &d_x);
        // Rectification pullback at the raw Bi-Map spectrum.
        let d_bimap = self.reeig.backward(&cache.bimap_eig, &d_embedding);
        // Bi-Map parameter gradient.
        let (d_w, _) = self.bimap.backward(&cache.input, &d_bimap);
        grads.d_w.add_in_place(&d_w, 1.0);
    }

    /// Writes the checkpoint format documented in the book: magic, version,
    /// dimensions, rectification threshold, then row-major parameter blocks
    /// as little-endian doubles.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.d_in() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.d_out() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.classes() as u32).to_le_bytes());
        buf.extend_from_slice(&self.reeig.epsilon().to_le_bytes());
        for &x in self.bimap.w().data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for &x in self.head.weight.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for &x in &self.head.bias {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(|e| NetError::Io(e.to_string()))?;
        file.write_all(&buf).map_err(|e| NetError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| NetError::Io(e.to_string()))?;
        let mut cursor = Cursor { bytes: &bytes, pos: 0 };
        let magic = cursor.take(8)?;
        if magic != MAGIC {
            return Err(NetError::Format("bad magic".into()));
        }
        let version = cursor.u32()?;
        if version != 1 {
            return Err(NetError::Format(format!("unsupported version {version}")));
        }
        let d_in = cursor.u32()? as usize;
        let d_out = cursor.u32()? as usize;
        let classes = cursor.u32()? as usize;
        let epsilon = cursor.f64()?;
        let w = Mat::from_flat(d_out, d_in, cursor.f64_block(d_out * d_in)?)
            .map_err(NetError::Geometry)?;
        let features = sym_coord_len(d_out);
        let head_w = Mat::from_flat(classes, features, cursor.f64_block(classes * features)?)
            .map_err(NetError::Geometry)?;
        let head_b = cursor.f64_block(classes)?;
        if cursor.pos != bytes.len() {
            return Err(NetError::Format(format!(
                "{} trailing bytes after parameter blocks",
                bytes.len() - cursor.pos
            )));
        }
        if !w.is_finite() {
            return Err(NetError::Format("non-finite Bi-Map weight".into()));
        }
        // No rank validation here: a free-parameterization run may legitimately
        // have driven the weight next to rank deficiency, and the forward pass
        // stays well defined through the rectification floor.
        DotModel::new(
            BiMapLayer::new_unchecked(w),
            ReEigLayer::new(epsilon)?,
            ClassifierHead::new(head_w, head_b)?,
        )
    }
}

const MAGIC: &[u8; 8] = b"SPDOTMD1";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.pos + n > self.bytes.len() {
            return Err(NetError::Format("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_block(&mut self, count: usize) -> Result<Vec<f64>, NetError> {
        (0..count).map(|_| self.f64()).collect()
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Projects a Euclidean gradient onto the tangent space of the row-Stiefel
/// manifold `{W : W·Wᵀ = I}`, steps, and retracts by thin QR. A zero
/// projected gradient returns the weight unchanged.
pub fn stiefel_update(w: &Mat, euclidean_grad: &Mat, lr: f64) -> Result<Mat, NetError> {
    if !euclidean_grad.is_finite() {
        return Err(NetError::NonFiniteGradient);
    }
    let sym = euclidean_grad.matmul(&w.transpose()).symmetrize();
    let projected = euclidean_grad.sub(&sym.matmul(w));
    if lr == 0.0 || projected.max_abs() == 0.0 {
        return Ok(w.clone());
    }
    let stepped = w.sub(&projected.scale(lr));
    Ok(stepped.transpose().qr_thin().transpose())
}

/// Minimum-distance-to-mean classifier: one Fréchet mean per class under the
/// chosen metric.
#[derive(Debug, Clone)]
pub struct MdmClassifier {
    centroids: Vec<SpdMatrix>,
    metric: Metric,
}

impl MdmClassifier {
    pub fn centroids(&self) -> &[SpdMatrix] {
        &self.centroids
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Nearest centroid, smallest class index on ties.
    pub fn predict(&self, s: &SpdMatrix) -> Result<usize, NetError> {
        let mut best = (0usize, f64::INFINITY);
        for (label, c) in self.centroids.iter().enumerate() {
            let d = match self.metric {
                Metric::LogEuclidean => lem_distance(s, c),
                Metric::AffineInvariant => airm_distance(s, c),
            }
            .map_err(NetError::Geometry)?;
            if d < best.1 {
                best = (label, d);
            }
        }
        Ok(best.0)
    }
}

/// Fits per-class Fréchet means; every class in `0..num_classes` must occur.
pub fn mdm_fit(
    train: &[(SpdMatrix, usize)],
    num_classes: usize,
    metric: Metric,
) -> Result<MdmClassifier, NetError> {
    for (_, y) in train {
        if *y >= num_classes {
            return Err(NetError::LabelOutOfRange { label: *y, classes: num_classes });
        }
    }
    let mut centroids = Vec::with_capacity(num_classes);
    for label in 0..num_classes {
        let class: Vec<SpdMatrix> =
            train.iter().filter(|(_, y)| *y == label).map(|(s, _)| s.clone()).collect();
        if class.is_empty() {
            return Err(NetError::EmptyClass { label });
        }
        let centroid = match metric {
            Metric::LogEuclidean => lem_frechet_mean(&class),
            Metric::AffineInvariant => airm_frechet_mean(&class, AIRM_MEAN_MAX_ITER, AIRM_MEAN_TOL),
        }
        .map_err(NetError::Geometry)?;
        centroids.push(centroid);
    }
    Ok(MdmClassifier { centroids, metric })
}

/// Fraction of samples whose prediction matches the label.
pub fn accuracy(model: &DotModel, samples: &[(SpdMatrix, usize)]) -> Result<f64, NetError> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    for (s, y) in samples {
        if model.predict(s)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
