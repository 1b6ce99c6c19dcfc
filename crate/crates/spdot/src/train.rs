//! Distribution-adaptation losses and the training loops that drive them.
//!
//! The marginal loss is the log-Euclidean distance between the Fréchet means
//! of the embedded source and target batches; the conditional loss is the
//! same quantity summed per class, pairing pseudo-labeled target samples with
//! labeled source samples. The combined objective is
//! `α₁·CE + α₂·MDA² + α₃·CDA²` — the adaptation terms enter squared. The
//! joint-transport objective (`deepjdot_*`) instead couples every pair of
//! embedded samples through an optimal plan, re-solved once per batch, and
//! alternates plan solves with gradient steps.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TrainError;
use crate::mat::Mat;
use crate::net::{
    accuracy, argmax, mdm_fit, stiefel_update, ClassifierHead, DotModel, ForwardCache,
    MdmClassifier, ParamGrads,
};
use crate::ot::{solve_emd, CostMatrix, DiscreteMeasure, TransportPlan};
use crate::spd::{Metric, SpdMatrix, SymMatrix};

/// Coefficients of the combined and joint-transport objectives; all
/// nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub jd_alpha1: f64,
    pub jd_alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha1: 1.0, alpha2: 1.0, alpha3: 1.0, jd_alpha1: 1.0, jd_alpha2: 1.0 }
    }
}

impl LossWeights {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self, TrainError> {
        let w = LossWeights { alpha1, alpha2, alpha3, ..Default::default() };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("jd_alpha1", self.jd_alpha1),
            ("jd_alpha2", self.jd_alpha2),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(TrainError::InvalidConfig(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Whether adaptation terms enter squared (the default) or literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TermForm {
    #[default]
    Squared,
    Literal,
}

/// Which loss family the training loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Mda,
    Cda,
    MdaCda,
    DeepJdot,
}

impl TrainMode {
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        match text {
            "mda" => Ok(TrainMode::Mda),
            "cda" => Ok(TrainMode::Cda),
            "mda+cda" => Ok(TrainMode::MdaCda),
            "deepjdot" => Ok(TrainMode::DeepJdot),
            other => Err(TrainError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Mda => "mda",
            TrainMode::Cda => "cda",
            TrainMode::MdaCda => "mda+cda",
            TrainMode::DeepJdot => "deepjdot",
        }
    }

    fn uses_cda(&self) -> bool {
        matches!(self, TrainMode::Cda | TrainMode::MdaCda)
    }
}

/// How the Bi-Map weight is parameterized during updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiMapParam {
    /// Semi-orthogonal weight, updated by projection and QR retraction; the
    /// full-row-rank requirement holds automatically.
    #[default]
    Stiefel,
    /// Unconstrained weight, updated by a plain gradient step; rank is only
    /// monitored indirectly through the rectification floor.
    Free,
}

impl BiMapParam {
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        match text {
            "stiefel" => Ok(BiMapParam::Stiefel),
            "free" => Ok(BiMapParam::Free),
            other => Err(TrainError::InvalidConfig(format!("unknown bimap parameterization {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BiMapParam::Stiefel => "stiefel",
            BiMapParam::Free => "free",
        }
    }
}

/// Where pseudo-labels for the conditional loss come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PseudoLabelSource {
    /// Minimum-distance-to-mean classifier fitted on the raw source samples.
    #[default]
    Mdm,
    /// The network's own current predictions.
    Network,
}

impl PseudoLabelSource {
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        match text {
            "mdm" => Ok(PseudoLabelSource::Mdm),
            "network" => Ok(PseudoLabelSource::Network),
            other => Err(TrainError::InvalidConfig(format!("unknown pseudo-label source {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PseudoLabelSource::Mdm => "mdm",
            PseudoLabelSource::Network => "network",
        }
    }
}

/// A fitted labeler for the target domain.
#[derive(Debug, Clone)]
pub enum PseudoLabeler {
    Mdm(MdmClassifier),
    Network(DotModel),
}

/// Deterministic pseudo-labels for the target samples.
pub fn refresh_pseudo_labels(
    labeler: &PseudoLabeler,
    targets: &[SpdMatrix],
) -> Result<Vec<usize>, TrainError> {
    targets
        .iter()
        .map(|s| match labeler {
            PseudoLabeler::Mdm(clf) => clf.predict(s).map_err(TrainError::Net),
            PseudoLabeler::Network(model) => model.predict(s).map_err(TrainError::Net),
        })
        .collect()
}

/// One paired mini-batch.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub source: Vec<(SpdMatrix, usize)>,
    pub target: Vec<(SpdMatrix, Option<usize>)>,
}

impl TrainBatch {
    pub fn new(
        source: Vec<(SpdMatrix, usize)>,
        target: Vec<(SpdMatrix, Option<usize>)>,
    ) -> Result<Self, TrainError> {
        if source.is_empty() {
            return Err(TrainError::EmptyBatch("source"));
        }
        Ok(TrainBatch { source, target })
    }
}

/// Training-loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs between pseudo-label refreshes.
    pub refresh_period: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub bimap_param: BiMapParam,
    pub pseudo_labels: PseudoLabelSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::MdaCda,
            epochs: 50,
            batch_size: 16,
            lr: 1e-2,
            refresh_period: 1,
            seed: 42,
            weights: LossWeights::default(),
            bimap_param: BiMapParam::default(),
            pseudo_labels: PseudoLabelSource::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.refresh_period == 0 {
            return Err(TrainError::InvalidConfig("refresh_period must be positive".into()));
        }
        self.weights.validate()
    }

    /// Flat `key=value` serialization, one pair per line, keys sorted.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("alpha1", self.weights.alpha1.to_string());
        push("alpha2", self.weights.alpha2.to_string());
        push("alpha3", self.weights.alpha3.to_string());
        push("batch_size", self.batch_size.to_string());
        push("bimap_param", self.bimap_param.as_str().to_string());
        push("epochs", self.epochs.to_string());
        push("jd_alpha1", self.weights.jd_alpha1.to_string());
        push("jd_alpha2", self.weights.jd_alpha2.to_string());
        push("lr", self.lr.to_string());
        push("mode", self.mode.as_str().to_string());
        push("pseudo_labels", self.pseudo_labels.as_str().to_string());
        push("refresh_period", self.refresh_period.to_string());
        push("seed", self.seed.to_string());
        out
    }

    /// Parses the `key=value` format written by [`TrainConfig::to_kv`];
    /// unknown keys are rejected, missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::InvalidConfig(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| TrainError::InvalidConfig(format!("line {}: bad {what}: {value:?}", lineno + 1));
            match key {
                "alpha1" => cfg.weights.alpha1 = value.parse().map_err(|_| bad("alpha1"))?,
                "alpha2" => cfg.weights.alpha2 = value.parse().map_err(|_| bad("alpha2"))?,
                "alpha3" => cfg.weights.alpha3 = value.parse().map_err(|_| bad("alpha3"))?,
                "jd_alpha1" => cfg.weights.jd_alpha1 = value.parse().map_err(|_| bad("jd_alpha1"))?,
                "jd_alpha2" => cfg.weights.jd_alpha2 = value.parse().map_err(|_| bad("jd_alpha2"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad("lr"))?,
                "mode" => cfg.mode = TrainMode::parse(value)?,
                "bimap_param" => cfg.bimap_param = BiMapParam::parse(value)?,
                "pseudo_labels" => cfg.pseudo_labels = PseudoLabelSource::parse(value)?,
                "refresh_period" => cfg.refresh_period = value.parse().map_err(|_| bad("refresh_period"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                other => {
                    return Err(TrainError::InvalidConfig(format!("line {}: unknown key {other:?}", lineno + 1)))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-epoch loss components and accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce: f64,
    pub mda: f64,
    pub cda: f64,
    pub total: f64,
    pub source_acc: f64,
    pub target_acc: Option<f64>,
}

/// Loss history of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// CSV with header `epoch,ce,mda,cda,total,source_acc,target_acc`;
    /// the target-accuracy column is left empty when no target labels were
    /// available.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,ce,mda,cda,total,source_acc,target_acc\n");
        for e in &self.epochs {
            let target = e.target_acc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.ce, e.mda, e.cda, e.total, e.source_acc, target
            ));
        }
        out
    }
}

/// Numerically stable cross-entropy of one logit vector against a label.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Marginal adaptation loss: distance between mean log features,
/// `‖ mean log Sᵢ − mean log S̄ⱼ ‖_F`.
pub fn mda_loss(embed_s: &[SpdMatrix], embed_t: &[SpdMatrix]) -> Result<f64, TrainError> {
    let ms = crate::spd::mean_log(embed_s).map_err(TrainError::from)?;
    let mt = crate::spd::mean_log(embed_t).map_err(TrainError::from)?;
    Ok(ms.sub(&mt).frobenius_norm())
}

/// Conditional adaptation loss: per-class mean-log distances summed over the
/// classes present in both domains; absent classes contribute zero.
pub fn cda_loss(
    embed_s: &[SpdMatrix],
    labels_s: &[usize],
    embed_t: &[SpdMatrix],
    pseudo_t: &[usize],
    num_classes: usize,
) -> Result<f64, TrainError> {
    if embed_s.len() != labels_s.len() {
        return Err(TrainError::LengthMismatch { what: "source labels", expected: embed_s.len(), found: labels_s.len() });
    }
    if embed_t.len() != pseudo_t.len() {
        return Err(TrainError::LengthMismatch { what: "pseudo labels", expected: embed_t.len(), found: pseudo_t.len() });
    }
    for &y in labels_s.iter().chain(pseudo_t) {
        if y >= num_classes {
            return Err(TrainError::LabelOutOfRange { label: y, classes: num_classes });
        }
    }
    let mut total = 0.0;
    for class in 0..num_classes {
        let s: Vec<SpdMatrix> = embed_s
            .iter()
            .zip(labels_s)
            .filter(|(_, &y)| y == class)
            .map(|(m, _)| m.clone())
            .collect();
        let t: Vec<SpdMatrix> = embed_t
            .iter()
            .zip(pseudo_t)
            .filter(|(_, &y)| y == class)
            .map(|(m, _)| m.clone())
            .collect();
        if s.is_empty() || t.is_empty() {
            continue;
        }
        total += mda_loss(&s, &t)?;
    }
    Ok(total)
}

/// The combined objective `α₁·CE + α₂·MDA² + α₃·CDA²` on already-embedded
/// batches; `logits_s` are the source logits, `embed_*` the post-rectification
/// embeddings.
#[allow(clippy::too_many_arguments)]
pub fn dot_total_loss(
    logits_s: &[Vec<f64>],
    labels_s: &[usize],
    embed_s: &[SpdMatrix],
    embed_t: &[SpdMatrix],
    pseudo_t: &[usize],
    weights: &LossWeights,
    num_classes: usize,
) -> Result<f64, TrainError> {
    weights.validate()?;
    if logits_s.len() != labels_s.len() {
        return Err(TrainError::LengthMismatch { what: "source labels", expected: logits_s.len(), found: labels_s.len() });
    }
    if logits_s.is_empty() {
        return Err(TrainError::EmptyBatch("source"));
    }
    let ce = logits_s
        .iter()
        .zip(labels_s)
        .map(|(l, &y)| cross_entropy(l, y))
        .sum::<f64>()
        / logits_s.len() as f64;
    let mut total = weights.alpha1 * ce;
    if weights.alpha2 != 0.0 {
        let mda = mda_loss(embed_s, embed_t)?;
        total += weights.alpha2 * mda * mda;
    }
    if weights.alpha3 != 0.0 {
        let cda = cda_loss(embed_s, labels_s, embed_t, pseudo_t, num_classes)?;
        total += weights.alpha3 * cda * cda;
    }
    Ok(total)
}

/// Multi-source combination: `Σᵢ α₁ⁱ·CEᵢ + α₂ⁱ·MDAᵢ + α₃ⁱ·CDAᵢ`, with the
/// adaptation terms squared under [`TermForm::Squared`].
pub fn multi_source_loss(
    per_source_terms: &[(f64, f64, f64)],
    per_source_weights: &[LossWeights],
    form: TermForm,
) -> Result<f64, TrainError> {
    if per_source_terms.is_empty() {
        return Err(TrainError::EmptyBatch("sources"));
    }
    if per_source_terms.len() != per_source_weights.len() {
        return Err(TrainError::LengthMismatch {
            what: "per-source weights",
            expected: per_source_terms.len(),
            found: per_source_weights.len(),
        });
    }
    let shape = |x: f64| match form {
        TermForm::Squared => x * x,
        TermForm::Literal => x,
    };
    let mut total = 0.0;
    for ((ce, mda, cda), w) in per_source_terms.iter().zip(per_source_weights) {
        w.validate()?;
        total += w.alpha1 * ce + w.alpha2 * shape(*mda) + w.alpha3 * shape(*cda);
    }
    Ok(total)
}

/// The joint-transport objective with a fixed plan:
/// `mean CE(y, f(g(S))) + Σᵢⱼ γᵢⱼ·(jd₁·d²(g(Sᵢ), g(S̄ⱼ)) + jd₂·CE(yᵢ, f(g(S̄ⱼ))))`.
pub fn deepjdot_loss(
    model: &DotModel,
    batch: &TrainBatch,
    plan: &TransportPlan,
    weights: &LossWeights,
) -> Result<f64, TrainError> {
    weights.validate()?;
    if plan.rows() != batch.source.len() || plan.cols() != batch.target.len() {
        return Err(TrainError::LengthMismatch {
            what: "plan",
            expected: batch.source.len() * batch.target.len(),
            found: plan.rows() * plan.cols(),
        });
    }
    let src: Vec<(Vec<f64>, ForwardCache)> = batch
        .source
        .iter()
        .map(|(s, _)| model.forward(s).map_err(TrainError::Net))
        .collect::<Result<_, _>>()?;
    let tgt: Vec<(Vec<f64>, ForwardCache)> = batch
        .target
        .iter()
        .map(|(s, _)| model.forward(s).map_err(TrainError::Net))
        .collect::<Result<_, _>>()?;
    let mut loss = batch
        .source
        .iter()
        .zip(&src)
        .map(|((_, y), (logits, _))| cross_entropy(logits, *y))
        .sum::<f64>()
        / batch.source.len() as f64;
    for (i, (_, ci)) in src.iter().enumerate() {
        for (j, (logits_j, cj)) in tgt.iter().enumerate() {
            let w = plan.get(i, j);
            if w == 0.0 {
                continue;
            }
            let d = ci.log_feature.sub(&cj.log_feature).frobenius_norm();
            let y = batch.source[i].1;
            loss += w * (weights.jd_alpha1 * d * d + weights.jd_alpha2 * cross_entropy(logits_j, y));
        }
    }
    Ok(loss)
}

/// Loss components and parameter gradients of one batch evaluation.
pub struct BatchEval {
    pub ce: f64,
    pub mda: f64,
    pub cda: f64,
    pub total: f64,
    pub grads: ParamGrads,
}

/// Forward + backward for the combined objective on one paired batch.
/// Zero-weighted terms are skipped entirely, so a run with `α₂ = α₃ = 0` is
/// bit-identical to plain source-only training.
pub fn eval_dot_objective(
    model: &DotModel,
    source: &[(SpdMatrix, usize)],
    target: &[SpdMatrix],
    pseudo: &[usize],
    weights: &LossWeights,
) -> Result<BatchEval, TrainError> {
    weights.validate()?;
    if source.is_empty() {
        return Err(TrainError::EmptyBatch("source"));
    }
    let classes = model.classes();
    for (_, y) in source {
        if *y >= classes {
            return Err(TrainError::LabelOutOfRange { label: *y, classes });
        }
    }
    let n = source.len();
    let src: Vec<(Vec<f64>, ForwardCache)> = source
        .iter()
        .map(|(s, _)| model.forward(s).map_err(TrainError::Net))
        .collect::<Result<_, _>>()?;
    let needs_target = weights.alpha2 != 0.0 || weights.alpha3 != 0.0;
    let tgt: Vec<(Vec<f64>, ForwardCache)> = if needs_target {
        if target.is_empty() {
            return Err(TrainError::EmptyBatch("target"));
        }
        target
            .iter()
            .map(|s| model.forward(s).map_err(TrainError::Net))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let m = tgt.len();

    // Cross-entropy term and its logit gradients.
    let mut ce = 0.0;
    let mut d_logits_src: Vec<Vec<f64>> = Vec::with_capacity(n);
    for ((_, y), (logits, _)) in source.iter().zip(&src) {
        ce += cross_entropy(logits, *y);
        let mut g = softmax(logits);
        g[*y] -= 1.0;
        for v in g.iter_mut() {
            *v *= weights.alpha1 / n as f64;
        }
        d_logits_src.push(g);
    }
    ce /= n as f64;

    let dim = model.d_out();
    let mut d_x_src: Vec<SymMatrix> = vec![SymMatrix::zeros(dim); n];
    let mut d_x_tgt: Vec<SymMatrix> = vec![SymMatrix::zeros(dim); m];

    // Marginal term.
    let mut mda = 0.0;
    if weights.alpha2 != 0.0 {
        let mut delta = Mat::zeros(dim, dim);
        for (_, c) in &src {
            delta.add_in_place(c.log_feature.mat(), 1.0 / n as f64);
        }
        for (_, c) in &tgt {
            delta.add_in_place(c.log_feature.mat(), -1.0 / m as f64);
        }
        mda = delta.frobenius_norm();
        let delta = SymMatrix::from_symmetric(delta);
        let source_scale = 2.0 * weights.alpha2 / n as f64;
        let target_scale = -2.0 * weights.alpha2 / m as f64;
        for g in d_x_src.iter_mut() {
            *g = g.add(&delta.scale(source_scale));
        }
        for g in d_x_tgt.iter_mut() {
            *g = g.add(&delta.scale(target_scale));
        }
    }

    // Conditional term: d(cda²)/dXᵢ = 2·cda·Δ_ℓ/(‖Δ_ℓ‖·n_ℓ).
    let mut cda = 0.0;
    if weights.alpha3 != 0.0 {
        if pseudo.len() != m {
            return Err(TrainError::MissingPseudoLabels);
        }
        for &y in pseudo {
            if y >= classes {
                return Err(TrainError::LabelOutOfRange { label: y, classes });
            }
        }
        let mut per_class: Vec<(Vec<usize>, Vec<usize>, Mat, f64)> = Vec::new();
        for class in 0..classes {
            let si: Vec<usize> =
                (0..n).filter(|&i| source[i].1 == class).collect();
            let tj: Vec<usize> = (0..m).filter(|&j| pseudo[j] == class).collect();
            if si.is_empty() || tj.is_empty() {
                continue;
            }
            let mut delta = Mat::zeros(dim, dim);
            for &i in &si {
                delta.add_in_place(src[i].1.log_feature.mat(), 1.0 / si.len() as f64);
            }
            for &j in &tj {
                delta.add_in_place(tgt[j].1.log_feature.mat(), -1.0 / tj.len() as f64);
            }
            let norm = delta.frobenius_norm();
            cda += norm;
            per_class.push((si, tj, delta, norm));
        }
        for (si, tj, delta, norm) in per_class {
            if norm < 1e-300 {
                continue;
            }
            let unit = delta.scale(1.0 / norm);
            let s_scale = 2.0 * weights.alpha3 * cda / si.len() as f64;
            for &i in &si {
                d_x_src[i] = d_x_src[i].add(&SymMatrix::from_symmetric(unit.scale(s_scale)));
            }
            let t_scale = -2.0 * weights.alpha3 * cda / tj.len() as f64;
            for &j in &tj {
                d_x_tgt[j] = d_x_tgt[j].add(&SymMatrix::from_symmetric(unit.scale(t_scale)));
            }
        }
    }

    let mut grads = ParamGrads::zeros(model);
    let zero_logits = vec![0.0; classes];
    for (i, (_, cache)) in src.iter().enumerate() {
        let dx = if weights.alpha2 != 0.0 || weights.alpha3 != 0.0 {
            Some(&d_x_src[i])
        } else {
            None
        };
        model.backward_sample(cache, &d_logits_src[i], dx, &mut grads);
    }
    for (j, (_, cache)) in tgt.iter().enumerate() {
        model.backward_sample(cache, &zero_logits, Some(&d_x_tgt[j]), &mut grads);
    }

    let total = weights.alpha1 * ce + weights.alpha2 * mda * mda + weights.alpha3 * cda * cda;
    Ok(BatchEval { ce, mda, cda, total, grads })
}

/// Forward + backward for the joint-transport objective with a fixed plan.
pub fn eval_deepjdot_objective(
    model: &DotModel,
    batch: &TrainBatch,
    plan: &TransportPlan,
    weights: &LossWeights,
) -> Result<BatchEval, TrainError> {
    weights.validate()?;
    let n = batch.source.len();
    let m = batch.target.len();
    if n == 0 {
        return Err(TrainError::EmptyBatch("source"));
    }
    if plan.rows() != n || plan.cols() != m {
        return Err(TrainError::LengthMismatch {
            what: "plan",
            expected: n * m,
            found: plan.rows() * plan.cols(),
        });
    }
    let classes = model.classes();
    let src: Vec<(Vec<f64>, ForwardCache)> = batch
        .source
        .iter()
        .map(|(s, _)| model.forward(s).map_err(TrainError::Net))
        .collect::<Result<_, _>>()?;
    let tgt: Vec<(Vec<f64>, ForwardCache)> = batch
        .target
        .iter()
        .map(|(s, _)| model.forward(s).map_err(TrainError::Net))
        .collect::<Result<_, _>>()?;

    let mut ce = 0.0;
    let mut d_logits_src: Vec<Vec<f64>> = Vec::with_capacity(n);
    for ((_, y), (logits, _)) in batch.source.iter().zip(&src) {
        if *y >= classes {
            return Err(TrainError::LabelOutOfRange { label: *y, classes });
        }
        ce += cross_entropy(logits, *y);
        let mut g = softmax(logits);
        g[*y] -= 1.0;
        for v in g.iter_mut() {
            *v /= n as f64;
        }
        d_logits_src.push(g);
    }
    ce /= n as f64;

    let dim = model.d_out();
    let mut total = ce;
    let mut transport = 0.0;
    let mut d_x_src: Vec<SymMatrix> = vec![SymMatrix::zeros(dim); n];
    let mut d_x_tgt: Vec<SymMatrix> = vec![SymMatrix::zeros(dim); m];
    let mut d_logits_tgt: Vec<Vec<f64>> = vec![vec![0.0; classes]; m];
    for i in 0..n {
        let y = batch.source[i].1;
        for j in 0..m {
            let w = plan.get(i, j);
            if w == 0.0 {
                continue;
            }
            let diff = src[i].1.log_feature.sub(&tgt[j].1.log_feature);
            let d = diff.frobenius_norm();
            transport += w * (weights.jd_alpha1 * d * d + weights.jd_alpha2 * cross_entropy(&tgt[j].0, y));
            if weights.jd_alpha1 != 0.0 {
                let scaled = diff.scale(2.0 * w * weights.jd_alpha1);
                d_x_src[i] = d_x_src[i].add(&scaled);
                d_x_tgt[j] = d_x_tgt[j].sub(&scaled);
            }
            if weights.jd_alpha2 != 0.0 {
                let mut g = softmax(&tgt[j].0);
                g[y] -= 1.0;
                for (acc, v) in d_logits_tgt[j].iter_mut().zip(&g) {
                    *acc += w * weights.jd_alpha2 * v;
                }
            }
        }
    }
    total += transport;

    let mut grads = ParamGrads::zeros(model);
    for (i, (_, cache)) in src.iter().enumerate() {
        model.backward_sample(cache, &d_logits_src[i], Some(&d_x_src[i]), &mut grads);
    }
    for (j, (_, cache)) in tgt.iter().enumerate() {
        model.backward_sample(cache, &d_logits_tgt[j], Some(&d_x_tgt[j]), &mut grads);
    }

    Ok(BatchEval { ce, mda: 0.0, cda: 0.0, total, grads })
}

/// Solves the batch plan on squared log-Euclidean costs between embeddings.
pub fn solve_batch_plan(model: &DotModel, batch: &TrainBatch) -> Result<TransportPlan, TrainError> {
    let mut cost = Mat::zeros(batch.source.len(), batch.target.len());
    let src_logs: Vec<SymMatrix> = batch
        .source
        .iter()
        .map(|(s, _)| model.forward(s).map(|(_, c)| c.log_feature).map_err(TrainError::Net))
        .collect::<Result<_, _>>()?;
    let tgt_logs: Vec<SymMatrix> = batch
        .target
        .iter()
        .map(|(s, _)| model.forward(s).map(|(_, c)| c.log_feature).map_err(TrainError::Net))
        .collect::<Result<_, _>>()?;
    for (i, a) in src_logs.iter().enumerate() {
        for (j, b) in tgt_logs.iter().enumerate() {
            let d = a.sub(b).frobenius_norm();
            cost[(i, j)] = d * d;
        }
    }
    let mu = DiscreteMeasure::uniform(batch.source.len());
    let nu = DiscreteMeasure::uniform(batch.target.len());
    solve_emd(&mu, &nu, &CostMatrix::new(cost).map_err(TrainError::Transport)?)
        .map_err(TrainError::Transport)
}

/// Applies a gradient step under the chosen Bi-Map parameterization.
fn apply_step(
    model: &DotModel,
    grads: &ParamGrads,
    lr: f64,
    param: BiMapParam,
) -> Result<DotModel, TrainError> {
    if !grads.is_finite() {
        return Err(TrainError::Net(crate::error::NetError::NonFiniteGradient));
    }
    let w = match param {
        BiMapParam::Stiefel => stiefel_update(model.bimap.w(), &grads.d_w, lr).map_err(TrainError::Net)?,
        BiMapParam::Free => {
            let mut w = model.bimap.w().clone();
            w.add_in_place(&grads.d_w, -lr);
            w
        }
    };
    let mut head_w = model.head.weight().clone();
    head_w.add_in_place(&grads.d_head_weight, -lr);
    let head_b: Vec<f64> = model
        .head
        .bias()
        .iter()
        .zip(&grads.d_head_bias)
        .map(|(b, g)| b - lr * g)
        .collect();
    // The free parameterization intentionally skips the rank re-validation:
    // the rectification floor keeps embeddings well defined even when the
    // weight approaches rank deficiency.
    let bimap = match param {
        BiMapParam::Stiefel => crate::net::BiMapLayer::new(w).map_err(TrainError::Net)?,
        BiMapParam::Free => crate::net::BiMapLayer::new_unchecked(w),
    };
    DotModel::new(
        bimap,
        model.reeig.clone(),
        ClassifierHead::new(head_w, head_b).map_err(TrainError::Net)?,
    )
    .map_err(TrainError::Net)
}

/// One alternating update: solve the plan for the current embeddings, then
/// take a single gradient step on the joint objective with the plan fixed.
pub fn deepjdot_step(
    model: &DotModel,
    batch: &TrainBatch,
    weights: &LossWeights,
    lr: f64,
    param: BiMapParam,
) -> Result<(DotModel, TransportPlan), TrainError> {
    let plan = solve_batch_plan(model, batch)?;
    if lr == 0.0 {
        return Ok((model.clone(), plan));
    }
    let eval = eval_deepjdot_objective(model, batch, &plan, weights)?;
    let next = apply_step(model, &eval.grads, lr, param)?;
    Ok((next, plan))
}

/// Effective per-mode weights: modes that exclude a term zero it out.
fn effective_weights(mode: TrainMode, weights: &LossWeights) -> LossWeights {
    let mut w = *weights;
    match mode {
        TrainMode::Mda => w.alpha3 = 0.0,
        TrainMode::Cda => w.alpha2 = 0.0,
        TrainMode::MdaCda | TrainMode::DeepJdot => {}
    }
    w
}

/// Epoch-loop training. Target labels, when provided, are used only to report
/// accuracy. With a fixed seed the run is bit-reproducible.
pub fn train(
    model: &DotModel,
    source: &[(SpdMatrix, usize)],
    target: &[SpdMatrix],
    target_labels: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<(DotModel, TrainHistory), TrainError> {
    config.validate()?;
    if source.is_empty() {
        return Err(TrainError::EmptyBatch("source"));
    }
    if let Some(labels) = target_labels {
        if labels.len() != target.len() {
            return Err(TrainError::LengthMismatch {
                what: "target labels",
                expected: target.len(),
                found: labels.len(),
            });
        }
    }
    let weights = effective_weights(config.mode, &config.weights);
    let needs_target = config.mode == TrainMode::DeepJdot || weights.alpha2 != 0.0 || weights.alpha3 != 0.0;
    if needs_target && target.is_empty() {
        return Err(TrainError::EmptyBatch("target"));
    }

    let mut current = model.clone();
    let mut history = TrainHistory::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pseudo: Vec<usize> = Vec::new();

    let target_eval: Option<Vec<(SpdMatrix, usize)>> = target_labels.map(|labels| {
        target.iter().cloned().zip(labels.iter().copied()).collect()
    });

    for epoch in 0..config.epochs {
        if config.mode.uses_cda() && epoch % config.refresh_period == 0 {
            let labeler = match config.pseudo_labels {
                PseudoLabelSource::Mdm => {
                    PseudoLabeler::Mdm(mdm_fit(source, current.classes(), Metric::LogEuclidean)?)
                }
                PseudoLabelSource::Network => PseudoLabeler::Network(current.clone()),
            };
            pseudo = refresh_pseudo_labels(&labeler, target)?;
        }

        let mut src_order: Vec<usize> = (0..source.len()).collect();
        src_order.shuffle(&mut rng);
        let mut tgt_order: Vec<usize> = (0..target.len()).collect();
        tgt_order.shuffle(&mut rng);

        let src_chunks: Vec<&[usize]> = src_order.chunks(config.batch_size).collect();
        let tgt_chunks: Vec<&[usize]> = if target.is_empty() {
            Vec::new()
        } else {
            tgt_order.chunks(config.batch_size).collect()
        };
        let steps = if needs_target {
            src_chunks.len().min(tgt_chunks.len())
        } else {
            src_chunks.len()
        };

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for step in 0..steps {
            // Paired batches of equal size, truncating the longer chunk.
            let (src_batch, tgt_batch): (Vec<(SpdMatrix, usize)>, Vec<usize>) = if needs_target {
                let len = src_chunks[step].len().min(tgt_chunks[step].len());
                (
                    src_chunks[step][..len].iter().map(|&i| source[i].clone()).collect(),
                    tgt_chunks[step][..len].to_vec(),
                )
            } else {
                (src_chunks[step].iter().map(|&i| source[i].clone()).collect(), Vec::new())
            };
            let tgt_mats: Vec<SpdMatrix> = tgt_batch.iter().map(|&j| target[j].clone()).collect();

            let eval = match config.mode {
                TrainMode::DeepJdot => {
                    let batch = TrainBatch::new(
                        src_batch,
                        tgt_mats.iter().cloned().map(|s| (s, None)).collect(),
                    )?;
                    let plan = solve_batch_plan(&current, &batch)?;
                    eval_deepjdot_objective(&current, &batch, &plan, &weights)?
                }
                _ => {
                    let batch_pseudo: Vec<usize> =
                        tgt_batch.iter().map(|&j| pseudo.get(j).copied().unwrap_or(0)).collect();
                    eval_dot_objective(&current, &src_batch, &tgt_mats, &batch_pseudo, &weights)?
                }
            };
            if !eval.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step,
                    ce: eval.ce,
                    mda: eval.mda,
                    cda: eval.cda,
                });
            }
            current = apply_step(&current, &eval.grads, config.lr, config.bimap_param)?;
            sums.0 += eval.ce;
            sums.1 += eval.mda;
            sums.2 += eval.cda;
            sums.3 += eval.total;
        }

        let denom = steps.max(1) as f64;
        let source_acc = accuracy(&current, source).map_err(TrainError::Net)?;
        let target_acc = match &target_eval {
            Some(pairs) => Some(accuracy(&current, pairs).map_err(TrainError::Net)?),
            None => None,
        };
        history.epochs.push(EpochStats {
            epoch,
            ce: sums.0 / denom,
            mda: sums.1 / denom,
            cda: sums.2 / denom,
            total: sums.3 / denom,
            source_acc,
            target_acc,
        });
    }

    Ok((current, history))
}

/// Argmax prediction from logits, exposed for pipelines that cache forwards.
pub fn predict_from_logits(logits: &[f64]) -> usize {
    argmax(logits)
}
