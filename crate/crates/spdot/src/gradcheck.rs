//! Central finite-difference verification of every analytic gradient: the
//! three layers individually, the combined training objective, and the
//! joint-transport objective with a fixed plan.
//!
//! Finite differences only ever evaluate forward passes, so they are an
//! independent check on the backward implementations. Symmetric inputs are
//! perturbed along the symmetric basis directions `E_ii` and `E_ij + E_ji`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::TrainError;
use crate::mat::Mat;
use crate::net::{logeig_backward, BiMapLayer, ClassifierHead, DotModel, ReEigLayer};
use crate::spd::{SpdMatrix, SymMatrix};
use crate::train::{
    deepjdot_loss, eval_deepjdot_objective, eval_dot_objective, solve_batch_plan, LossWeights,
    TrainBatch,
};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error budget every check must meet.
pub const GRAD_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().fold(0.0, |m, c| m.max(c.rel_error))
    }

    pub fn pass(&self) -> bool {
        self.max_rel_error() <= GRAD_TOL
    }

    pub fn worst_case(&self) -> Option<&GradCheckCase> {
        self.cases
            .iter()
            .max_by(|a, b| a.rel_error.partial_cmp(&b.rel_error).unwrap())
    }

    fn push(&mut self, name: String, rel_error: f64) {
        self.cases.push(GradCheckCase { name, rel_error });
    }
}

pub fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal)).qr_thin()
}

pub fn spd_with_spectrum(eigenvalues: &[f64], rng: &mut impl Rng) -> SpdMatrix {
    let u = random_orthogonal(eigenvalues.len(), rng);
    let mat = {
        let mut m = Mat::zeros(eigenvalues.len(), eigenvalues.len());
        for (k, &l) in eigenvalues.iter().enumerate() {
            for i in 0..eigenvalues.len() {
                for j in 0..eigenvalues.len() {
                    m[(i, j)] += l * u[(i, k)] * u[(j, k)];
                }
            }
        }
        m.symmetrize()
    };
    SpdMatrix::new(mat).expect("positive spectrum")
}

pub fn random_spd(dim: usize, rng: &mut impl Rng) -> SpdMatrix {
    let eigenvalues: Vec<f64> = (0..dim).map(|_| 0.3 + 2.7 * rng.random::<f64>()).collect();
    spd_with_spectrum(&eigenvalues, rng)
}

/// A spectrum containing a pair separated by `gap`, for exercising the
/// divided-difference switch.
pub fn near_degenerate_spd(dim: usize, gap: f64, rng: &mut impl Rng) -> SpdMatrix {
    let mut eigenvalues: Vec<f64> = (0..dim).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();
    eigenvalues[1] = eigenvalues[0] + gap;
    spd_with_spectrum(&eigenvalues, rng)
}

pub fn random_sym(dim: usize, rng: &mut impl Rng) -> SymMatrix {
    SymMatrix::from_symmetric(
        Mat::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal)).symmetrize(),
    )
}

fn rel_error(analytic: &Mat, fd: &Mat) -> f64 {
    let denom = analytic.frobenius_norm().max(fd.frobenius_norm()).max(1e-8);
    analytic.sub(fd).frobenius_norm() / denom
}

fn rel_error_vec(analytic: &[f64], fd: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(fd)).max(1e-8)
}

/// Central finite-difference gradient of a scalar function of a symmetric
/// positive definite argument, along the symmetric basis directions.
pub fn fd_grad_spd(
    f: &mut dyn FnMut(&SpdMatrix) -> Result<f64, TrainError>,
    at: &SpdMatrix,
    h: f64,
) -> Result<Mat, TrainError> {
    let dim = at.dim();
    let mut grad = Mat::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let mut plus = at.mat().clone();
            let mut minus = at.mat().clone();
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            if i != j {
                plus[(j, i)] += h;
                minus[(j, i)] -= h;
            }
            let fp = f(&SpdMatrix::new(plus).map_err(TrainError::from)?)?;
            let fm = f(&SpdMatrix::new(minus).map_err(TrainError::from)?)?;
            let slope = (fp - fm) / (2.0 * h);
            if i == j {
                grad[(i, i)] = slope;
            } else {
                // The direction E_ij + E_ji has pairing 2·grad_ij.
                grad[(i, j)] = slope / 2.0;
                grad[(j, i)] = slope / 2.0;
            }
        }
    }
    Ok(grad)
}

fn fd_grad_mat(
    f: &mut dyn FnMut(&Mat) -> Result<f64, TrainError>,
    at: &Mat,
    h: f64,
) -> Result<Mat, TrainError> {
    let mut grad = Mat::zeros(at.rows(), at.cols());
    for i in 0..at.rows() {
        for j in 0..at.cols() {
            let mut plus = at.clone();
            let mut minus = at.clone();
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            grad[(i, j)] = (f(&plus)? - f(&minus)?) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Checks the three layers against finite differences at the given dimension,
/// with both generic and near-degenerate spectra.
pub fn check_layers(dim: usize, seed: u64, report: &mut GradCheckReport) -> Result<(), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upstream = random_sym(dim, &mut rng);

    let inputs = [
        ("generic", random_spd(dim, &mut rng)),
        ("gap1e-3", near_degenerate_spd(dim, 1e-3, &mut rng)),
        ("gap1e-7", near_degenerate_spd(dim, 1e-7, &mut rng)),
    ];

    for (tag, s) in &inputs {
        // LogEig input gradient.
        let analytic = logeig_backward(s.eig(), &upstream);
        let fd = fd_grad_spd(
            &mut |x: &SpdMatrix| Ok(upstream.mat().frobenius_inner(x.log().mat())),
            s,
            FD_STEP,
        )?;
        report.push(format!("logeig/{tag}/d{dim}/s{seed}"), rel_error(analytic.mat(), &fd));

        // ReEig input gradient with a floor high enough to be active for the
        // smallest eigenvalues yet far from every eigenvalue.
        let eps = (s.min_eigenvalue() + s.eigenvalues()[0]) / 7.0;
        let layer = ReEigLayer::new(eps).map_err(TrainError::Net)?;
        let analytic = layer.backward(s.eig(), &upstream);
        let fd = fd_grad_spd(
            &mut |x: &SpdMatrix| Ok(upstream.mat().frobenius_inner(layer.forward(x).mat())),
            s,
            FD_STEP,
        )?;
        report.push(format!("reeig/{tag}/d{dim}/s{seed}"), rel_error(analytic.mat(), &fd));

        // BiMap parameter and input gradients at a rectangular weight.
        let d_out = (dim / 2).max(1);
        let bimap = BiMapLayer::random_semi_orthogonal(d_out, dim, &mut rng).map_err(TrainError::Net)?;
        let upstream_out = random_sym(d_out, &mut rng);
        let (d_w, d_s) = bimap.backward(s, &upstream_out);
        let fd_w = fd_grad_mat(
            &mut |w: &Mat| Ok(upstream_out.mat().frobenius_inner(&w.congruence(s.mat()))),
            bimap.w(),
            FD_STEP,
        )?;
        report.push(format!("bimap-w/{tag}/d{dim}/s{seed}"), rel_error(&d_w, &fd_w));
        let fd_s = fd_grad_spd(
            &mut |x: &SpdMatrix| {
                Ok(upstream_out.mat().frobenius_inner(&bimap.w().congruence(x.mat())))
            },
            s,
            FD_STEP,
        )?;
        report.push(format!("bimap-s/{tag}/d{dim}/s{seed}"), rel_error(d_s.mat(), &fd_s));
    }
    Ok(())
}

fn with_params(model: &DotModel, w: Mat, head_w: Mat, head_b: Vec<f64>) -> Result<DotModel, TrainError> {
    DotModel::new(
        BiMapLayer::new(w).map_err(TrainError::Net)?,
        model.reeig.clone(),
        ClassifierHead::new(head_w, head_b).map_err(TrainError::Net)?,
    )
    .map_err(TrainError::Net)
}

fn fd_all_params(
    loss: &mut dyn FnMut(&DotModel) -> Result<f64, TrainError>,
    model: &DotModel,
    h: f64,
) -> Result<(Mat, Mat, Vec<f64>), TrainError> {
    let w0 = model.bimap.w().clone();
    let hw0 = model.head.weight().clone();
    let hb0 = model.head.bias().to_vec();

    let mut d_w = Mat::zeros(w0.rows(), w0.cols());
    for i in 0..w0.rows() {
        for j in 0..w0.cols() {
            let mut plus = w0.clone();
            let mut minus = w0.clone();
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            let fp = loss(&with_params(model, plus, hw0.clone(), hb0.clone())?)?;
            let fm = loss(&with_params(model, minus, hw0.clone(), hb0.clone())?)?;
            d_w[(i, j)] = (fp - fm) / (2.0 * h);
        }
    }
    let mut d_hw = Mat::zeros(hw0.rows(), hw0.cols());
    for i in 0..hw0.rows() {
        for j in 0..hw0.cols() {
            let mut plus = hw0.clone();
            let mut minus = hw0.clone();
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            let fp = loss(&with_params(model, w0.clone(), plus, hb0.clone())?)?;
            let fm = loss(&with_params(model, w0.clone(), minus, hb0.clone())?)?;
            d_hw[(i, j)] = (fp - fm) / (2.0 * h);
        }
    }
    let mut d_hb = vec![0.0; hb0.len()];
    for (i, slot) in d_hb.iter_mut().enumerate() {
        let mut plus = hb0.clone();
        let mut minus = hb0.clone();
        plus[i] += h;
        minus[i] -= h;
        let fp = loss(&with_params(model, w0.clone(), hw0.clone(), plus)?)?;
        let fm = loss(&with_params(model, w0.clone(), hw0.clone(), minus)?)?;
        *slot = (fp - fm) / (2.0 * h);
    }
    Ok((d_w, d_hw, d_hb))
}

fn random_model(dim: usize, classes: usize, rng: &mut impl Rng) -> Result<DotModel, TrainError> {
    let bimap = BiMapLayer::random_semi_orthogonal(dim, dim, rng).map_err(TrainError::Net)?;
    let features = crate::spd::sym_coord_len(dim);
    let head_w = Mat::from_fn(classes, features, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
    let head_b: Vec<f64> = (0..classes).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    // A floor low enough to stay inactive for the sampled spectra, so the
    // objective is smooth in a finite-difference neighborhood.
    with_params(
        &DotModel::new(
            bimap.clone(),
            ReEigLayer::new(1e-4).map_err(TrainError::Net)?,
            ClassifierHead::zeros(classes, features),
        )
        .map_err(TrainError::Net)?,
        bimap.w().clone(),
        head_w,
        head_b,
    )
}

/// Checks the combined objective end to end at the given dimension.
pub fn check_dot_objective(
    dim: usize,
    seed: u64,
    report: &mut GradCheckReport,
) -> Result<(), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd07_0b1e);
    let classes = 2 + (seed as usize % 2);
    let model = random_model(dim, classes, &mut rng)?;
    let n = 3;
    let source: Vec<(SpdMatrix, usize)> =
        (0..n).map(|i| (random_spd(dim, &mut rng), i % classes)).collect();
    let target: Vec<SpdMatrix> = (0..n).map(|_| random_spd(dim, &mut rng)).collect();
    let pseudo: Vec<usize> = (0..n).map(|j| (j + 1) % classes).collect();
    let weights = LossWeights { alpha1: 0.8, alpha2: 1.2, alpha3: 0.7, ..Default::default() };

    let eval = eval_dot_objective(&model, &source, &target, &pseudo, &weights)?;
    let (fd_w, fd_hw, fd_hb) = fd_all_params(
        &mut |m: &DotModel| Ok(eval_dot_objective(m, &source, &target, &pseudo, &weights)?.total),
        &model,
        FD_STEP,
    )?;
    report.push(format!("dot-objective-w/d{dim}/s{seed}"), rel_error(&eval.grads.d_w, &fd_w));
    report.push(
        format!("dot-objective-head/d{dim}/s{seed}"),
        rel_error(&eval.grads.d_head_weight, &fd_hw),
    );
    report.push(
        format!("dot-objective-bias/d{dim}/s{seed}"),
        rel_error_vec(&eval.grads.d_head_bias, &fd_hb),
    );
    Ok(())
}

/// Checks the joint-transport objective with the plan held fixed.
pub fn check_deepjdot_objective(
    dim: usize,
    seed: u64,
    report: &mut GradCheckReport,
) -> Result<(), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d07);
    let classes = 2;
    let model = random_model(dim, classes, &mut rng)?;
    let batch = TrainBatch::new(
        (0..3).map(|i| (random_spd(dim, &mut rng), i % classes)).collect(),
        (0..3).map(|_| (random_spd(dim, &mut rng), None)).collect(),
    )?;
    let weights = LossWeights { jd_alpha1: 0.9, jd_alpha2: 0.6, ..Default::default() };
    let plan = solve_batch_plan(&model, &batch)?;

    let eval = eval_deepjdot_objective(&model, &batch, &plan, &weights)?;
    let consistency = (eval.total - deepjdot_loss(&model, &batch, &plan, &weights)?).abs();
    report.push(format!("deepjdot-value/d{dim}/s{seed}"), consistency);

    let (fd_w, fd_hw, fd_hb) = fd_all_params(
        &mut |m: &DotModel| deepjdot_loss(m, &batch, &plan, &weights),
        &model,
        FD_STEP,
    )?;
    report.push(format!("deepjdot-w/d{dim}/s{seed}"), rel_error(&eval.grads.d_w, &fd_w));
    report.push(
        format!("deepjdot-head/d{dim}/s{seed}"),
        rel_error(&eval.grads.d_head_weight, &fd_hw),
    );
    report.push(
        format!("deepjdot-bias/d{dim}/s{seed}"),
        rel_error_vec(&eval.grads.d_head_bias, &fd_hb),
    );
    Ok(())
}

/// The full suite: layer and objective checks over `num_seeds` seeds, cycling
/// dimensions 3 through 8.
pub fn run_full_suite(num_seeds: usize) -> Result<GradCheckReport, TrainError> {
    let mut report = GradCheckReport::default();
    for s in 0..num_seeds {
        let dim = 3 + (s % 6);
        let seed = 1000 + s as u64;
        check_layers(dim, seed, &mut report)?;
        check_dot_objective(dim, seed, &mut report)?;
        check_deepjdot_objective(dim, seed, &mut report)?;
    }
    Ok(report)
}
