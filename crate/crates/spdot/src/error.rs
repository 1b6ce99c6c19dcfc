//! Error types, one enum per subsystem.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not symmetric: relative deviation {deviation:.3e}")]
    NotSymmetric { deviation: f64 },
    #[error("matrix is not positive definite: eigenvalue {eigenvalue:.6e}")]
    NotPositiveDefinite { eigenvalue: f64 },
    #[error("eigensolver did not converge within the sweep cap; off-diagonal norm {norm:.3e}")]
    EigNonConvergence { norm: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("mean iteration did not converge after {iterations} iterations; residual {residual:.3e}")]
    MeanNonConvergence {
        iterations: usize,
        residual: f64,
        /// Entries of the last iterate, row-major.
        last_iterate: Vec<f64>,
    },
    #[error("could not parse number from {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("size mismatch: {what} has length {found}, expected {expected}")]
    SizeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("cost entry ({row},{col}) is negative or non-finite ({value})")]
    InvalidCost { row: usize, col: usize, value: f64 },
    #[error("marginals are infeasible: source mass {mu_sum} vs target mass {nu_sum}")]
    InfeasibleMarginals { mu_sum: f64, nu_sum: f64 },
    #[error("transport plan column {col} has zero mass")]
    ZeroColumnMass { col: usize },
    #[error("mapped target set is empty")]
    EmptyTargets,
    #[error("samples {first} and {second} coincide")]
    DegenerateSamples { first: usize, second: usize },
    #[error("band count mismatch: source {source_bands}, target {target_bands}")]
    BandCountMismatch { source_bands: usize, target_bands: usize },
    #[error("simplex stalled after {iterations} pivots")]
    SolverStalled { iterations: usize },
}

#[derive(Debug, Clone, Error)]
pub enum NetError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("transformation matrix is rank deficient: smallest singular value {sigma_min:.3e}")]
    RankDeficient { sigma_min: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("rectification threshold must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,
    #[error("class {label} has no samples")]
    EmptyClass { label: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("checkpoint i/o: {0}")]
    Io(String),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("target batch is missing pseudo-labels")]
    MissingPseudoLabels,
    #[error("length mismatch: {what} has length {found}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}, step {step} (ce={ce}, mda={mda}, cda={cda})")]
    NonFiniteLoss { epoch: usize, step: usize, ce: f64, mda: f64, cda: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl From<GeometryError> for TrainError {
    fn from(e: GeometryError) -> Self {
        TrainError::Net(NetError::Geometry(e))
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sample {index} invalid: {msg}")]
    InvalidSample { index: usize, msg: String },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("shift matrix is singular (smallest singular value {sigma_min:.3e})")]
    SingularShift { sigma_min: f64 },
    #[error("segment {segment} is empty")]
    EmptySegment { segment: usize },
}
