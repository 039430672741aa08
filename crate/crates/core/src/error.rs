//! Error types shared across the crate.

use thiserror::Error;

/// Rejected market parameters or malformed model inputs.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum ParamError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("correlation matrix is not positive definite: leading minor of order {order} is not positive")]
    NotPositiveDefinite { order: usize },
    #[error("correlation matrix must have unit diagonal (entry {index} is {value})")]
    NonUnitDiagonal { index: usize, value: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("{what} must be strictly positive (entry {index} is {value})")]
    NotPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{what} must be non-negative (entry {index} is {value})")]
    Negative {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{what} is not finite")]
    NotFinite { what: &'static str },
    #[error("time grid must have at least one step")]
    EmptyGrid,
    #[error("class weights must sum to 1 (got {sum})")]
    WeightsNotNormalized { sum: f64 },
}

/// Failures of the equilibrium solvers.
#[derive(Error, Debug, Clone)]
pub enum SolverError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("Riccati path escaped its a-priori bound at t = {t} (|H| = {norm:.3e}, bound {bound:.3e})")]
    RiccatiBlowUp { t: f64, norm: f64, bound: f64 },
    #[error("Riccati integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("boundary value system is singular at block {block}")]
    SingularSystem { block: usize },
    #[error(
        "mean field iteration diverged (|A| = {alpha_norm:.3e}); residuals: {residuals:?}"
    )]
    Divergence {
        alpha_norm: f64,
        residuals: Vec<f64>,
    },
    #[error("mean field iteration did not converge within {max_iter} iterations (last residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },
    #[error("grid mismatch: {what}")]
    GridMismatch { what: &'static str },
}

/// Failures of the panel estimators.
#[derive(Error, Debug, Clone)]
pub enum EstimatorError {
    #[error("need at least {needed} days, panel has {got}")]
    TooFewDays { needed: usize, got: usize },
    #[error("need at least {needed} bins, got {got}")]
    TooFewBins { needed: usize, got: usize },
    #[error("panel carries no net-flow data")]
    MissingFlows,
    #[error("bin grid is not uniform (bin {bin} has length {got:.6e}, expected {expected:.6e})")]
    NonUniformBins { bin: usize, got: f64, expected: f64 },
    #[error("regressor has zero variance; slope is undefined")]
    ZeroVarianceRegressor,
    #[error("asset {asset} never trades (zero mean absolute flow)")]
    ZeroFlowAsset { asset: usize },
    #[error("solver grid ({n_steps} steps) does not refine the bin grid ({n_bins} bins)")]
    GridNotNested { n_steps: usize, n_bins: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Failures of the calibration pipeline.
#[derive(Error, Debug, Clone)]
pub enum CalibrationError {
    #[error("infeasible bounds: {what} has lower bound {lo} >= upper bound {hi}")]
    InfeasibleBounds { what: &'static str, lo: f64, hi: f64 },
    #[error("observed curves are empty")]
    EmptyCurves,
    #[error("fractions must lie in (0, 1): {what} = {value}")]
    BadFraction { what: &'static str, value: f64 },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// Failures while building, reading or writing market panels.
#[derive(Error, Debug)]
pub enum PanelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate record for day {day}, bin {bin}, asset {asset} (line {line})")]
    Duplicate {
        day: usize,
        bin: usize,
        asset: usize,
        line: usize,
    },
    #[error("missing record for day {day}, bin {bin}, asset {asset}")]
    MissingCell { day: usize, bin: usize, asset: usize },
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("panel shape is invalid: {0}")]
    Shape(String),
}
