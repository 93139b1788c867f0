use thiserror::Error;

/// Errors produced by the simulation and fitting routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinemonError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid of {n_nodes} nodes is too coarse for the stencil (need at least {min_nodes})")]
    GridTooCoarse { n_nodes: usize, min_nodes: usize },

    #[error("potential is not finite at phi = {phi}")]
    NonFinitePotential { phi: f64 },

    #[error("requested {requested} eigenpairs from a {dim}x{dim} matrix")]
    TooManyLevels { requested: usize, dim: usize },

    #[error("eigensolver did not converge: {0}")]
    EigenNonConvergence(String),

    #[error(
        "level {level} leaks to the grid boundary (weight {weight:.3e} > {tolerance:.1e}) even at phi_max = {phi_max}"
    )]
    BoundaryLeak {
        level: usize,
        weight: f64,
        tolerance: f64,
        phi_max: f64,
    },

    #[error("need at least {needed} levels, got {got}")]
    NotEnoughLevels { needed: usize, got: usize },

    #[error("special points are undefined for kappa = 0.5")]
    SingularKappa,

    #[error("coupled dimension {dim} exceeds the bound {bound}")]
    DimensionTooLarge { dim: usize, bound: usize },

    #[error("Hermiticity defect {defect:.3e} exceeds {tolerance:.1e}")]
    NotHermitian { defect: f64, tolerance: f64 },

    #[error(
        "dressed-state label {label:?} is ambiguous: candidate frequencies {candidates:?} GHz"
    )]
    AmbiguousLabel {
        label: (usize, usize),
        candidates: [f64; 2],
    },

    #[error("Liouvillian null space is not one-dimensional (estimated dimension {dimension})")]
    DegenerateSteadyState { dimension: usize },

    #[error("steady-state residual {residual:.3e} exceeds {tolerance:.1e}")]
    SteadyStateResidual { residual: f64, tolerance: f64 },

    #[error("steady state violates {property}: {value:.3e}")]
    InvalidDensityMatrix { property: &'static str, value: f64 },

    #[error("optimizer did not converge after {evaluations} evaluations (best objective {best:.3e})")]
    FitNonConvergence { evaluations: usize, best: f64 },

    #[error("fit converged onto the bound of {parameter} ({value:.6})")]
    FitDegenerate { parameter: &'static str, value: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dataset line {line}: {reason}")]
    DatasetRow { line: u64, reason: String },

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, KinemonError>;

impl KinemonError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        KinemonError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
