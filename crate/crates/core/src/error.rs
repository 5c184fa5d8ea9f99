use thiserror::Error;

/// Which block of a 2x2 block factorization broke down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorBlock {
    Whole,
    Leading,
    Schur,
}

impl std::fmt::Display for FactorBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FactorBlock::Whole => write!(f, "matrix"),
            FactorBlock::Leading => write!(f, "leading block"),
            FactorBlock::Schur => write!(f, "Schur complement"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CpiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {deviation:e} exceeds tolerance")]
    NotSymmetric { row: usize, col: usize, deviation: f64 },

    #[error("{block} is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { block: FactorBlock, pivot: usize, value: f64 },

    #[error("basis is rank deficient: reduced Gram matrix failed Cholesky")]
    RankDeficientBasis,

    #[error("factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("eigensolver did not converge: {converged} of {requested} pairs after {restarts} restarts")]
    ConvergenceFailure { converged: usize, requested: usize, restarts: usize },

    #[error("shift {shift} coincides with an eigenvalue")]
    SingularShift { shift: f64 },

    #[error("interpolation points collide with exterior eigenvalues: {pairs:?}")]
    NearSingularShift { pairs: Vec<(f64, f64)> },

    #[error("spectral projector incomplete: inertia reports {expected} eigenvalues, {found} supplied")]
    IncompleteSpectrum { expected: usize, found: usize },

    #[error("coupling blocks are identically zero")]
    EmptyCoupling,

    #[error("every singular value was truncated (largest = {largest:e}, threshold rule rejected it)")]
    AllTruncated { largest: f64, spectrum: Vec<f64> },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("unsupported spatial dimension {0}")]
    UnsupportedDimension(usize),

    #[error("no root of the parameter equations in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("no solution in [{lo}, {hi}]")]
    OutOfRange { lo: f64, hi: f64 },

    #[error("no positive element in spectrum")]
    NoPositiveElement,

    #[error("interpolation point {xi} coincides with pole {mu}")]
    PoleCollision { xi: f64, mu: f64 },

    #[error("interface does not split the domain")]
    DegenerateInterface,

    #[error("no degrees of freedom remain after boundary elimination")]
    EmptyProblem,

    #[error("perturbation touches exterior element {0}")]
    PerturbationTouchesExterior(usize),

    #[error("basis does not match the exterior blocks of this pencil: {0}")]
    BasisMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CpiError {
    /// Usage and parse problems map to 1, numerical failures to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            CpiError::Parse(_) | CpiError::Io(_) | CpiError::Csv(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CpiError>;
