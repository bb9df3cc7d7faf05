use thiserror::Error;

/// Errors produced by simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero lattice vector")]
    ZeroVector,

    #[error("bath shell yielded {got} of {requested} requested spins")]
    ShellTooSmall { requested: usize, got: usize },

    #[error("coupling tensor is not Hermitian (max asymmetry {0:.3e} Hz)")]
    NonHermitianTensor(f64),

    #[error("pair has neither dipolar coupling nor hyperfine gradient")]
    DegeneratePair,

    #[error("post-selection branch has zero norm")]
    ZeroNormBranch,

    #[error("frequency ordering violated: omega_1 = {omega1} Hz < omega_0 = {omega0} Hz")]
    FrequencyOrdering { omega0: f64, omega1: f64 },

    #[error("trace is constant; no frequency content")]
    ConstantTrace,

    #[error("no pulse-number candidate yields a delay on the 1 ns grid")]
    NoViableCandidate,

    #[error("fit setup: {0}")]
    FitSetup(String),
}

pub type Result<T> = std::result::Result<T, Error>;
