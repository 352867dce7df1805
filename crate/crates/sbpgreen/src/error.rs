use thiserror::Error;

/// Which determinant of the 4x4 coupling matrix vanished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SingularCondition {
    /// The boundary-condition block is singular (e.g. Neumann on both sides).
    Bc,
    /// The penalty block is singular (penalties on the singular locus).
    Penalty,
}

impl std::fmt::Display for SingularCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SingularCondition::Bc => write!(f, "BC"),
            SingularCondition::Penalty => write!(f, "penalty"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small for {variant}: n = {n}, need n >= {min}")]
    GridTooSmall {
        variant: &'static str,
        n: usize,
        min: usize,
    },

    #[error("matrix is singular (pivot {pivot:.3e} below threshold {threshold:.3e})")]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },

    #[error("penalty sigma_L = 0 makes the first-derivative system singular")]
    SingularPenalty,

    #[error("the trailing block of Q is singular")]
    SingularQbar,

    #[error("the interior block of A is singular")]
    SingularAbar,

    #[error("coupling matrix is singular via the {condition} condition")]
    SingularSigma { condition: SingularCondition },

    #[error("closed form requires an even number of intervals, got n = {n}")]
    OddN { n: usize },

    #[error("sequence division {num}/{den} left a nonzero remainder")]
    NonIntegerSequence { num: String, den: String },

    #[error("operation only defined for wide-stencil operators")]
    NotWideStencil,

    #[error("boundary closures are not equivalent (xi_L != xi_R); total capacity undefined")]
    NotCentrosymmetric,

    #[error("degenerate boundary condition: beta*xi_T + alpha = 0")]
    DegenerateBc,

    #[error("steady system is singular")]
    SingularSystem,

    #[error("energy grew by a factor {ratio:.3e} at step {step}; dt too large or unstable penalty")]
    UnstableStep { step: usize, ratio: f64 },

    #[error("invalid coefficient file: {0}")]
    InvalidCoefficients(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
