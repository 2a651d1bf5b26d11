use alloc::string::String;
use core::fmt;

pub type Result<T, E = UnmixError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum UnmixError {
    InvalidInput(String),
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFiniteData(&'static str),
    SingularNormalEquations,
    /// The x-update minimizer produced a non-finite value.
    InnerSolverFailure,
    NonFiniteIterate,
    TuningFailed {
        attempts: usize,
    },
    GenerationFailed(String),
    UndefinedMetric(&'static str),
    ZeroNormSpectrum {
        pixel: usize,
    },
}

impl fmt::Display for UnmixError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Self::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch for {what}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Self::NonFiniteData(what) => write!(f, "{what} contains non-finite values"),
            Self::SingularNormalEquations => {
                f.write_str("endmember matrix is rank deficient; normal equations are singular")
            }
            Self::InnerSolverFailure => f.write_str("x-update produced non-finite values"),
            Self::NonFiniteIterate => f.write_str("iterate left the finite range"),
            Self::TuningFailed { attempts } => {
                write!(f, "bandwidth tuning did not converge after {attempts} attempts")
            }
            Self::GenerationFailed(msg) => write!(f, "generation failed: {msg}"),
            Self::UndefinedMetric(msg) => write!(f, "metric undefined: {msg}"),
            Self::ZeroNormSpectrum { pixel } => {
                write!(f, "spectrum of pixel {pixel} has zero norm")
            }
        }
    }
}

impl core::error::Error for UnmixError {}
