use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failures raised by the augmentation primitives.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Fewer road pixels than required to estimate a perspective model.
    NoRoad { road_pixels: usize, required: usize },
    /// Pitch binning requested more bins than there are estimates.
    TooFewImages { have: usize, bins: usize },
    /// The bank has no instance that can satisfy the draw.
    EmptyBank,
    /// Content-aware placement on a mask without road pixels.
    EmptyRoadMask,
    DegenerateQuad,
    /// Perspective scale ratio outside the configured bounds.
    ScaleOutOfRange { ratio: f64 },
    SingularSystem,
    /// The clipped paste region contains no pixel.
    NothingOnRoad,
    EmptyRegion,
    SolverDiverged { residual: f64, iterations: usize },
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    InvalidConfig { key: &'static str, reason: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NoRoad { road_pixels, required } => {
                write!(f, "road mask has {road_pixels} road pixels, need at least {required}")
            }
            Error::TooFewImages { have, bins } => {
                write!(f, "cannot build {bins} pitch bins from {have} estimates")
            }
            Error::EmptyBank => f.write_str("damage bank has no eligible instance"),
            Error::EmptyRoadMask => f.write_str("road mask is empty"),
            Error::DegenerateQuad => f.write_str("target quadrilateral is degenerate"),
            Error::ScaleOutOfRange { ratio } => write!(f, "scale ratio {ratio} out of range"),
            Error::SingularSystem => f.write_str("homography system is singular"),
            Error::NothingOnRoad => f.write_str("pasted region does not overlap the road"),
            Error::EmptyRegion => f.write_str("blend region is empty"),
            Error::SolverDiverged { residual, iterations } => write!(
                f,
                "conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})"
            ),
            Error::DimensionMismatch { expected, found } => write!(
                f,
                "dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::InvalidConfig { key, reason } => write!(f, "invalid value for `{key}`: {reason}"),
        }
    }
}

impl core::error::Error for Error {}
