use thiserror::Error;

/// Parse failures for binary PGM/PPM files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("unsupported magic number {0:?} (expected P5 or P6)")]
    UnsupportedMagic(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate corner set: {0}")]
    DegenerateCorners(String),
    #[error("singular linear system while solving for homography")]
    SingularSystem,
    #[error("point maps to infinity (homogeneous w = {0:e})")]
    PointAtInfinity(f64),
    #[error("non-finite loss in {stage} at step {step}")]
    NonFiniteLoss { stage: &'static str, step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("probe training data contains a single class")]
    SingleClass,
    #[error("viewpoint probe rejected: training accuracy {accuracy:.3} < 0.95")]
    ProbeRejected { accuracy: f64 },
    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
