use thiserror::Error;

/// Errors raised by the attention operator, the pipeline and the oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StcaError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("frame {frame_id} holds {found} proposals, expected {expected}")]
    CountMismatch {
        frame_id: i64,
        expected: usize,
        found: usize,
    },
    #[error("proposal {index} of frame {frame_id} has non-positive extent (w={w}, h={h})")]
    NonPositiveExtent {
        frame_id: i64,
        index: usize,
        w: f64,
        h: f64,
    },
    #[error("proposal {index} of frame {frame_id}: objectness {value} outside [0, 1]")]
    ObjectnessOutOfRange { frame_id: i64, index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("proposal {index} carries frame id {found}, owning frame is {expected}")]
    FrameIdMismatch { index: usize, expected: i64, found: i64 },
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: String,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("sequence is empty")]
    EmptySequence,
    #[error("inference window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("forward cache does not match: {0}")]
    CacheMismatch(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("buffer discipline violated: {0}")]
    BufferDiscipline(String),
}

pub type Result<T> = std::result::Result<T, StcaError>;

pub(crate) fn check_shape(context: &str, lhs: (usize, usize), rhs: (usize, usize)) -> Result<()> {
    if lhs == rhs {
        Ok(())
    } else {
        Err(StcaError::ShapeMismatch {
            context: context.to_string(),
            lhs,
            rhs,
        })
    }
}
