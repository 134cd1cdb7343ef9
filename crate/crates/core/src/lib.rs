//! Proposal-level spatio-temporal context aggregation (STCA) for video
//! object detection: the attention operator with exact gradients, the
//! two-stage aggregation topology, training plumbing, and buffered
//! sliding-window inference.

pub mod attention;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod position;

pub use error::{Result, StcaError};
pub use linalg::Matrix;
pub use model::{
    validate_frame, AttentionVariant, BoundingBox, FrameProposals, Proposal, ProposalBlock, StcaConfig, StcaParams,
};
