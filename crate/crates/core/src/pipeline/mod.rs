//! Two-stage aggregation topology, training and sliding-window inference.

pub mod head;
pub mod infer;
pub mod sampler;
pub mod train;

pub use head::{head_backward, head_forward, posteriors, softmax_cross_entropy, HeadParams};
pub use infer::{
    infer_key_frame, infer_window, pad_boundary, AttentionLink, Detection, FeatureBuffer, Generation, InferenceStats,
    SlidingWindow,
};
pub use sampler::{sample_triplet, sample_triplet_with, stage1_groups, stage2_group, Group, TrainingTriplet};
pub use train::{
    enhance_triplet, network_loss, network_loss_and_grads, train, train_step, Aggregation, Network, NetworkGrads,
    SgdMomentum, TrainerConfig,
};
