//! Training triplets and the grouping of proposals into aggregation units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, StcaError};
use crate::model::{FrameProposals, ProposalBlock, StcaConfig};

/// Two key frames and one supporting frame drawn from one video.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriplet {
    pub key_a: FrameProposals,
    pub support: FrameProposals,
    pub key_b: FrameProposals,
    /// Sequence indices of `(key_a, support, key_b)`.
    pub indices: [usize; 3],
}

impl TrainingTriplet {
    /// Labels of the key frames in target order (`key_a` then `key_b`).
    pub fn key_labels(&self) -> Result<Vec<usize>> {
        let a = self.key_a.labels();
        let b = self.key_b.labels();
        match (a, b) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Ok(a)
            }
            _ => Err(StcaError::LabelMismatch(format!(
                "key frames {} and {} are not fully labeled",
                self.key_a.frame_id, self.key_b.frame_id
            ))),
        }
    }
}

/// Draws a triplet with the first key frame uniform over the sequence and
/// the supporting frame and second key frame at uniform offsets in
/// `[-tau, tau]`, clipped to the sequence.
pub fn sample_triplet_with<R: Rng + ?Sized>(
    sequence: &[FrameProposals],
    rng: &mut R,
    config: &StcaConfig,
) -> Result<TrainingTriplet> {
    if sequence.is_empty() {
        return Err(StcaError::EmptySequence);
    }
    let last = sequence.len() as i64 - 1;
    let tau = config.tau as i64;
    let first = rng.random_range(0..sequence.len());
    let mut near = || (first as i64 + rng.random_range(-tau..=tau)).clamp(0, last) as usize;
    let support = near();
    let second = near();
    Ok(TrainingTriplet {
        key_a: sequence[first].clone(),
        support: sequence[support].clone(),
        key_b: sequence[second].clone(),
        indices: [first, support, second],
    })
}

pub fn sample_triplet(sequence: &[FrameProposals], rng_seed: u64, config: &StcaConfig) -> Result<TrainingTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_triplet_with(sequence, &mut rng, config)
}

/// One aggregation unit's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub targets: ProposalBlock,
    pub candidates: ProposalBlock,
}

/// First-stage units: each key frame attends over itself plus the supporting frame.
pub fn stage1_groups(triplet: &TrainingTriplet) -> Result<[Group; 2]> {
    let a = ProposalBlock::from_frame(&triplet.key_a)?;
    let s = ProposalBlock::from_frame(&triplet.support)?;
    let b = ProposalBlock::from_frame(&triplet.key_b)?;
    Ok([
        Group {
            candidates: ProposalBlock::concat(&[&a, &s])?,
            targets: a,
        },
        Group {
            candidates: ProposalBlock::concat(&[&b, &s])?,
            targets: b,
        },
    ])
}

/// Second-stage unit: the enhanced proposals of both key frames attend over each other.
pub fn stage2_group(enhanced_a: &ProposalBlock, enhanced_b: &ProposalBlock) -> Result<Group> {
    let mixed = ProposalBlock::concat(&[enhanced_a, enhanced_b])?;
    Ok(Group {
        targets: mixed.clone(),
        candidates: mixed,
    })
}
