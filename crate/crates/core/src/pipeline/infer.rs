//! Buffered sliding-window inference.
//!
//! For key frame `c` and window `T = 2K + 1`:
//!
//! 1. raw features are buffered for positions `c−2K ..= c+2K`;
//! 2. each position `k` in `c−K ..= c+K` is enhanced with stage-1 parameters
//!    against the raw features of `k−K ..= k+K` and written to a second buffer;
//! 3. position `c` is enhanced again with stage-2 parameters against the
//!    enhanced features of `c−K ..= c+K`, and the head is applied.
//!
//! Positions outside the video are padded with the boundary frame, whose
//! frame id is kept. Buffers are keyed by window position, so a padded
//! position's enhanced entry is distinct from the boundary frame's own.
//! Advancing the key frame reuses every entry still inside the window.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::head::{head_forward, posteriors};
use super::train::{Aggregation, Network};
use crate::attention::{stca_enhance, stca_forward};
use crate::error::{Result, StcaError};
use crate::exec;
use crate::linalg::Matrix;
use crate::model::{FrameProposals, ProposalBlock, StcaConfig};

/// Which stage produced a buffered feature block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generation {
    Raw,
    Enhanced,
}

#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub generation: Generation,
    pub block: Arc<ProposalBlock>,
}

/// Per-position feature store for both generations.
#[derive(Debug, Default, Clone)]
pub struct FeatureBuffer {
    raw: BTreeMap<i64, BufferEntry>,
    enhanced: BTreeMap<i64, BufferEntry>,
    raw_ever: std::collections::BTreeSet<i64>,
}

impl FeatureBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_raw(&mut self, pos: i64, block: ProposalBlock) {
        self.raw_ever.insert(pos);
        self.raw.insert(
            pos,
            BufferEntry {
                generation: Generation::Raw,
                block: Arc::new(block),
            },
        );
    }

    /// Stores an enhanced block; its raw counterpart must have been buffered.
    pub fn insert_enhanced(&mut self, pos: i64, block: ProposalBlock) -> Result<()> {
        if !self.raw_ever.contains(&pos) {
            return Err(StcaError::BufferDiscipline(format!(
                "enhanced entry for position {pos} without a raw entry"
            )));
        }
        self.enhanced.insert(
            pos,
            BufferEntry {
                generation: Generation::Enhanced,
                block: Arc::new(block),
            },
        );
        Ok(())
    }

    pub fn get(&self, pos: i64, generation: Generation) -> Option<&BufferEntry> {
        match generation {
            Generation::Raw => self.raw.get(&pos),
            Generation::Enhanced => self.enhanced.get(&pos),
        }
    }

    pub fn contains(&self, pos: i64, generation: Generation) -> bool {
        self.get(pos, generation).is_some()
    }

    /// Entries for `positions` of one generation, failing if any is missing
    /// or carries another tag.
    pub fn gather(&self, positions: impl Iterator<Item = i64>, generation: Generation) -> Result<Vec<&BufferEntry>> {
        positions
            .map(|p| {
                let entry = self.get(p, generation).ok_or_else(|| {
                    StcaError::BufferDiscipline(format!("{generation:?} entry for position {p} is missing"))
                })?;
                if entry.generation != generation {
                    return Err(StcaError::BufferDiscipline(format!(
                        "position {p} tagged {:?}, expected {generation:?}",
                        entry.generation
                    )));
                }
                Ok(entry)
            })
            .collect()
    }

    /// Drops raw entries below `raw_floor` and enhanced entries below `enhanced_floor`.
    pub fn evict_below(&mut self, raw_floor: i64, enhanced_floor: i64) {
        self.raw = self.raw.split_off(&raw_floor);
        self.enhanced = self.enhanced.split_off(&enhanced_floor);
    }

    pub fn len(&self, generation: Generation) -> usize {
        match generation {
            Generation::Raw => self.raw.len(),
            Generation::Enhanced => self.enhanced.len(),
        }
    }
}

/// Frames for every position in `range`, clamping out-of-video positions to
/// the boundary frame.
pub fn pad_boundary(sequence: &[FrameProposals], range: std::ops::RangeInclusive<i64>) -> Result<Vec<FrameProposals>> {
    if sequence.is_empty() {
        return Err(StcaError::EmptySequence);
    }
    Ok(range
        .map(|p| sequence[clamp_position(p, sequence.len())].clone())
        .collect())
}

fn clamp_position(pos: i64, len: usize) -> usize {
    pos.clamp(0, len as i64 - 1) as usize
}

/// One attention link of the last aggregation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLink {
    pub target: usize,
    pub candidate_frame: i64,
    pub candidate_index: usize,
    pub weight: f64,
}

/// Output for one key frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: i64,
    /// Sequence index of the key frame.
    pub position: usize,
    pub features: Matrix,
    pub logits: Matrix,
    pub posteriors: Matrix,
    /// Top-k links per target when requested.
    pub attention: Option<Vec<Vec<AttentionLink>>>,
}

impl Detection {
    pub fn labels(&self) -> Vec<usize> {
        (0..self.posteriors.rows())
            .map(|r| {
                let row = self.posteriors.row(r);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Counters describing buffer reuse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InferenceStats {
    pub raw_loaded: usize,
    pub stage2_computed: usize,
    pub stage3_computed: usize,
}

/// Stateful sliding-window inference over one video.
pub struct SlidingWindow<'a> {
    sequence: &'a [FrameProposals],
    net: &'a Network,
    config: &'a StcaConfig,
    buffer: FeatureBuffer,
    next_key: usize,
    attention_top_k: Option<usize>,
    stats: InferenceStats,
}

impl<'a> SlidingWindow<'a> {
    pub fn new(sequence: &'a [FrameProposals], net: &'a Network, config: &'a StcaConfig) -> Result<Self> {
        if sequence.is_empty() {
            return Err(StcaError::EmptySequence);
        }
        if config.window.is_multiple_of(2) {
            return Err(StcaError::EvenWindow(config.window));
        }
        net.validate(config)?;
        Ok(Self {
            sequence,
            net,
            config,
            buffer: FeatureBuffer::new(),
            next_key: 0,
            attention_top_k: None,
            stats: InferenceStats::default(),
        })
    }

    /// Records the `k` strongest stage-3 links per target.
    pub fn with_attention_dump(mut self, k: usize) -> Self {
        self.attention_top_k = Some(k);
        self
    }

    pub fn stats(&self) -> InferenceStats {
        self.stats
    }

    pub fn buffer(&self) -> &FeatureBuffer {
        &self.buffer
    }

    fn load_raw(&mut self, pos: i64) -> Result<()> {
        if !self.buffer.contains(pos, Generation::Raw) {
            let frame = &self.sequence[clamp_position(pos, self.sequence.len())];
            self.buffer.insert_raw(pos, ProposalBlock::from_frame(frame)?);
            self.stats.raw_loaded += 1;
        }
        Ok(())
    }

    fn stage2(&self, pos: i64) -> Result<ProposalBlock> {
        let k = self.config.half_window() as i64;
        let target = self.buffer.gather(std::iter::once(pos), Generation::Raw)?;
        let window = self.buffer.gather(pos - k..=pos + k, Generation::Raw)?;
        let blocks: Vec<&ProposalBlock> = window.iter().map(|e| e.block.as_ref()).collect();
        let candidates = ProposalBlock::concat(&blocks)?;
        let target = target[0].block.as_ref();
        let out = stca_enhance(target, &candidates, &self.net.stage1, self.config)?;
        target.with_features(out)
    }

    /// Detections for key frame `c`, filling buffers as needed.
    pub fn detect(&mut self, c: usize) -> Result<Detection> {
        if c >= self.sequence.len() {
            return Err(StcaError::InvalidConfig(format!(
                "key frame {c} outside a {}-frame sequence",
                self.sequence.len()
            )));
        }
        let frame = &self.sequence[c];
        let key = c as i64;
        let k = self.config.half_window() as i64;

        let features = match self.net.aggregation {
            Aggregation::Disabled => ProposalBlock::from_frame(frame)?.features,
            Aggregation::TwoStage => {
                // stage 1
                for p in key - 2 * k..=key + 2 * k {
                    self.load_raw(p)?;
                }
                // stage 2, only for positions not already buffered
                let missing: Vec<i64> = (key - k..=key + k)
                    .filter(|&p| !self.buffer.contains(p, Generation::Enhanced))
                    .collect();
                let this = &*self;
                let computed = exec::map_indices(missing.len(), |i| this.stage2(missing[i]));
                for (p, block) in missing.iter().zip(computed) {
                    self.buffer.insert_enhanced(*p, block?)?;
                    self.stats.stage2_computed += 1;
                }
                self.buffer.evict_below(key - 2 * k, key - k);

                // stage 3
                let target = self.buffer.gather(std::iter::once(key), Generation::Enhanced)?[0]
                    .block
                    .clone();
                let window = self.buffer.gather(key - k..=key + k, Generation::Enhanced)?;
                let blocks: Vec<&ProposalBlock> = window.iter().map(|e| e.block.as_ref()).collect();
                let candidates = ProposalBlock::concat(&blocks)?;
                self.stats.stage3_computed += 1;
                if let Some(top_k) = self.attention_top_k {
                    let (out, cache) = stca_forward(&target, &candidates, &self.net.stage2, self.config)?;
                    let logits = head_forward(&out, &self.net.head)?;
                    let links = top_links(cache.attention(), &candidates.frames, self.config.n_proposals, top_k);
                    return Ok(Detection {
                        frame_id: frame.frame_id,
                        position: c,
                        posteriors: posteriors(&logits),
                        features: out,
                        logits,
                        attention: Some(links),
                    });
                }
                stca_enhance(&target, &candidates, &self.net.stage2, self.config)?
            }
        };
        let logits = head_forward(&features, &self.net.head)?;
        Ok(Detection {
            frame_id: frame.frame_id,
            position: c,
            posteriors: posteriors(&logits),
            features,
            logits,
            attention: None,
        })
    }

    /// Detections for the next key frame in sequence order.
    pub fn step(&mut self) -> Option<Result<Detection>> {
        if self.next_key >= self.sequence.len() {
            return None;
        }
        let c = self.next_key;
        self.next_key += 1;
        Some(self.detect(c))
    }
}

fn top_links(weights: &Matrix, candidate_frames: &[i64], per_frame: usize, k: usize) -> Vec<Vec<AttentionLink>> {
    (0..weights.rows())
        .map(|i| {
            let mut order: Vec<usize> = (0..weights.cols()).collect();
            order.sort_by(|&a, &b| weights.get(i, b).total_cmp(&weights.get(i, a)).then(a.cmp(&b)));
            order
                .into_iter()
                .take(k)
                .map(|j| AttentionLink {
                    target: i,
                    candidate_frame: candidate_frames[j],
                    candidate_index: j % per_frame.max(1),
                    weight: weights.get(i, j),
                })
                .collect()
        })
        .collect()
}

/// Runs the sliding window over every frame of the sequence.
pub fn infer_window(sequence: &[FrameProposals], net: &Network, config: &StcaConfig) -> Result<Vec<Detection>> {
    let mut session = SlidingWindow::new(sequence, net, config)?;
    let mut out = Vec::with_capacity(sequence.len());
    while let Some(d) = session.step() {
        out.push(d?);
    }
    Ok(out)
}

/// Detections for one key frame computed with fresh buffers.
pub fn infer_key_frame(
    sequence: &[FrameProposals],
    key: usize,
    net: &Network,
    config: &StcaConfig,
) -> Result<Detection> {
    SlidingWindow::new(sequence, net, config)?.detect(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, Proposal};

    fn video(len: usize, n: usize, d: usize) -> Vec<FrameProposals> {
        (0..len as i64)
            .map(|t| FrameProposals {
                frame_id: t,
                proposals: (0..n)
                    .map(|i| Proposal {
                        bbox: BoundingBox::new(i as f64 * 9.0 + t as f64, 3.0, 4.0 + i as f64, 5.0),
                        frame_id: t,
                        feature: (0..d)
                            .map(|k| ((t * 7 + i as i64 * 3 + k as i64) % 5) as f64 * 0.2)
                            .collect(),
                        objectness: 0.5,
                        label: Some(1),
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn padding_clamps_to_boundary_frames() {
        let v = video(3, 1, 2);
        let p = pad_boundary(&v, -2..=4).unwrap();
        let ids: Vec<i64> = p.iter().map(|f| f.frame_id).collect();
        assert_eq!(ids, vec![0, 0, 0, 1, 2, 2, 2]);
        let single = video(1, 1, 2);
        assert!(pad_boundary(&single, -2..=2).unwrap().iter().all(|f| *f == single[0]));
        assert_eq!(pad_boundary(&[], 0..=0), Err(StcaError::EmptySequence));
    }

    #[test]
    fn enhanced_entry_needs_raw_entry() {
        let mut b = FeatureBuffer::new();
        let block = ProposalBlock::from_frame(&video(1, 1, 2)[0]).unwrap();
        assert!(b.insert_enhanced(0, block.clone()).is_err());
        b.insert_raw(0, block.clone());
        assert!(b.insert_enhanced(0, block).is_ok());
        assert!(b.gather(0..=0, Generation::Enhanced).is_ok());
        assert!(b.gather(0..=1, Generation::Enhanced).is_err());
    }

    #[test]
    fn sliding_reuses_stage2_entries() {
        let config = StcaConfig {
            d_v: 4,
            d_phi: 4,
            n_proposals: 2,
            window: 3,
            ..StcaConfig::desk()
        };
        let net = Network::init(&config, 2, Aggregation::TwoStage, 3);
        let v = video(6, 2, 4);
        let mut s = SlidingWindow::new(&v, &net, &config).unwrap();
        while let Some(d) = s.step() {
            d.unwrap();
        }
        // positions -1..=6 each enhanced exactly once
        assert_eq!(s.stats().stage2_computed, 8);
        assert_eq!(s.stats().stage3_computed, 6);
        assert!(s.buffer().len(Generation::Enhanced) <= 3);
    }

    #[test]
    fn even_window_is_rejected() {
        let config = StcaConfig {
            window: 4,
            ..StcaConfig::desk()
        };
        let net = Network::init(&StcaConfig::desk(), 2, Aggregation::TwoStage, 3);
        let v = video(2, 8, 16);
        assert!(matches!(
            SlidingWindow::new(&v, &net, &config),
            Err(StcaError::EvenWindow(4))
        ));
    }
}
