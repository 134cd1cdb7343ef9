//! Synthetic videos whose proposals are ambiguous frame by frame.
//!
//! Each video holds `tracks` objects with distinct classes, each made of one
//! object proposal and `n_proposals / tracks - 1` context parts. Feature
//! layout, with `C = classes`:
//!
//! * dims `0..C`: reveal dimensions. With probability `reveal_prob` a
//!   proposal carries `reveal_strength` on the dimension of its class,
//!   otherwise only noise.
//! * dims `C, C+1`: a track marker of norm `separation`. Markers of one
//!   video are evenly spread in angle under a random rotation, so they tell
//!   tracks apart without saying anything about class.
//! * remaining dims: a cluster center shared by every proposal of the video.
//!
//! Context parts sit along a class-specific direction from the object, so
//! the box layout is a second cue. A single proposal is classified correctly
//! only when it is revealed; pooling a track over neighboring frames almost
//! always finds a revealed member.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stca::{BoundingBox, FrameProposals, Proposal, StcaConfig};

use crate::dataset::{Dataset, Video};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames: usize,
    pub tracks: usize,
    pub classes: usize,
    pub reveal_prob: f64,
    pub reveal_strength: f64,
    pub noise: f64,
    /// Norm of the per-track marker that tells tracks of one video apart.
    pub separation: f64,
    /// Maximum per-frame speed of a track, in pixels.
    pub drift: f64,
    /// Share of videos held out for evaluation.
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 200,
            frames: 20,
            tracks: 2,
            classes: 2,
            reveal_prob: 0.2,
            reveal_strength: 2.0,
            noise: 0.15,
            separation: 2.0,
            drift: 1.0,
            eval_fraction: 0.2,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, stca: &StcaConfig) -> Result<(), String> {
        if self.videos == 0 || self.frames == 0 {
            return Err("videos and frames must be positive".into());
        }
        if self.tracks == 0 || !stca.n_proposals.is_multiple_of(self.tracks) {
            return Err(format!(
                "tracks ({}) must divide n_proposals ({})",
                self.tracks, stca.n_proposals
            ));
        }
        if self.classes < 2 || self.classes + 2 > stca.d_v {
            return Err(format!("classes must lie in [2, d_v - 2], got {}", self.classes));
        }
        if !(0.0..=1.0).contains(&self.reveal_prob) {
            return Err(format!("reveal_prob must lie in [0, 1], got {}", self.reveal_prob));
        }
        for (name, v) in [
            ("reveal_strength", self.reveal_strength),
            ("noise", self.noise),
            ("separation", self.separation),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.drift.is_finite() && self.drift >= 0.0) {
            return Err(format!("drift must be non-negative, got {}", self.drift));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(format!("eval_fraction must lie in [0, 1), got {}", self.eval_fraction));
        }
        Ok(())
    }

    /// Number of trailing videos held out for evaluation.
    pub fn held_out(&self) -> usize {
        self.held_out_of(self.videos)
    }

    /// Held-out count for a dataset of `videos` videos.
    pub fn held_out_of(&self, videos: usize) -> usize {
        ((videos as f64 * self.eval_fraction).round() as usize).min(videos.saturating_sub(1))
    }
}

/// Hidden generator state for one proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProposalTruth {
    pub track: usize,
    pub revealed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// `truth[video][frame][proposal]`.
    pub truth: Vec<Vec<Vec<ProposalTruth>>>,
}

struct Track {
    class: usize,
    marker: (f64, f64),
    center: (f64, f64),
    velocity: (f64, f64),
    size: (f64, f64),
}

/// Distance between track centers along both axes, in pixels.
const TRACK_SPACING: f64 = 600.0;

/// Offsets of the context parts in object widths/heights along the class direction.
const PART_OFFSETS: [f64; 3] = [-1.5, 1.5, 3.0];

fn part_offset(k: usize) -> f64 {
    let base = PART_OFFSETS[k % PART_OFFSETS.len()];
    base * (1 + k / PART_OFFSETS.len()) as f64
}

pub fn generate(synth: &SynthConfig, stca: &StcaConfig) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(synth.seed);
    let noise = Normal::new(0.0, synth.noise).expect("validated noise");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let per_track = stca.n_proposals / synth.tracks;
    let c = synth.classes;

    let mut videos = Vec::with_capacity(synth.videos);
    let mut truth = Vec::with_capacity(synth.videos);
    for v in 0..synth.videos {
        let cluster: Vec<f64> = (0..stca.d_v).map(|_| unit.sample(&mut rng)).collect();
        let mut classes: Vec<usize> = (1..=c).collect();
        classes.shuffle(&mut rng);
        let phase = rng.random_range(0.0..2.0 * PI);
        let mut tracks: Vec<Track> = (0..synth.tracks)
            .map(|k| {
                let marker = phase + 2.0 * PI * k as f64 / synth.tracks as f64;
                let heading = rng.random_range(0.0..2.0 * PI);
                let speed = rng.random_range(0.0..=synth.drift);
                Track {
                    class: classes[k % c],
                    marker: (synth.separation * marker.cos(), synth.separation * marker.sin()),
                    center: (
                        200.0 + TRACK_SPACING * k as f64 + rng.random_range(-40.0..40.0),
                        200.0 + TRACK_SPACING * k as f64 + rng.random_range(-40.0..40.0),
                    ),
                    velocity: (speed * heading.cos(), speed * heading.sin()),
                    size: (rng.random_range(20.0..40.0), rng.random_range(20.0..40.0)),
                }
            })
            .collect();

        let mut frames = Vec::with_capacity(synth.frames);
        let mut video_truth = Vec::with_capacity(synth.frames);
        for f in 0..synth.frames {
            let frame_id = f as i64;
            let mut items: Vec<(Proposal, ProposalTruth)> = Vec::with_capacity(stca.n_proposals);
            for (k, t) in tracks.iter().enumerate() {
                let theta = PI * (t.class - 1) as f64 / c as f64;
                let (w, h) = t.size;
                for part in 0..per_track {
                    let (cx, cy) = if part == 0 {
                        (t.center.0, t.center.1)
                    } else {
                        let s = part_offset(part - 1);
                        (t.center.0 + s * w * theta.cos(), t.center.1 + s * h * theta.sin())
                    };
                    let revealed = rng.random_bool(synth.reveal_prob);
                    let mut feature: Vec<f64> = (0..stca.d_v)
                        .map(|d| {
                            let mean = match d {
                                d if d < c => 0.0,
                                d if d == c => t.marker.0,
                                d if d == c + 1 => t.marker.1,
                                d => cluster[d],
                            };
                            mean + noise.sample(&mut rng)
                        })
                        .collect();
                    if revealed {
                        feature[t.class - 1] += synth.reveal_strength;
                    }
                    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.5..0.5);
                    items.push((
                        Proposal {
                            bbox: BoundingBox::new(cx + jitter(&mut rng), cy + jitter(&mut rng), w, h),
                            frame_id,
                            feature,
                            objectness: rng.random_range(0.5..1.0),
                            label: Some(t.class),
                        },
                        ProposalTruth { track: k, revealed },
                    ));
                }
            }
            items.shuffle(&mut rng);
            let (proposals, frame_truth): (Vec<_>, Vec<_>) = items.into_iter().unzip();
            frames.push(FrameProposals { frame_id, proposals });
            video_truth.push(frame_truth);
            for t in &mut tracks {
                t.center.0 += t.velocity.0;
                t.center.1 += t.velocity.1;
            }
        }
        videos.push(Video {
            id: format!("video{v:04}"),
            frames,
        });
        truth.push(video_truth);
    }
    Synthetic {
        dataset: Dataset { videos },
        truth,
    }
}

/// Log-likelihood of one proposal's reveal dimensions under each class.
fn class_scores(feature: &[f64], synth: &SynthConfig, scores: &mut [f64]) {
    let (p, a, s2) = (synth.reveal_prob, synth.reveal_strength, synth.noise * synth.noise);
    for (c, score) in scores.iter_mut().enumerate() {
        *score += (1.0 - p + p * ((a * feature[c] - 0.5 * a * a) / s2).exp()).ln();
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy of the Bayes-optimal classifier that sees the reveal dimensions
/// of every proposal of the target's own track within `radius` frames of the
/// target (`radius = 0` uses only the proposal itself). Track membership is
/// taken from the generator's hidden state. Ties count as half correct.
pub fn bayes_accuracy(data: &Synthetic, synth: &SynthConfig, radius: usize) -> f64 {
    let c = synth.classes;
    let (mut correct, mut total) = (0.0, 0usize);
    for (video, truth) in data.dataset.videos.iter().zip(&data.truth) {
        let len = video.frames.len();
        for (f, frame) in video.frames.iter().enumerate() {
            for (i, target) in frame.proposals.iter().enumerate() {
                let mut scores = vec![0.0; c];
                if radius == 0 {
                    class_scores(&target.feature, synth, &mut scores);
                } else {
                    let track = truth[f][i].track;
                    for g in f.saturating_sub(radius)..=(f + radius).min(len - 1) {
                        for (q, t) in video.frames[g].proposals.iter().zip(&truth[g]) {
                            if t.track == track {
                                class_scores(&q.feature, synth, &mut scores);
                            }
                        }
                    }
                }
                let best = scores[argmax(&scores)];
                let ties = scores.iter().filter(|&&s| s == best).count();
                if let Some(label) = target.label {
                    if scores[label - 1] == best {
                        correct += 1.0 / ties as f64;
                    }
                }
                total += 1;
            }
        }
    }
    correct / total as f64
}
