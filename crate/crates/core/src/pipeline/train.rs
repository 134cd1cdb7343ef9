//! The two-stage network, its loss, and SGD with momentum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::{head_backward, head_forward, softmax_cross_entropy, HeadParams};
use super::sampler::{sample_triplet_with, stage1_groups, stage2_group, TrainingTriplet};
use crate::attention::{stca_backward, stca_forward};
use crate::error::{Result, StcaError};
use crate::linalg::Matrix;
use crate::model::{FrameProposals, StcaConfig, StcaParams};

/// Whether proposals pass through the aggregation units before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Head on raw proposal features.
    Disabled,
    /// Stage-1 units per key frame, then one mixed stage-2 unit.
    TwoStage,
}

/// Parameters of both aggregation stages and the head. The stages never share storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub aggregation: Aggregation,
    pub stage1: StcaParams,
    pub stage2: StcaParams,
    pub head: HeadParams,
}

impl Network {
    pub fn init(config: &StcaConfig, num_classes: usize, aggregation: Aggregation, seed: u64) -> Self {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let s1 = seeds.random::<u64>();
        let s2 = seeds.random::<u64>();
        let sh = seeds.random::<u64>();
        Self {
            aggregation,
            stage1: StcaParams::default_init(config, s1),
            stage2: StcaParams::default_init(config, s2),
            head: HeadParams::init(config.d_v, num_classes, sh),
        }
    }

    pub fn validate(&self, config: &StcaConfig) -> Result<()> {
        self.stage1.validate(config)?;
        self.stage2.validate(config)?;
        self.head.validate(config.d_v)
    }

    /// Trainable tensors with their weight-decay flag, in a fixed order.
    pub(crate) fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out = Vec::new();
        if self.aggregation == Aggregation::TwoStage {
            for p in [&mut self.stage1, &mut self.stage2] {
                for (_, m) in p.blocks_mut() {
                    out.push((m.data_mut(), true));
                }
            }
        }
        out.push((self.head.weights.data_mut(), true));
        out.push((self.head.bias.as_mut_slice(), false));
        out
    }
}

/// Gradients matching [`Network`]'s trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub stage1: Option<StcaParams>,
    pub stage2: Option<StcaParams>,
    pub head_weights: Matrix,
    pub head_bias: Vec<f64>,
}

impl NetworkGrads {
    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for p in [&self.stage1, &self.stage2].into_iter().flatten() {
            for (_, m) in p.blocks() {
                out.push(m.data());
            }
        }
        out.push(self.head_weights.data());
        out.push(self.head_bias.as_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn add_params(a: &StcaParams, b: &StcaParams) -> Result<StcaParams> {
    let mut out = a.clone();
    for ((_, x), (_, y)) in out.blocks_mut().into_iter().zip(b.blocks()) {
        x.add_assign(y)?;
    }
    Ok(out)
}

/// Enhanced key-frame features, in target order (`key_a` then `key_b`).
pub fn enhance_triplet(triplet: &TrainingTriplet, net: &Network, config: &StcaConfig) -> Result<Matrix> {
    let [ga, gb] = stage1_groups(triplet)?;
    match net.aggregation {
        Aggregation::Disabled => Matrix::vstack(&[&ga.targets.features, &gb.targets.features]),
        Aggregation::TwoStage => {
            let (out_a, _) = stca_forward(&ga.targets, &ga.candidates, &net.stage1, config)?;
            let (out_b, _) = stca_forward(&gb.targets, &gb.candidates, &net.stage1, config)?;
            let g2 = stage2_group(&ga.targets.with_features(out_a)?, &gb.targets.with_features(out_b)?)?;
            let (out, _) = stca_forward(&g2.targets, &g2.candidates, &net.stage2, config)?;
            Ok(out)
        }
    }
}

/// Mean cross-entropy over both key frames' proposals.
pub fn network_loss(triplet: &TrainingTriplet, net: &Network, config: &StcaConfig) -> Result<f64> {
    let labels = triplet.key_labels()?;
    let features = enhance_triplet(triplet, net, config)?;
    let logits = head_forward(&features, &net.head)?;
    softmax_cross_entropy(&logits, &labels).map(|(loss, _)| loss)
}

/// Loss and gradients through the whole graph.
pub fn network_loss_and_grads(
    triplet: &TrainingTriplet,
    net: &Network,
    config: &StcaConfig,
) -> Result<(f64, NetworkGrads)> {
    let labels = triplet.key_labels()?;
    let [ga, gb] = stage1_groups(triplet)?;

    if net.aggregation == Aggregation::Disabled {
        let features = Matrix::vstack(&[&ga.targets.features, &gb.targets.features])?;
        let logits = head_forward(&features, &net.head)?;
        let (loss, d_logits) = softmax_cross_entropy(&logits, &labels)?;
        let hg = head_backward(&features, &net.head, &d_logits)?;
        return Ok((
            loss,
            NetworkGrads {
                stage1: None,
                stage2: None,
                head_weights: hg.weights,
                head_bias: hg.bias,
            },
        ));
    }

    let (out_a, cache_a) = stca_forward(&ga.targets, &ga.candidates, &net.stage1, config)?;
    let (out_b, cache_b) = stca_forward(&gb.targets, &gb.candidates, &net.stage1, config)?;
    let n_a = out_a.rows();
    let enh_a = ga.targets.with_features(out_a)?;
    let enh_b = gb.targets.with_features(out_b)?;
    let g2 = stage2_group(&enh_a, &enh_b)?;
    let (out2, cache2) = stca_forward(&g2.targets, &g2.candidates, &net.stage2, config)?;

    let logits = head_forward(&out2, &net.head)?;
    let (loss, d_logits) = softmax_cross_entropy(&logits, &labels)?;
    let hg = head_backward(&out2, &net.head, &d_logits)?;

    let g2_grads = stca_backward(&cache2, &hg.features)?;
    // targets and candidates of the mixed unit are the same proposals
    let mut d_mixed = g2_grads.targets.clone();
    d_mixed.add_assign(&g2_grads.candidates)?;
    let d_a = d_mixed.slice_rows(0, n_a);
    let d_b = d_mixed.slice_rows(n_a, d_mixed.rows());
    let ga_grads = stca_backward(&cache_a, &d_a)?;
    let gb_grads = stca_backward(&cache_b, &d_b)?;

    Ok((
        loss,
        NetworkGrads {
            stage1: Some(add_params(&ga_grads.params(), &gb_grads.params())?),
            stage2: Some(g2_grads.params()),
            head_weights: hg.weights,
            head_bias: hg.bias,
        },
    ))
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Step at which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_step: usize,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.005,
            lr_drop_step: 1400,
            lr_drop_factor: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 1,
        }
    }
}

impl TrainerConfig {
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if step >= self.lr_drop_step {
            self.learning_rate * self.lr_drop_factor
        } else {
            self.learning_rate
        }
    }
}

/// Heavy-ball SGD: `v ← μ v + (g + λ θ)`, `θ ← θ − η v`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdMomentum {
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(
        &mut self,
        net: &mut Network,
        grads: &NetworkGrads,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let grad_tensors = grads.tensors();
        let mut tensors = net.tensors_mut();
        if grad_tensors.len() != tensors.len() {
            return Err(StcaError::DimensionMismatch {
                context: "optimizer tensors".into(),
                expected: tensors.len(),
                found: grad_tensors.len(),
            });
        }
        if self.velocity.is_empty() {
            self.velocity = tensors.iter().map(|(t, _)| vec![0.0; t.len()]).collect();
        }
        for (((theta, decay), g), v) in tensors.iter_mut().zip(grad_tensors).zip(&mut self.velocity) {
            if theta.len() != g.len() || v.len() != g.len() {
                return Err(StcaError::DimensionMismatch {
                    context: "optimizer tensor".into(),
                    expected: theta.len(),
                    found: g.len(),
                });
            }
            let wd = if *decay { weight_decay } else { 0.0 };
            for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = momentum * *vi + gi + wd * *t;
                *t -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// One optimization step on one triplet; returns the pre-update loss.
pub fn train_step(
    triplet: &TrainingTriplet,
    net: &mut Network,
    optimizer: &mut SgdMomentum,
    config: &StcaConfig,
    trainer: &TrainerConfig,
    step: usize,
) -> Result<f64> {
    let (loss, grads) = network_loss_and_grads(triplet, net, config)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(StcaError::NonFinite(format!("loss or gradient at step {step}")));
    }
    optimizer.apply(
        net,
        &grads,
        trainer.learning_rate_at(step),
        trainer.momentum,
        trainer.weight_decay,
    )?;
    Ok(loss)
}

/// Runs `trainer.steps` steps, drawing a video uniformly and a triplet from
/// it each step. Returns the per-step losses.
pub fn train(
    videos: &[Vec<FrameProposals>],
    net: &mut Network,
    config: &StcaConfig,
    trainer: &TrainerConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let usable: Vec<&Vec<FrameProposals>> = videos.iter().filter(|v| !v.is_empty()).collect();
    if usable.is_empty() {
        return Err(StcaError::EmptySequence);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trainer.seed);
    let mut optimizer = SgdMomentum::new();
    let mut losses = Vec::with_capacity(trainer.steps);
    for step in 0..trainer.steps {
        let video = usable[rng.random_range(0..usable.len())];
        let triplet = sample_triplet_with(video, &mut rng, config)?;
        let loss = train_step(&triplet, net, &mut optimizer, config, trainer, step)?;
        on_step(step, loss);
        losses.push(loss);
    }
    Ok(losses)
}
