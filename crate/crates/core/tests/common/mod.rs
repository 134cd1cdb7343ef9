#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stca::pipeline::{Aggregation, Network};
use stca::{BoundingBox, FrameProposals, Matrix, Proposal, StcaConfig, StcaParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    BoundingBox::new(
        rng.random_range(0.0..100.0),
        rng.random_range(0.0..100.0),
        rng.random_range(5.0..30.0),
        rng.random_range(5.0..30.0),
    )
}

pub fn random_feature(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn random_proposals(rng: &mut ChaCha8Rng, n: usize, d: usize, frames: i64) -> Vec<Proposal> {
    (0..n)
        .map(|_| Proposal {
            bbox: random_box(rng),
            frame_id: rng.random_range(0..frames),
            feature: random_feature(rng, d),
            objectness: rng.random_range(0.0..=1.0),
            label: None,
        })
        .collect()
}

/// Small config with every term active.
pub fn config(d_v: usize) -> StcaConfig {
    StcaConfig {
        d_v,
        d_phi: 4,
        ..StcaConfig::desk()
    }
}

/// Parameters large enough that attention is far from uniform.
pub fn params(config: &StcaConfig, seed: u64) -> StcaParams {
    StcaParams::gaussian(config, seed, 0.3)
}

pub fn video(seed: u64, len: usize, config: &StcaConfig) -> Vec<FrameProposals> {
    let mut rng = rng(seed);
    let classes = 3;
    (0..len as i64)
        .map(|t| FrameProposals {
            frame_id: t,
            proposals: (0..config.n_proposals)
                .map(|_| Proposal {
                    bbox: random_box(&mut rng),
                    frame_id: t,
                    feature: random_feature(&mut rng, config.d_v),
                    objectness: rng.random_range(0.0..=1.0),
                    label: Some(rng.random_range(0..classes)),
                })
                .collect(),
        })
        .collect()
}

pub fn network(config: &StcaConfig, seed: u64) -> Network {
    let mut net = Network::init(config, 2, Aggregation::TwoStage, seed);
    net.stage1 = params(config, seed ^ 0x11);
    net.stage2 = params(config, seed ^ 0x22);
    net.head.weights = Matrix::gaussian(config.d_v, 3, 0.5, &mut rng(seed ^ 0x33));
    net
}

pub fn features(proposals: &[Proposal]) -> Matrix {
    Matrix::from_rows(&proposals.iter().map(|p| p.feature.clone()).collect::<Vec<_>>()).unwrap()
}

/// Scalar `sin / cos` pair at one frequency.
pub fn scalar_sinusoid(r: f64, dim: usize, base: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(dim);
    for z in 0..dim / 2 {
        let a = r * base.powf(-((2 * z) as f64) / dim as f64);
        v.push(a.sin());
        v.push(a.cos());
    }
    v
}
