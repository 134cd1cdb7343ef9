mod common;

use common::*;
use stca::attention::stca_forward;
use stca::exec::with_threads;
use stca::pipeline::{
    enhance_triplet, infer_key_frame, infer_window, sample_triplet, train, train_step, Aggregation, FeatureBuffer,
    Generation, SgdMomentum, SlidingWindow, TrainerConfig, TrainingTriplet,
};
use stca::{FrameProposals, Matrix, ProposalBlock, StcaConfig, StcaError, StcaParams};

fn two_intra_frame_passes(frame: &FrameProposals, net: &stca::pipeline::Network, c: &StcaConfig) -> Matrix {
    let raw = ProposalBlock::from_frame(frame).unwrap();
    let (f1, _) = stca_forward(&raw, &raw, &net.stage1, c).unwrap();
    let enh = raw.with_features(f1).unwrap();
    stca_forward(&enh, &enh, &net.stage2, c).unwrap().0
}

#[test]
fn window_of_one_is_two_intra_frame_passes() {
    let c = StcaConfig { window: 1, ..config(8) };
    let seq = video(1, 6, &c);
    let net = network(&c, 1);
    for d in infer_window(&seq, &net, &c).unwrap() {
        let want = two_intra_frame_passes(&seq[d.position], &net, &c);
        assert!(d.features.max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn single_frame_video_collapses_to_window_of_one() {
    let base = StcaConfig { window: 1, ..config(8) };
    let seq = video(2, 1, &base);
    let net = network(&base, 2);
    let reference = infer_window(&seq, &net, &base).unwrap();
    for window in [3, 5, 7] {
        let c = StcaConfig { window, ..base.clone() };
        let got = infer_window(&seq, &net, &c).unwrap();
        assert!(
            got[0].features.max_abs_diff(&reference[0].features) < 1e-12,
            "T={window}"
        );
        assert!(got[0].logits.max_abs_diff(&reference[0].logits) < 1e-12);
    }
}

#[test]
fn sliding_window_equals_fresh_recomputation() {
    for window in [1, 3, 5] {
        let c = StcaConfig { window, ..config(8) };
        let seq = video(7, 12, &c);
        let net = network(&c, 7);
        let slid = infer_window(&seq, &net, &c).unwrap();
        for (k, d) in slid.iter().enumerate() {
            let fresh = infer_key_frame(&seq, k, &net, &c).unwrap();
            assert!(d.features.max_abs_diff(&fresh.features) < 1e-12);
            assert!(d.posteriors.max_abs_diff(&fresh.posteriors) < 1e-12);
        }
    }
}

#[test]
fn window_of_three_unrolls_by_hand() {
    let c = StcaConfig { window: 3, ..config(8) };
    let seq = video(8, 5, &c);
    let net = network(&c, 8);
    let blocks: Vec<ProposalBlock> = seq.iter().map(|f| ProposalBlock::from_frame(f).unwrap()).collect();
    let enhanced: Vec<ProposalBlock> = (1..=3)
        .map(|k| {
            let cands = ProposalBlock::concat(&[&blocks[k - 1], &blocks[k], &blocks[k + 1]]).unwrap();
            let (f, _) = stca_forward(&blocks[k], &cands, &net.stage1, &c).unwrap();
            blocks[k].with_features(f).unwrap()
        })
        .collect();
    let cands = ProposalBlock::concat(&enhanced.iter().collect::<Vec<_>>()).unwrap();
    let (want, _) = stca_forward(&enhanced[1], &cands, &net.stage2, &c).unwrap();
    let got = infer_key_frame(&seq, 2, &net, &c).unwrap();
    assert!(got.features.max_abs_diff(&want) < 1e-12);
}

#[test]
fn boundary_padding_equals_manual_replication() {
    let c = StcaConfig { window: 3, ..config(8) };
    let seq = video(9, 4, &c);
    let net = network(&c, 9);
    let mut manual = vec![seq[0].clone(), seq[0].clone()];
    manual.extend(seq.iter().cloned());
    let padded = infer_key_frame(&seq, 0, &net, &c).unwrap();
    let replicated = infer_key_frame(&manual, 2, &net, &c).unwrap();
    assert!(padded.features.max_abs_diff(&replicated.features) < 1e-12);
}

#[test]
fn sliding_reads_only_enhanced_features_in_stage_three() {
    let c = StcaConfig { window: 3, ..config(8) };
    let seq = video(10, 6, &c);
    let net = network(&c, 10);
    let mut session = SlidingWindow::new(&seq, &net, &c).unwrap();
    while let Some(d) = session.step() {
        let d = d.unwrap();
        let buffer = session.buffer();
        for pos in d.position as i64 - 1..=d.position as i64 + 1 {
            let enhanced = buffer.gather([pos].into_iter(), Generation::Enhanced).unwrap()[0];
            assert_eq!(enhanced.generation, Generation::Enhanced);
            let raw = buffer.get(pos, Generation::Raw).unwrap();
            assert_eq!(raw.generation, Generation::Raw);
            assert_ne!(enhanced.block.features, raw.block.features);
        }
    }
    // each window position is enhanced exactly once across the sweep
    assert_eq!(session.stats().stage2_computed, seq.len() + 2);
    assert_eq!(session.stats().stage3_computed, seq.len());
}

#[test]
fn enhanced_entry_requires_raw_entry() {
    let mut buffer = FeatureBuffer::new();
    let block = ProposalBlock::from_frame(&video(1, 1, &config(4))[0]).unwrap();
    assert!(matches!(
        buffer.insert_enhanced(0, block.clone()),
        Err(StcaError::BufferDiscipline(_))
    ));
    buffer.insert_raw(0, block.clone());
    buffer.insert_enhanced(0, block).unwrap();
}

#[test]
fn zero_parameters_give_double_uniform_aggregation() {
    let c = StcaConfig {
        n_proposals: 1,
        ..config(4)
    };
    let seq = video(11, 3, &c);
    let mut net = network(&c, 11);
    net.stage1 = StcaParams::zeros(&c);
    net.stage2 = StcaParams::zeros(&c);
    let triplet = TrainingTriplet {
        key_a: seq[0].clone(),
        support: seq[1].clone(),
        key_b: seq[2].clone(),
        indices: [0, 1, 2],
    };
    let out = enhance_triplet(&triplet, &net, &c).unwrap();
    let f = |k: usize| &seq[k].proposals[0].feature;
    for d in 0..4 {
        let (a, s, b) = (f(0)[d], f(1)[d], f(2)[d]);
        let ea = a + (a + s) / 2.0;
        let eb = b + (b + s) / 2.0;
        let mean = (ea + eb) / 2.0;
        assert!((out.get(0, d) - (ea + mean)).abs() < 1e-12);
        assert!((out.get(1, d) - (eb + mean)).abs() < 1e-12);
    }
}

fn train_small(seed: u64, steps: usize, learning_rate: f64) -> (stca::pipeline::Network, Vec<f64>) {
    let c = config(8);
    let videos: Vec<_> = (0..3).map(|v| video(100 + v, 10, &c)).collect();
    let mut net = network(&c, seed);
    let trainer = TrainerConfig {
        steps,
        learning_rate,
        lr_drop_step: steps / 2,
        seed,
        ..TrainerConfig::default()
    };
    let losses = train(&videos, &mut net, &c, &trainer, |_, _| {}).unwrap();
    (net, losses)
}

#[test]
fn fixed_seeds_give_bit_identical_training() {
    let (a, la) = train_small(4, 30, 0.05);
    let (b, lb) = train_small(4, 30, 0.05);
    assert_eq!(la, lb);
    assert_eq!(a, b);
    let (_, lc) = train_small(5, 30, 0.05);
    assert_ne!(la, lc);
}

#[test]
fn thread_count_does_not_change_results() {
    let single = with_threads(1, || train_small(6, 15, 0.05));
    let many = with_threads(4, || train_small(6, 15, 0.05));
    assert_eq!(single, many);
    let c = StcaConfig { window: 5, ..config(8) };
    let seq = video(6, 9, &c);
    let net = network(&c, 6);
    let a = with_threads(1, || infer_window(&seq, &net, &c).unwrap());
    let b = with_threads(4, || infer_window(&seq, &net, &c).unwrap());
    assert_eq!(a, b);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let c = config(8);
    let seq = video(12, 6, &c);
    let triplet = sample_triplet(&seq, 3, &c).unwrap();
    let start = network(&c, 12);
    let mut net = start.clone();
    let mut opt = SgdMomentum::new();
    let trainer = TrainerConfig {
        learning_rate: 0.0,
        ..TrainerConfig::default()
    };
    let l0 = train_step(&triplet, &mut net, &mut opt, &c, &trainer, 0).unwrap();
    let l1 = train_step(&triplet, &mut net, &mut opt, &c, &trainer, 1).unwrap();
    assert_eq!(l0, l1);
    assert_eq!(net, start);
}

#[test]
fn stages_are_updated_independently() {
    let c = config(8);
    let seq = video(13, 6, &c);
    let triplet = sample_triplet(&seq, 1, &c).unwrap();
    let start = network(&c, 13);
    let mut net = start.clone();
    train_step(
        &triplet,
        &mut net,
        &mut SgdMomentum::new(),
        &c,
        &TrainerConfig::default(),
        0,
    )
    .unwrap();
    assert_ne!(net.stage1, start.stage1);
    assert_ne!(net.stage2, start.stage2);
    assert_ne!(net.stage1.w_q.data(), net.stage2.w_q.data());
}

#[test]
fn unlabeled_key_frames_are_rejected() {
    let c = config(8);
    let mut seq = video(14, 3, &c);
    seq[0].proposals[0].label = None;
    let t = TrainingTriplet {
        key_a: seq[0].clone(),
        support: seq[1].clone(),
        key_b: seq[2].clone(),
        indices: [0, 1, 2],
    };
    let mut net = network(&c, 14);
    let r = train_step(&t, &mut net, &mut SgdMomentum::new(), &c, &TrainerConfig::default(), 0);
    assert!(matches!(r, Err(StcaError::LabelMismatch(_))));
}

#[test]
fn head_only_network_ignores_aggregation_parameters() {
    let c = config(8);
    let seq = video(15, 4, &c);
    let mut net = network(&c, 15);
    net.aggregation = Aggregation::Disabled;
    let a = infer_window(&seq, &net, &c).unwrap();
    net.stage1 = StcaParams::zeros(&c);
    assert_eq!(a, infer_window(&seq, &net, &c).unwrap());
    for (d, f) in a.iter().zip(&seq) {
        assert_eq!(d.features, ProposalBlock::from_frame(f).unwrap().features);
    }
}
