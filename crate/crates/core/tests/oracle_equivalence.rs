mod common;

use common::*;
use rand::Rng;
use stca::attention::stca_forward;
use stca::oracle::naive_stca;
use stca::pipeline::{infer_window, Aggregation};
use stca::{oracle::naive_infer, AttentionVariant, ProposalBlock, StcaConfig};

#[test]
fn fast_operator_matches_naive_on_fifty_cases() {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let d_v = [4, 8, 16][case % 3];
        let variant = [
            AttentionVariant::Semantic,
            AttentionVariant::Spatial,
            AttentionVariant::Full,
        ][case % 5 % 3];
        let c = StcaConfig {
            d_v,
            d_phi: [2, 4, 8][case % 3],
            variant,
            share_query: case % 2 == 0,
            signed_tau: case % 7 != 0,
            ..StcaConfig::desk()
        };
        let n = r.random_range(1..6);
        let m = r.random_range(1..12);
        let t = random_proposals(&mut r, n, d_v, 5);
        let g = random_proposals(&mut r, m, d_v, 5);
        let p = params(&c, r.random());
        let (fast, _) = stca_forward(
            &ProposalBlock::from_proposals(&t).unwrap(),
            &ProposalBlock::from_proposals(&g).unwrap(),
            &p,
            &c,
        )
        .unwrap();
        let naive = naive_stca(&t, &g, &p, &c).unwrap();
        worst = worst.max(fast.max_abs_diff(&naive));
    }
    assert!(worst < 1e-12, "max deviation {worst:e}");
}

#[test]
fn single_candidate_is_reproduced_by_the_oracle() {
    let c = config(4);
    let p = random_proposals(&mut rng(5), 1, 4, 1);
    let out = naive_stca(&p, &p, &params(&c, 6), &c).unwrap();
    for k in 0..4 {
        assert_eq!(out.get(0, k), 2.0 * p[0].feature[k]);
    }
}

#[test]
fn buffered_inference_matches_naive_for_several_windows() {
    for window in [1, 3, 5] {
        let c = StcaConfig { window, ..config(8) };
        let seq = video(12, 12, &c);
        let net = network(&c, 12);
        let fast = infer_window(&seq, &net, &c).unwrap();
        let naive = naive_infer(&seq, &net, &c).unwrap();
        assert_eq!(fast.len(), naive.len());
        for (a, b) in fast.iter().zip(&naive) {
            assert_eq!(a.frame_id, b.frame_id);
            assert!(a.features.max_abs_diff(&b.features) < 1e-12, "T={window}");
            assert!(a.logits.max_abs_diff(&b.logits) < 1e-12, "T={window}");
        }
    }
}

#[test]
fn eight_frame_window_of_three_matches_naive() {
    let c = StcaConfig { window: 3, ..config(8) };
    let seq = video(23, 8, &c);
    let net = network(&c, 23);
    let fast = infer_window(&seq, &net, &c).unwrap();
    for (a, b) in fast.iter().zip(naive_infer(&seq, &net, &c).unwrap()) {
        assert!(a.logits.max_abs_diff(&b.logits) < 1e-12);
    }
}

#[test]
fn head_only_inference_matches_naive() {
    let c = config(8);
    let seq = video(3, 4, &c);
    let mut net = network(&c, 3);
    net.aggregation = Aggregation::Disabled;
    for (a, b) in infer_window(&seq, &net, &c)
        .unwrap()
        .iter()
        .zip(naive_infer(&seq, &net, &c).unwrap())
    {
        assert!(a.logits.max_abs_diff(&b.logits) < 1e-12);
    }
}
