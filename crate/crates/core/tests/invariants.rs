mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use stca::attention::{softmax_rows, stca_forward};
use stca::position::{geometric_relation, sinusoid_embed, spatial_embed, temporal_embed};
use stca::{AttentionVariant, BoundingBox, Matrix, Proposal, ProposalBlock, StcaConfig};

struct Case {
    config: StcaConfig,
    targets: Vec<Proposal>,
    candidates: Vec<Proposal>,
    params: stca::StcaParams,
}

fn case(seed: u64) -> Case {
    let mut r = rng(seed);
    let d_v = [4, 6, 8][r.random_range(0..3)];
    let config = StcaConfig {
        d_v,
        d_phi: 4,
        variant: [
            AttentionVariant::Semantic,
            AttentionVariant::Spatial,
            AttentionVariant::Full,
        ][r.random_range(0..3)],
        share_query: r.random(),
        ..StcaConfig::desk()
    };
    let n = r.random_range(1..5);
    let m = r.random_range(1..9);
    Case {
        targets: random_proposals(&mut r, n, d_v, 4),
        candidates: random_proposals(&mut r, m, d_v, 4),
        params: params(&config, r.random()),
        config,
    }
}

fn run(c: &Case, targets: &[Proposal], candidates: &[Proposal]) -> (Matrix, Matrix) {
    let (out, cache) = stca_forward(
        &ProposalBlock::from_proposals(targets).unwrap(),
        &ProposalBlock::from_proposals(candidates).unwrap(),
        &c.params,
        &c.config,
    )
    .unwrap();
    (out, cache.attention().clone())
}

fn transform(ps: &[Proposal], s: f64, dx: f64, dy: f64) -> Vec<Proposal> {
    ps.iter()
        .map(|p| Proposal {
            bbox: p.bbox.scale_translate(s, dx, dy),
            ..p.clone()
        })
        .collect()
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (-200.0..200.0f64, -200.0..200.0f64, 0.5..50.0f64, 0.5..50.0f64)
        .prop_map(|(cx, cy, w, h)| BoundingBox::new(cx, cy, w, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>()) {
        let c = case(seed);
        let (_, w) = run(&c, &c.targets, &c.candidates);
        for i in 0..w.rows() {
            let row = w.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(seed in any::<u64>(), shift in -500.0..500.0f64, row in 0usize..4) {
        let mut r = rng(seed);
        let e = Matrix::gaussian(4, 7, 3.0, &mut r);
        let mut shifted = e.clone();
        for v in shifted.row_mut(row) {
            *v += shift;
        }
        prop_assert!(softmax_rows(&e).matrix().max_abs_diff(softmax_rows(&shifted).matrix()) < 1e-12);
    }

    #[test]
    fn candidate_order_does_not_matter(seed in any::<u64>()) {
        let c = case(seed);
        let mut shuffled = c.candidates.clone();
        shuffled.shuffle(&mut rng(seed ^ 1));
        let (a, _) = run(&c, &c.targets, &c.candidates);
        let (b, _) = run(&c, &c.targets, &shuffled);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn target_order_permutes_rows(seed in any::<u64>()) {
        let c = case(seed);
        let mut order: Vec<usize> = (0..c.targets.len()).collect();
        order.shuffle(&mut rng(seed ^ 2));
        let permuted: Vec<Proposal> = order.iter().map(|&i| c.targets[i].clone()).collect();
        let (a, _) = run(&c, &c.targets, &c.candidates);
        let (b, _) = run(&c, &permuted, &c.candidates);
        for (row, &i) in order.iter().enumerate() {
            for k in 0..a.cols() {
                prop_assert_eq!(b.get(row, k), a.get(i, k));
            }
        }
    }

    #[test]
    fn enhancement_is_a_convex_combination_of_candidates(seed in any::<u64>()) {
        let c = case(seed);
        let (out, w) = run(&c, &c.targets, &c.candidates);
        for i in 0..out.rows() {
            let row = w.row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..out.cols() {
                let rebuilt: f64 = row.iter().zip(&c.candidates).map(|(wj, g)| wj * g.feature[k]).sum();
                prop_assert!((out.get(i, k) - c.targets[i].feature[k] - rebuilt).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn operator_ignores_global_scale_and_translation(
        seed in any::<u64>(),
        s in 0.1..10.0f64,
        dx in -1000.0..1000.0f64,
        dy in -1000.0..1000.0f64,
    ) {
        let c = case(seed);
        let (a, wa) = run(&c, &c.targets, &c.candidates);
        let (b, wb) = run(&c, &transform(&c.targets, s, dx, dy), &transform(&c.candidates, s, dx, dy));
        prop_assert!(wa.max_abs_diff(&wb) < 1e-10);
        prop_assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn relation_ignores_scale_and_translation(
        pi in arb_box(),
        pj in arb_box(),
        s in 0.01..100.0f64,
        dx in -1e3..1e3f64,
        dy in -1e3..1e3f64,
    ) {
        let a = geometric_relation(&pi, &pj, 1e-3).0;
        let b = geometric_relation(&pi.scale_translate(s, dx, dy), &pj.scale_translate(s, dx, dy), 1e-3).0;
        for k in 0..4 {
            prop_assert!((a[k] - b[k]).abs() < 1e-9 * (1.0 + a[k].abs()), "{k}: {} vs {}", a[k], b[k]);
        }
        for k in 2..4 {
            prop_assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_boxes_negates_size_ratios(pi in arb_box(), pj in arb_box()) {
        let a = geometric_relation(&pi, &pj, 1e-3).0;
        let b = geometric_relation(&pj, &pi, 1e-3).0;
        prop_assert!((a[2] + b[2]).abs() < 1e-12);
        prop_assert!((a[3] + b[3]).abs() < 1e-12);
    }

    #[test]
    fn embeddings_stay_in_unit_range(
        r in -1e4..1e4f64,
        half in 1usize..16,
        tau in -10_000i64..10_000,
        pi in arb_box(),
        pj in arb_box(),
    ) {
        let in_range = |v: &[f64]| v.iter().all(|x| (-1.0..=1.0).contains(x));
        prop_assert!(in_range(&sinusoid_embed(r, 2 * half, 1000.0)));
        prop_assert!(in_range(&temporal_embed(tau, 2 * half, 1000.0).0));
        let rel = geometric_relation(&pi, &pj, 1e-3);
        prop_assert!(in_range(&spatial_embed(&rel, 2 * half, 1000.0).0));
    }

    #[test]
    fn opposite_offsets_flip_only_sines(tau in -5000i64..5000, half in 1usize..16) {
        let d = 2 * half;
        let a = temporal_embed(tau, d, 1000.0).0;
        let b = temporal_embed(-tau, d, 1000.0).0;
        for z in 0..half {
            prop_assert_eq!(a[2 * z], -b[2 * z]);
            prop_assert_eq!(a[2 * z + 1], b[2 * z + 1]);
        }
    }
}
