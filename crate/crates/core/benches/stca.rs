use std::hint::black_box;
use std::time::{Duration, Instant};

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stca::attention::{stca_backward, stca_forward};
use stca::exec::with_threads;
use stca::pipeline::{Aggregation, Network, SlidingWindow};
use stca::{BoundingBox, FrameProposals, Matrix, Proposal, ProposalBlock, StcaConfig};

fn frame(rng: &mut ChaCha8Rng, t: i64, n: usize, d: usize) -> FrameProposals {
    FrameProposals {
        frame_id: t,
        proposals: (0..n)
            .map(|_| Proposal {
                bbox: BoundingBox::new(
                    rng.random_range(0.0..600.0),
                    rng.random_range(0.0..400.0),
                    rng.random_range(10.0..120.0),
                    rng.random_range(10.0..120.0),
                ),
                frame_id: t,
                feature: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                objectness: 1.0,
                label: None,
            })
            .collect(),
    }
}

fn video(len: usize, n: usize, d: usize) -> Vec<FrameProposals> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..len as i64).map(|t| frame(&mut rng, t, n, d)).collect()
}

/// `(label, threads)` pairs: a one-thread pool and the ambient pool.
fn modes() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("parallel", 0)]
}

fn operator(c: &mut Criterion) {
    let config = StcaConfig::desk();
    let net = Network::init(&config, 2, Aggregation::TwoStage, 1);
    let mut group = c.benchmark_group("operator");
    for &(n, t) in &[(128usize, 7usize), (300, 7)] {
        let seq = video(t, n, config.d_v);
        let blocks: Vec<_> = seq.iter().map(|f| ProposalBlock::from_frame(f).unwrap()).collect();
        let candidates = ProposalBlock::concat(&blocks.iter().collect::<Vec<_>>()).unwrap();
        let targets = &blocks[t / 2];
        let upstream = Matrix::from_vec(n, config.d_v, vec![1.0; n * config.d_v]).unwrap();
        for (label, threads) in modes() {
            let id = format!("{label}/N{n}xM{}", n * t);
            group.bench_function(BenchmarkId::new("forward", &id), |b| {
                with_threads(threads, || {
                    b.iter(|| stca_forward(black_box(targets), black_box(&candidates), &net.stage1, &config).unwrap())
                })
            });
            let (_, cache) = stca_forward(targets, &candidates, &net.stage1, &config).unwrap();
            group.bench_function(BenchmarkId::new("backward", &id), |b| {
                with_threads(threads, || {
                    b.iter(|| stca_backward(black_box(&cache), &upstream).unwrap())
                })
            });
        }
    }
    group.finish();
}

fn sliding_window(c: &mut Criterion) {
    let mut group = c.benchmark_group("key_frame");
    group.sample_size(10);
    for &(n, window) in &[(128usize, 7usize), (128, 31), (300, 7), (300, 31)] {
        let config = StcaConfig {
            n_proposals: n,
            window,
            ..StcaConfig::desk()
        };
        let net = Network::init(&config, 2, Aggregation::TwoStage, 1);
        let seq = video(4 * window, n, config.d_v);
        for (label, threads) in modes() {
            group.bench_function(BenchmarkId::new(label, format!("N{n}/T{window}")), |b| {
                with_threads(threads, || {
                    // steady state: one new stage-2 entry per key frame; priming is not timed
                    b.iter_custom(|iters| {
                        let mut total = Duration::ZERO;
                        let mut done = 0;
                        while done < iters {
                            let mut session = SlidingWindow::new(&seq, &net, &config).unwrap();
                            session.detect(window).unwrap();
                            for key in window + 1..seq.len() {
                                if done == iters {
                                    break;
                                }
                                let start = Instant::now();
                                black_box(session.detect(key).unwrap());
                                total += start.elapsed();
                                done += 1;
                            }
                        }
                        total
                    })
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, operator, sliding_window);
criterion_main!(benches);
