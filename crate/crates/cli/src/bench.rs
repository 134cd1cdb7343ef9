//! Per-key-frame inference timing across window sizes and proposal counts.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stca::pipeline::{Aggregation, Network, SlidingWindow};
use stca::{BoundingBox, FrameProposals, Proposal, StcaConfig};

use crate::error::CliResult;

pub const WINDOWS: [usize; 6] = [1, 7, 13, 19, 25, 31];
pub const PROPOSALS: [usize; 2] = [128, 300];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSettings {
    pub windows: Vec<usize>,
    pub proposals: Vec<usize>,
    pub warmup: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            windows: WINDOWS.to_vec(),
            proposals: PROPOSALS.to_vec(),
            warmup: 1,
            runs: 5,
            seed: 0,
        }
    }
}

/// One measured cell. `window == 0` is the head-only path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchCell {
    pub proposals: usize,
    pub window: usize,
    pub median_ms: f64,
    pub runs_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub d_v: usize,
    pub threads: usize,
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    /// Medians for `n` proposals in ascending window order, head-only row excluded.
    pub fn series(&self, n: usize) -> Vec<(usize, f64)> {
        let mut s: Vec<(usize, f64)> = self
            .cells
            .iter()
            .filter(|c| c.proposals == n && c.window > 0)
            .map(|c| (c.window, c.median_ms))
            .collect();
        s.sort_by_key(|&(t, _)| t);
        s
    }

    pub fn strictly_increasing(&self, n: usize) -> bool {
        self.series(n).windows(2).all(|w| w[1].1 > w[0].1)
    }

    /// Least-squares slope of median time against window size, in ms per frame of window.
    pub fn slope(&self, n: usize) -> f64 {
        let s = self.series(n);
        let k = s.len() as f64;
        let mx = s.iter().map(|p| p.0 as f64).sum::<f64>() / k;
        let my = s.iter().map(|p| p.1).sum::<f64>() / k;
        let num: f64 = s.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
        let den: f64 = s.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
        num / den
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut windows: Vec<usize> = self.cells.iter().map(|c| c.window).collect();
        windows.sort_unstable();
        windows.dedup();
        let mut ns: Vec<usize> = self.cells.iter().map(|c| c.proposals).collect();
        ns.sort_unstable();
        ns.dedup();
        writeln!(
            f,
            "median ms per key frame (d_v={}, threads={})",
            self.d_v, self.threads
        )?;
        write!(f, "{:>6}", "T")?;
        for n in &ns {
            write!(f, " {:>10}", format!("N={n}"))?;
        }
        writeln!(f)?;
        for t in windows {
            write!(f, "{t:>6}")?;
            for n in &ns {
                match self.cells.iter().find(|c| c.window == t && c.proposals == *n) {
                    Some(c) => write!(f, " {:>10.3}", c.median_ms)?,
                    None => write!(f, " {:>10}", "-")?,
                }
            }
            writeln!(f)?;
        }
        write!(f, "{:>6}", "slope")?;
        for n in &ns {
            write!(f, " {:>10.4}", self.slope(*n))?;
        }
        Ok(())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn random_sequence(rng: &mut ChaCha8Rng, frames: usize, n: usize, d_v: usize) -> Vec<FrameProposals> {
    (0..frames as i64)
        .map(|frame_id| FrameProposals {
            frame_id,
            proposals: (0..n)
                .map(|_| Proposal {
                    bbox: BoundingBox::new(
                        rng.random_range(0.0..600.0),
                        rng.random_range(0.0..400.0),
                        rng.random_range(10.0..120.0),
                        rng.random_range(10.0..120.0),
                    ),
                    frame_id,
                    feature: (0..d_v).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    objectness: 1.0,
                    label: None,
                })
                .collect(),
        })
        .collect()
}

struct Cell {
    proposals: usize,
    window: usize,
    sequence: usize,
    config: StcaConfig,
    net: Network,
}

/// Primes every cell's buffers, then times `detect` on consecutive key frames
/// in rounds that visit every cell once, alternating direction. Each timed
/// call pays for one new stage-2 unit and one stage-3 unit, and slow drift in
/// machine speed is spread over all cells instead of landing on a few.
pub fn run_bench(base: &StcaConfig, classes: usize, settings: &BenchSettings) -> CliResult<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let frames = settings.warmup + settings.runs + 2;
    let sequences: Vec<Vec<FrameProposals>> = settings
        .proposals
        .iter()
        .map(|&n| random_sequence(&mut rng, frames, n, base.d_v))
        .collect();
    let mut cells = Vec::new();
    for (sequence, &n) in settings.proposals.iter().enumerate() {
        for window in std::iter::once(0).chain(settings.windows.iter().copied()) {
            let config = StcaConfig {
                n_proposals: n,
                window: window.max(1),
                ..base.clone()
            };
            let aggregation = if window == 0 {
                Aggregation::Disabled
            } else {
                Aggregation::TwoStage
            };
            let net = Network::init(&config, classes, aggregation, settings.seed);
            cells.push(Cell {
                proposals: n,
                window,
                sequence,
                config,
                net,
            });
        }
    }

    let mut sessions = cells
        .iter()
        .map(|c| {
            let mut s = SlidingWindow::new(&sequences[c.sequence], &c.net, &c.config)?;
            s.detect(0)?;
            Ok(s)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut times = vec![Vec::with_capacity(settings.runs); cells.len()];
    for round in 0..settings.warmup + settings.runs {
        let order: Vec<usize> = if round % 2 == 0 {
            (0..cells.len()).collect()
        } else {
            (0..cells.len()).rev().collect()
        };
        for k in order {
            let start = Instant::now();
            let d = sessions[k].detect(round + 1)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(d);
            if round >= settings.warmup {
                times[k].push(ms);
            }
        }
    }
    drop(sessions);

    Ok(BenchReport {
        d_v: base.d_v,
        threads: stca::exec::current_threads(),
        cells: cells
            .iter()
            .zip(times)
            .map(|(c, runs_ms)| BenchCell {
                proposals: c.proposals,
                window: c.window,
                median_ms: median(&runs_ms),
                runs_ms,
            })
            .collect(),
    })
}
