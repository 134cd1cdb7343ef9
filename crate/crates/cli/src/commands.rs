//! Command implementations. Each returns its result instead of printing so
//! the binary and the tests share one code path.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::Serialize;
use stca::oracle::{default_cases, naive_infer, run_gradcheck, GradCheckReport, GradCheckSettings, GradFault};
use stca::pipeline::{posteriors, train, Aggregation, Network, SlidingWindow};
use stca::{AttentionVariant, Matrix, StcaConfig};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{read_dataset, write_dataset, Dataset};
use crate::error::{CliError, CliResult};
use crate::eval::{evaluate, read_detections, DetectionRecord, EvalReport, ProposalOutput};
use crate::synth::{bayes_accuracy, generate};

/// Rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Head on raw proposal features.
    A,
    /// Semantic logits only, window 1.
    B,
    /// Semantic logits only.
    C,
    /// Semantic and spatial logits.
    D,
    /// Semantic, spatial and temporal logits.
    E,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Self::A, Self::B, Self::C, Self::D, Self::E];

    pub fn letter(self) -> char {
        match self {
            Self::A => 'a',
            Self::B => 'b',
            Self::C => 'c',
            Self::D => 'd',
            Self::E => 'e',
        }
    }

    /// mAP of the full-scale detector for the same row, shown for context.
    pub fn reference_map(self) -> f64 {
        match self {
            Self::A => 74.5,
            Self::B => 77.4,
            Self::C => 79.3,
            Self::D => 79.8,
            Self::E => 80.3,
        }
    }

    pub fn apply(self, config: &RunConfig) -> RunConfig {
        let mut out = config.clone();
        out.aggregation = Aggregation::TwoStage;
        match self {
            Self::A => out.aggregation = Aggregation::Disabled,
            Self::B => {
                out.stca.variant = AttentionVariant::Semantic;
                out.stca.window = 1;
            }
            Self::C => out.stca.variant = AttentionVariant::Semantic,
            Self::D => out.stca.variant = AttentionVariant::Spatial,
            Self::E => out.stca.variant = AttentionVariant::Full,
        }
        out
    }
}

/// Reads and validates a run configuration, or returns the defaults.
pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    check_config(&config, path)?;
    Ok(config)
}

pub fn check_config(config: &RunConfig, path: Option<&Path>) -> CliResult<()> {
    config.validate().map_err(|message| CliError::Config {
        path: path.map_or_else(|| "<defaults>".into(), |p| p.display().to_string()),
        line: 0,
        message,
    })
}

fn require_finite(m: &Matrix, what: &str) -> CliResult<()> {
    if m.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("non-finite {what}")))
    }
}

pub struct GenSummary {
    pub videos: usize,
    pub frames: usize,
    pub bayes_single: f64,
    pub bayes_window: f64,
}

impl fmt::Display for GenSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wrote {} videos, {} frames\nBayes accuracy: single frame {:.4}, neighbors within 1 frame {:.4}",
            self.videos, self.frames, self.bayes_single, self.bayes_window
        )
    }
}

pub fn cmd_gen(config: &RunConfig, out: &Path) -> CliResult<GenSummary> {
    let synthetic = generate(&config.synth, &config.stca);
    write_dataset(out, &synthetic.dataset)?;
    Ok(GenSummary {
        videos: synthetic.dataset.videos.len(),
        frames: synthetic.dataset.frame_count(),
        bayes_single: bayes_accuracy(&synthetic, &config.synth, 0),
        bayes_window: bayes_accuracy(&synthetic, &config.synth, 1),
    })
}

/// The training and held-out parts of a dataset under `config`.
pub fn split(config: &RunConfig, data: &Dataset) -> (Dataset, Dataset) {
    data.split(config.synth.held_out_of(data.videos.len()))
}

/// Fresh initialization followed by `config.trainer.steps` steps on `data`.
pub fn train_network(config: &RunConfig, data: &Dataset) -> CliResult<(Network, Vec<f64>)> {
    let mut net = Network::init(
        &config.stca,
        config.synth.classes,
        config.aggregation,
        config.trainer.seed,
    );
    if config.trainer.steps == 0 {
        return Ok((net, Vec::new()));
    }
    let losses = train(&data.sequences(), &mut net, &config.stca, &config.trainer, |_, _| {})?;
    Ok((net, losses))
}

pub fn loss_log_path(params_out: &Path) -> PathBuf {
    let mut s = params_out.as_os_str().to_owned();
    s.push(".losses.csv");
    PathBuf::from(s)
}

pub fn loss_csv(config: &RunConfig, losses: &[f64]) -> String {
    let mut out = String::from("step,learning_rate,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{l}", config.trainer.learning_rate_at(i));
    }
    out
}

pub struct TrainSummary {
    pub videos: usize,
    pub losses: Vec<f64>,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trained on {} videos for {} steps", self.videos, self.losses.len())?;
        if let (Some(first), true) = (self.losses.first(), self.losses.len() >= 100) {
            let tail = &self.losses[self.losses.len() - 100..];
            let last = tail.iter().sum::<f64>() / tail.len() as f64;
            write!(f, "\nloss {first:.4} at step 0, {last:.4} over the last 100 steps")?;
        }
        write!(
            f,
            "\ncheckpoint {}\nloss log {}",
            self.checkpoint.display(),
            self.loss_log.display()
        )
    }
}

/// Trains on the non-held-out videos of `data`, then writes the checkpoint
/// to `out` and the per-step losses next to it.
pub fn cmd_train(config: &RunConfig, data: &Path, out: &Path) -> CliResult<TrainSummary> {
    let dataset = read_dataset(data, &config.stca)?;
    let (train_set, _) = split(config, &dataset);
    let (network, losses) = train_network(config, &train_set)?;
    let checkpoint = Checkpoint {
        config: config.clone(),
        network,
    };
    checkpoint.save(out)?;
    let loss_log = loss_log_path(out);
    std::fs::write(&loss_log, loss_csv(config, &losses)).map_err(|e| CliError::io(&loss_log, e))?;
    Ok(TrainSummary {
        videos: train_set.videos.len(),
        losses,
        checkpoint: out.to_path_buf(),
        loss_log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InferMode {
    /// Recompute every key frame from scratch instead of using the buffers.
    pub naive: bool,
    /// Keep the `k` strongest links per target proposal.
    pub dump_attention: Option<usize>,
}

fn output_rows(posteriors: &Matrix, labels: Vec<usize>) -> Vec<ProposalOutput> {
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| ProposalOutput {
            posterior: posteriors.row(i).to_vec(),
            label,
        })
        .collect()
}

fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect()
}

/// Detections for every frame of every video.
pub fn detect_dataset(
    data: &Dataset,
    net: &Network,
    stca: &StcaConfig,
    mode: InferMode,
) -> CliResult<Vec<DetectionRecord>> {
    if mode.naive && mode.dump_attention.is_some() {
        return Err(CliError::Usage(
            "--dump-attention needs the buffered path, not --naive-oracle".into(),
        ));
    }
    let mut out = Vec::with_capacity(data.frame_count());
    for video in &data.videos {
        if mode.naive {
            for d in naive_infer(&video.frames, net, stca)? {
                require_finite(&d.logits, "logits")?;
                let p = posteriors(&d.logits);
                out.push(DetectionRecord {
                    video_id: video.id.clone(),
                    frame_id: d.frame_id,
                    proposals: output_rows(&p, argmax_rows(&p)),
                    attention: None,
                });
            }
            continue;
        }
        let mut session = SlidingWindow::new(&video.frames, net, stca)?;
        if let Some(k) = mode.dump_attention {
            session = session.with_attention_dump(k);
        }
        while let Some(d) = session.step() {
            let d = d?;
            require_finite(&d.logits, "logits")?;
            out.push(DetectionRecord::from_detection(&video.id, &d));
        }
    }
    Ok(out)
}

pub struct InferOptions<'a> {
    /// Overrides the configuration stored in the checkpoint.
    pub config: Option<RunConfig>,
    pub data: &'a Path,
    pub params: &'a Path,
    pub window: Option<usize>,
    pub variant: Option<Variant>,
    pub mode: InferMode,
}

pub fn cmd_infer(opts: &InferOptions<'_>) -> CliResult<Vec<DetectionRecord>> {
    let checkpoint = Checkpoint::load(opts.params)?;
    let mut config = opts.config.clone().unwrap_or_else(|| checkpoint.config.clone());
    if let Some(v) = opts.variant {
        config = v.apply(&config);
    }
    if let Some(t) = opts.window {
        config.stca.window = t;
    }
    config.stca.validate()?;
    checkpoint.network.validate(&config.stca).map_err(|e| CliError::Data {
        path: opts.params.display().to_string(),
        line: 0,
        message: format!("checkpoint does not fit the configuration: {e}"),
    })?;
    let data = read_dataset(opts.data, &config.stca)?;
    detect_dataset(&data, &checkpoint.network, &config.stca, opts.mode)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub window: usize,
    pub semantic: bool,
    pub spatial: bool,
    pub temporal: bool,
    pub accuracy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub train_videos: usize,
    pub eval_videos: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn accuracy(&self, v: Variant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == v).map(|r| r.accuracy)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |b: bool| if b { "x" } else { "" };
        writeln!(
            f,
            "trained on {} videos, evaluated on {}",
            self.train_videos, self.eval_videos
        )?;
        writeln!(
            f,
            "{:<8} {:>3} {:>8} {:>7} {:>8} {:>9} {:>10}",
            "method", "T", "semantic", "spatial", "temporal", "accuracy", "ref mAP"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:>3} {:>8} {:>7} {:>8} {:>9.4} {:>10.1}",
                format!("({})", r.variant.letter()),
                r.window,
                mark(r.semantic),
                mark(r.spatial),
                mark(r.temporal),
                r.accuracy,
                r.variant.reference_map()
            )?;
        }
        write!(f, "ref mAP: full-scale detector on real video, for context only")
    }
}

fn mean_tail(losses: &[f64], n: usize) -> f64 {
    let tail = &losses[losses.len().saturating_sub(n)..];
    if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Trains and scores one variant on a train/held-out split.
pub fn run_variant(
    config: &RunConfig,
    variant: Variant,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> CliResult<AblationRow> {
    let cfg = variant.apply(config);
    let (net, losses) = train_network(&cfg, train_set)?;
    let detections = detect_dataset(eval_set, &net, &cfg.stca, InferMode::default())?;
    let report = evaluate(&detections, eval_set)?;
    let aggregated = cfg.aggregation == Aggregation::TwoStage;
    Ok(AblationRow {
        variant,
        window: if aggregated { cfg.stca.window } else { 1 },
        semantic: aggregated,
        spatial: aggregated && cfg.stca.variant.uses_spatial(),
        temporal: aggregated && cfg.stca.variant.uses_temporal(),
        accuracy: report.accuracy(),
        initial_loss: losses.first().copied().unwrap_or(f64::NAN),
        final_loss: mean_tail(&losses, 100),
    })
}

pub fn ablate(config: &RunConfig, data: &Dataset) -> CliResult<AblationTable> {
    let (train_set, eval_set) = split(config, data);
    if eval_set.videos.is_empty() {
        return Err(CliError::Config {
            path: "<config>".into(),
            line: 0,
            message: "eval_fraction leaves no held-out videos".into(),
        });
    }
    let rows = Variant::ALL
        .iter()
        .map(|&v| run_variant(config, v, &train_set, &eval_set))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(AblationTable {
        train_videos: train_set.videos.len(),
        eval_videos: eval_set.videos.len(),
        rows,
    })
}

pub fn cmd_ablate(config: &RunConfig, data: &Path) -> CliResult<AblationTable> {
    let dataset = read_dataset(data, &config.stca)?;
    ablate(config, &dataset)
}

/// Gradient comparison over the default configuration matrix. `fault`
/// perturbs one analytic entry, for exercising the failure path.
pub fn cmd_gradcheck(seed: u64, fault: Option<&GradFault>) -> CliResult<GradCheckReport> {
    Ok(run_gradcheck(
        &default_cases(seed),
        &GradCheckSettings::default(),
        fault,
    )?)
}

pub fn cmd_eval(config: &RunConfig, data: &Path, detections: &Path) -> CliResult<EvalReport> {
    let dataset = read_dataset(data, &config.stca)?;
    let records = read_detections(detections)?;
    evaluate(&records, &dataset)
}
