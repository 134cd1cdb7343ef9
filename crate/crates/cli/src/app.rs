//! Argument parsing and dispatch for the `stca` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use stca::exec;

use crate::bench::{run_bench, BenchSettings};
use crate::commands::{
    check_config, cmd_ablate, cmd_eval, cmd_gen, cmd_gradcheck, cmd_infer, cmd_train, load_config, InferMode,
    InferOptions, Variant,
};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::eval::write_detections;

#[derive(Debug, Parser)]
#[command(
    name = "stca",
    version,
    about = "Spatio-temporal context aggregation over region proposals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (`key = value` lines); desk defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, value_name = "INT", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Generator seed.
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
    },
    /// Train on the non-held-out videos and write a checkpoint plus `<out>.losses.csv`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Initialization and sampling seed.
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Write per-proposal posteriors for every frame.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        params: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Odd inference window; defaults to the checkpoint's.
        #[arg(long, value_name = "INT")]
        window: Option<usize>,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        /// Recompute every key frame without buffers.
        #[arg(long)]
        naive_oracle: bool,
        /// Record the k strongest attention links per proposal.
        #[arg(long, value_name = "INT")]
        dump_attention: Option<usize>,
    },
    /// Train and score variants (a) to (e).
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Also write the table as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
    },
    /// Time inference per key frame across window sizes and proposal counts.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Also write the measurements as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "INT", default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Also write the report as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "INT", default_value_t = 0)]
        seed: u64,
    },
    /// Score a detections file against dataset labels.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        detections: PathBuf,
        /// Also write the report as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e.into()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn config_with(common: &Common, edit: impl FnOnce(&mut RunConfig)) -> CliResult<RunConfig> {
    let mut config = load_config(common.config.as_deref())?;
    edit(&mut config);
    check_config(&config, common.config.as_deref())?;
    Ok(config)
}

fn execute(command: Command, out: &mut dyn Write) -> CliResult<()> {
    let mut say = |text: String| {
        let _ = writeln!(out, "{text}");
    };
    match command {
        Command::Gen {
            common,
            out: path,
            seed,
        } => {
            let config = config_with(&common, |c| {
                if let Some(s) = seed {
                    c.synth.seed = s;
                }
            })?;
            say(cmd_gen(&config, &path)?.to_string());
        }
        Command::Train {
            common,
            data,
            out: path,
            seed,
            variant,
        } => {
            let config = config_with(&common, |c| {
                if let Some(s) = seed {
                    c.trainer.seed = s;
                }
                if let Some(v) = variant {
                    *c = v.apply(c);
                }
            })?;
            let summary = exec::with_threads(common.threads, || cmd_train(&config, &data, &path))?;
            say(summary.to_string());
        }
        Command::Infer {
            common,
            data,
            params,
            out: path,
            window,
            variant,
            naive_oracle,
            dump_attention,
        } => {
            if window.is_some_and(|t| t % 2 == 0) {
                return Err(CliError::Usage(format!(
                    "--window must be odd, got {}",
                    window.unwrap_or(0)
                )));
            }
            let config = common.config.as_deref().map(|p| load_config(Some(p))).transpose()?;
            let opts = InferOptions {
                config,
                data: &data,
                params: &params,
                window,
                variant,
                mode: InferMode {
                    naive: naive_oracle,
                    dump_attention,
                },
            };
            let records = exec::with_threads(common.threads, || cmd_infer(&opts))?;
            write_detections(&path, &records)?;
            say(format!("wrote {} key frames to {}", records.len(), path.display()));
        }
        Command::Ablate {
            common,
            data,
            out: path,
            seed,
        } => {
            let config = config_with(&common, |c| {
                if let Some(s) = seed {
                    c.trainer.seed = s;
                }
            })?;
            let table = exec::with_threads(common.threads, || cmd_ablate(&config, &data))?;
            if let Some(p) = path {
                write_json(&p, &table)?;
            }
            say(table.to_string());
        }
        Command::Bench {
            common,
            out: path,
            seed,
        } => {
            let config = config_with(&common, |_| {})?;
            let settings = BenchSettings {
                seed,
                ..BenchSettings::default()
            };
            let report = exec::with_threads(common.threads, || {
                run_bench(&config.stca, config.synth.classes, &settings)
            })?;
            if let Some(p) = path {
                write_json(&p, &report)?;
            }
            say(report.to_string());
        }
        Command::Gradcheck {
            common,
            out: path,
            seed,
        } => {
            let report = exec::with_threads(common.threads, || cmd_gradcheck(seed, None))?;
            if let Some(p) = path {
                write_json(&p, &report)?;
            }
            say(report.to_string());
            if !report.pass {
                return Err(CliError::Numerical(format!(
                    "gradient check failed: max relative error {:.3e}",
                    report.max_rel_err
                )));
            }
        }
        Command::Eval {
            common,
            data,
            detections,
            out: path,
        } => {
            let config = config_with(&common, |_| {})?;
            let report = cmd_eval(&config, &data, &detections)?;
            if let Some(p) = path {
                write_json(&p, &report)?;
            }
            say(report.to_string());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
