//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional and falls back to the desk defaults; unknown or repeated keys
//! are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use stca::pipeline::{Aggregation, TrainerConfig};
use stca::{AttentionVariant, StcaConfig};

use crate::error::{CliError, CliResult};
use crate::synth::SynthConfig;

/// Everything a command needs besides its input files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub stca: StcaConfig,
    pub trainer: TrainerConfig,
    pub synth: SynthConfig,
    pub aggregation: Aggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stca: StcaConfig::desk(),
            trainer: TrainerConfig::default(),
            synth: SynthConfig::default(),
            aggregation: Aggregation::TwoStage,
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn parse_aggregation(value: &str) -> Result<Aggregation, String> {
    match value {
        "two_stage" => Ok(Aggregation::TwoStage),
        "disabled" => Ok(Aggregation::Disabled),
        other => Err(format!("expected two_stage or disabled, got `{other}`")),
    }
}

fn aggregation_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::TwoStage => "two_stage",
        Aggregation::Disabled => "disabled",
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "d_v",
        "d_phi",
        "n_proposals",
        "window",
        "tau",
        "eps_geom",
        "eps_spatial",
        "sinusoid_base",
        "variant",
        "signed_tau",
        "share_query",
        "aggregation",
        "steps",
        "learning_rate",
        "lr_drop_step",
        "lr_drop_factor",
        "momentum",
        "weight_decay",
        "seed",
        "videos",
        "frames",
        "tracks",
        "classes",
        "reveal_prob",
        "reveal_strength",
        "noise",
        "separation",
        "drift",
        "eval_fraction",
        "data_seed",
    ];

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let s = &mut self.stca;
        let t = &mut self.trainer;
        let g = &mut self.synth;
        match key {
            "d_v" => s.d_v = parse(v)?,
            "d_phi" => s.d_phi = parse(v)?,
            "n_proposals" => s.n_proposals = parse(v)?,
            "window" => s.window = parse(v)?,
            "tau" => s.tau = parse(v)?,
            "eps_geom" => s.eps_geom = parse(v)?,
            "eps_spatial" => s.eps_spatial = parse(v)?,
            "sinusoid_base" => s.sinusoid_base = parse(v)?,
            "variant" => s.variant = parse::<AttentionVariant>(v)?,
            "signed_tau" => s.signed_tau = parse_bool(v)?,
            "share_query" => s.share_query = parse_bool(v)?,
            "aggregation" => self.aggregation = parse_aggregation(v)?,
            "steps" => t.steps = parse(v)?,
            "learning_rate" => t.learning_rate = parse(v)?,
            "lr_drop_step" => t.lr_drop_step = parse(v)?,
            "lr_drop_factor" => t.lr_drop_factor = parse(v)?,
            "momentum" => t.momentum = parse(v)?,
            "weight_decay" => t.weight_decay = parse(v)?,
            "seed" => t.seed = parse(v)?,
            "videos" => g.videos = parse(v)?,
            "frames" => g.frames = parse(v)?,
            "tracks" => g.tracks = parse(v)?,
            "classes" => g.classes = parse(v)?,
            "reveal_prob" => g.reveal_prob = parse(v)?,
            "reveal_strength" => g.reveal_strength = parse(v)?,
            "noise" => g.noise = parse(v)?,
            "separation" => g.separation = parse(v)?,
            "drift" => g.drift = parse(v)?,
            "eval_fraction" => g.eval_fraction = parse(v)?,
            "data_seed" => g.seed = parse(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses `text`; `origin` names the source in error messages.
    pub fn from_text(text: &str, origin: &str) -> CliResult<Self> {
        let err = |line: usize, message: String| CliError::Config {
            path: origin.to_string(),
            line,
            message,
        };
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) && Self::KEYS.contains(&key) {
                return Err(err(i + 1, format!("key `{key}` given twice")));
            }
            cfg.set(key, value).map_err(|m| err(i + 1, format!("{key}: {m}")))?;
        }
        cfg.validate().map_err(|m| err(0, m))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.stca.validate().map_err(|e| e.to_string())?;
        self.synth.validate(&self.stca)?;
        let t = &self.trainer;
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            return Err(format!("learning_rate must be non-negative, got {}", t.learning_rate));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(format!("momentum must lie in [0, 1), got {}", t.momentum));
        }
        if !(t.weight_decay.is_finite() && t.weight_decay >= 0.0) {
            return Err(format!("weight_decay must be non-negative, got {}", t.weight_decay));
        }
        Ok(())
    }

    /// Every key with its current value, parseable by [`RunConfig::from_text`].
    pub fn to_text(&self) -> String {
        let s = &self.stca;
        let t = &self.trainer;
        let g = &self.synth;
        let values: Vec<String> = vec![
            s.d_v.to_string(),
            s.d_phi.to_string(),
            s.n_proposals.to_string(),
            s.window.to_string(),
            s.tau.to_string(),
            s.eps_geom.to_string(),
            s.eps_spatial.to_string(),
            s.sinusoid_base.to_string(),
            s.variant.as_str().to_string(),
            s.signed_tau.to_string(),
            s.share_query.to_string(),
            aggregation_name(self.aggregation).to_string(),
            t.steps.to_string(),
            t.learning_rate.to_string(),
            t.lr_drop_step.to_string(),
            t.lr_drop_factor.to_string(),
            t.momentum.to_string(),
            t.weight_decay.to_string(),
            t.seed.to_string(),
            g.videos.to_string(),
            g.frames.to_string(),
            g.tracks.to_string(),
            g.classes.to_string(),
            g.reveal_prob.to_string(),
            g.reveal_strength.to_string(),
            g.noise.to_string(),
            g.separation.to_string(),
            g.drift.to_string(),
            g.eval_fraction.to_string(),
            g.seed.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_text("", "t").unwrap(), RunConfig::default());
    }

    #[test]
    fn text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.stca.window = 7;
        cfg.stca.variant = AttentionVariant::Spatial;
        cfg.trainer.learning_rate = 0.0123;
        cfg.aggregation = Aggregation::Disabled;
        cfg.synth.reveal_prob = 0.15;
        assert_eq!(RunConfig::from_text(&cfg.to_text(), "t").unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_line() {
        let err = RunConfig::from_text("# comment\nwindow = 3\nwindw = 5\n", "run.cfg").unwrap_err();
        match err {
            CliError::Config { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("windw"));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(RunConfig::from_text("windw = 5", "t").unwrap_err().exit_code(), 1);
    }

    #[test]
    fn malformed_values_are_rejected() {
        for text in [
            "window = four",
            "window = 4",
            "variant = attention",
            "momentum = 1.5",
            "steps",
        ] {
            assert!(RunConfig::from_text(text, "t").is_err(), "{text}");
        }
        assert!(RunConfig::from_text("seed = 1\nseed = 2", "t").is_err());
    }
}
