//! Single-file run configuration.
//!
//! One TOML document drives every subcommand: sections for the task, the
//! model architecture, data generation, SFT, preference training, sweeps,
//! and output locations. Every field has a default — an empty file (or no
//! `--config` at all) is the frozen desk-scale configuration — and
//! command-line flags override file values. Unknown keys are rejected so a
//! typo cannot silently fall back to a default.
//!
//! All stage seeds are derived from the single root `seed`, so two runs of
//! the same configuration produce byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use polydpo::dataset::Regime;
use polydpo::denoiser::DenoiserConfig;
use polydpo::eval::{SweepOptions, DEFAULT_ALPHA_GRID, DEFAULT_FLATNESS_REL_TOL};
use polydpo::schedule::{ScheduleKind, WeightMode};
use polydpo::task::TaskDescriptor;
use polydpo::trainer::{SftMode, TrainerConfig};
use polydpo::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub task: TaskDescriptor,
    pub model: DenoiserConfig,
    pub data: DataSection,
    pub sft: SftSection,
    pub trainer: TrainerSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: TaskDescriptor::default(),
            model: DenoiserConfig::default(),
            data: DataSection::default(),
            sft: SftSection::default(),
            trainer: TrainerSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub regime: Regime,
    pub n_pairs: usize,
    /// Consistency target for the conflicting regime.
    pub target_consistency: f64,
    /// Batch size for the over-simple regime's within-batch shuffle.
    pub shuffle_batch: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            regime: Regime::Clean,
            n_pairs: 600,
            target_consistency: 0.21,
            shuffle_batch: 8,
        }
    }
}

/// Supervised fine-tuning settings; everything else (batch size, schedule,
/// SFT mode) comes from the `[trainer]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSection {
    pub n_steps: usize,
    pub learning_rate: f64,
}

impl Default for SftSection {
    fn default() -> Self {
        SftSection { n_steps: 10_000, learning_rate: 2e-3 }
    }
}

/// Preference-training settings. This mirrors the library's trainer
/// configuration minus its seed, which the CLI always derives from the
/// root seed rather than reading from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub beta: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub n_steps: usize,
    pub batch_size: usize,
    pub schedule: ScheduleKind,
    pub weight_mode: WeightMode,
    pub sft_mode: SftMode,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            beta: 500.0,
            alpha: 0.0,
            learning_rate: 2e-4,
            n_steps: 400,
            batch_size: 32,
            schedule: ScheduleKind::Cosine,
            weight_mode: WeightMode::Constant,
            sft_mode: SftMode::WinnerOnly,
        }
    }
}

impl TrainerSection {
    /// Builds the library trainer configuration with an explicit seed.
    pub fn to_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            beta: self.beta,
            alpha: self.alpha,
            learning_rate: self.learning_rate,
            n_steps: self.n_steps,
            batch_size: self.batch_size,
            seed,
            schedule: self.schedule,
            weight_mode: self.weight_mode,
            sft_mode: self.sft_mode,
        }
    }
}

/// α-sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Vec<f64>,
    pub n_seeds: usize,
    pub n_eval_per_condition: usize,
    pub rel_tol: f64,
    pub workers: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            grid: DEFAULT_ALPHA_GRID.to_vec(),
            n_seeds: 3,
            n_eval_per_condition: 128,
            rel_tol: DEFAULT_FLATNESS_REL_TOL,
            workers: 1,
        }
    }
}

impl SweepSection {
    pub fn options(&self) -> SweepOptions {
        SweepOptions {
            n_eval_per_condition: self.n_eval_per_condition,
            rel_tol: self.rel_tol,
            workers: self.workers,
        }
    }
}

/// Where artifacts land when a subcommand is not given an explicit path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs") }
    }
}

impl RunConfig {
    /// Reads and validates a TOML configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        if self.model.dim != self.task.dim {
            return Err(Error::Config(format!(
                "model dimension {} does not match task dimension {}",
                self.model.dim, self.task.dim
            )));
        }
        if self.model.n_conditions != self.task.n_conditions {
            return Err(Error::Config(format!(
                "model has {} condition embeddings, task has {} conditions",
                self.model.n_conditions, self.task.n_conditions
            )));
        }
        if self.data.n_pairs == 0 {
            return Err(Error::Config("data.n_pairs must be at least 1".into()));
        }
        if !(self.data.target_consistency > 0.0 && self.data.target_consistency < 1.0) {
            return Err(Error::Config(format!(
                "data.target_consistency must lie strictly between 0 and 1, got {}",
                self.data.target_consistency
            )));
        }
        if self.data.shuffle_batch < 2 {
            return Err(Error::Config("data.shuffle_batch must be at least 2".into()));
        }
        if self.sft.n_steps == 0 {
            return Err(Error::Config("sft.n_steps must be at least 1".into()));
        }
        if !(self.sft.learning_rate.is_finite() && self.sft.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "sft.learning_rate must be positive, got {}",
                self.sft.learning_rate
            )));
        }
        self.trainer.to_config(self.seed).validate()?;
        if self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep.grid must not be empty".into()));
        }
        if self.sweep.grid.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("sweep.grid entries must be finite".into()));
        }
        if self.sweep.n_seeds == 0 {
            return Err(Error::Config("sweep.n_seeds must be at least 1".into()));
        }
        self.sweep.options().validate()?;
        Ok(())
    }
}

/// Parses a regime name as it appears in configuration files and dataset
/// headers: `clean`, `conflicting`, or `oversimple`.
pub fn parse_regime(s: &str) -> Result<Regime> {
    serde_json::from_str(&format!("{s:?}")).map_err(|_| {
        Error::Config(format!(
            "unknown regime {s:?}; expected clean, conflicting, or oversimple"
        ))
    })
}

/// The regime's canonical lowercase name, matching [`parse_regime`].
pub fn regime_name(regime: Regime) -> &'static str {
    match regime {
        Regime::Clean => "clean",
        Regime::Conflicting => "conflicting",
        Regime::Oversimple => "oversimple",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_canonically() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(toml::to_string_pretty(&parsed).unwrap(), text);
    }

    #[test]
    fn empty_file_is_the_default_configuration() {
        let parsed: RunConfig = toml::from_str("").unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[trainer]\nbogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[data]\nn_pair = 5").is_err());
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let mut cfg = RunConfig::default();
        cfg.trainer.beta = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.data.target_consistency = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.model.dim = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.sweep.grid.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn regime_names_round_trip() {
        for regime in [Regime::Clean, Regime::Conflicting, Regime::Oversimple] {
            assert_eq!(parse_regime(regime_name(regime)).unwrap(), regime);
        }
        assert!(parse_regime("pristine").is_err());
    }
}
