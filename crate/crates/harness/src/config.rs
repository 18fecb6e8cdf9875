//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use metabeam_core::environment::{CurveSpec, EnvConfig, PendulumConfig};
use metabeam_core::learner::TrainConfig;
use metabeam_core::meta::{HeuristicConfig, MetaConfig};
use metabeam_core::planner::{BeamConfig, PlanOptions};
use metabeam_core::valuenet::CriticConfig;
use metabeam_core::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ddqn,
    Transformer,
    BeamFixed,
    Meta,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ddqn => "ddqn",
            Variant::Transformer => "transformer",
            Variant::BeamFixed => "beam_fixed",
            Variant::Meta => "meta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum EnvSection {
    Manipulator {
        #[serde(default)]
        config: EnvConfig,
        curve: CurveSpec,
    },
    Pendulum {
        #[serde(default)]
        config: PendulumConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub env: EnvSection,
    #[serde(default)]
    pub critic: CriticConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Required for `beam_fixed`.
    #[serde(default)]
    pub planner: Option<BeamConfig>,
    /// How the beam planner ranks prefixes; used by every planning variant.
    #[serde(default)]
    pub plan: PlanOptions,
    /// Required for `meta`.
    #[serde(default)]
    pub meta: Option<MetaConfig>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Record wall-clock time per episode. Off keeps the CSV byte-stable.
    #[serde(default)]
    pub timing: bool,
    /// Write per-step telemetry to `steps.csv`.
    #[serde(default)]
    pub steps_csv: bool,
    /// Save a critic checkpoint every this many episodes.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "need at least one seed"));
        }
        if self.episodes == 0 {
            return Err(ConfigError::invalid("episodes", "must be positive"));
        }
        match &self.env {
            EnvSection::Manipulator { config, curve } => {
                config.validate()?;
                curve.validate()?;
            }
            EnvSection::Pendulum { config } => config.validate()?,
        }
        self.critic.validate()?;
        self.train.validate()?;
        match self.variant {
            Variant::Transformer if !matches!(self.critic, CriticConfig::Transformer(_)) => {
                return Err(ConfigError::invalid("critic", "variant transformer needs a transformer critic"));
            }
            Variant::BeamFixed => match self.planner {
                None => return Err(ConfigError::invalid("planner", "variant beam_fixed needs a planner section")),
                Some(b) => b.validate(usize::MAX, usize::MAX)?,
            },
            Variant::Meta => match &self.meta {
                None => return Err(ConfigError::invalid("meta", "variant meta needs a meta section")),
                Some(m) => m.validate()?,
            },
            _ => {}
        }
        if self.checkpoint_every == Some(0) {
            return Err(ConfigError::invalid("checkpoint_every", "must be positive"));
        }
        Ok(())
    }
}

/// Frequency sweep of the pendulum task under the heuristic beam rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default)]
    pub pendulum: PendulumConfig,
    #[serde(default = "default_frequencies")]
    pub frequencies: Vec<f64>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub critic: CriticConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub heuristic: HeuristicConfig,
    #[serde(default)]
    pub plan: PlanOptions,
    pub episodes: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Random-action episodes per frequency used to calibrate `eps_ref`.
    #[serde(default = "default_calibration_episodes")]
    pub calibration_episodes: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

fn default_frequencies() -> Vec<f64> {
    vec![0.2, 0.5, 0.75, 1.0, 1.5, 2.0]
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_eval_episodes() -> usize {
    5
}

fn default_calibration_episodes() -> usize {
    1
}

impl AblationConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.frequencies.len() < 2 || self.frequencies.iter().any(|f| !(*f > 0.0)) {
            return Err(ConfigError::invalid("frequencies", "need at least two positive frequencies"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "need at least one seed"));
        }
        if self.episodes == 0 || self.eval_episodes == 0 {
            return Err(ConfigError::invalid("episodes", "must be positive"));
        }
        self.pendulum.validate()?;
        self.critic.validate()?;
        self.train.validate()
    }
}

/// Fixed-beam trade-off table over the sandbox reference shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxConfig {
    #[serde(default)]
    pub pendulum: PendulumConfig,
    #[serde(default)]
    pub shapes: SandboxShapes,
    #[serde(default = "default_beams")]
    pub beams: Vec<BeamConfig>,
    #[serde(default)]
    pub plan: PlanOptions,
    #[serde(default)]
    pub critic: CriticConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Training episodes per shape.
    pub episodes: usize,
    /// Train a separate critic with each beam as the behaviour policy
    /// instead of one greedy-trained critic shared by every row.
    #[serde(default)]
    pub train_per_beam: bool,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

fn default_beams() -> Vec<BeamConfig> {
    vec![BeamConfig::new(1, 1), BeamConfig::new(2, 3), BeamConfig::new(4, 6), BeamConfig::new(5, 6)]
}

fn default_threshold() -> f64 {
    0.1
}

/// Reference parameters standing in for the three curve types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxShapes {
    pub amplitude: f64,
    pub single_curve_frequency: f64,
    pub wave_frequency: f64,
    pub wave_ratio: f64,
}

impl Default for SandboxShapes {
    fn default() -> Self {
        Self { amplitude: 0.5, single_curve_frequency: 0.2, wave_frequency: 0.3, wave_ratio: 2.7 }
    }
}

impl SandboxConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.beams.is_empty() {
            return Err(ConfigError::invalid("beams", "need at least one beam"));
        }
        for b in &self.beams {
            b.validate(usize::MAX, usize::MAX)?;
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "need at least one seed"));
        }
        if self.episodes == 0 || self.eval_episodes == 0 {
            return Err(ConfigError::invalid("episodes", "must be positive"));
        }
        if !(self.threshold > 0.0) {
            return Err(ConfigError::invalid("threshold", "must be positive"));
        }
        self.pendulum.validate()?;
        self.critic.validate()?;
        self.train.validate()
    }
}
