//! Run configuration: one TOML document with a block per subsystem. Every
//! field has a default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gradcheck::GradCheckConfig;
use crate::policy::{DatasetSpec, OptimizerConfig, StateSampler, TrainingConfig};
use crate::simulator::{EpisodeSettings, NavigationScenario, PlannerConfig, TrackingScenario, WorldConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Tracking,
    Navigation,
    Train,
    GradCheck,
    Bench,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Refiner,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub cycles: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { cycles: 300, seed: 1 }
    }
}

/// Dataset generation, training schedule and optimizer.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub dataset: DatasetSpec,
    /// Explicit sampler; derived from the planner limits when absent.
    pub sampler: Option<StateSampler>,
    pub schedule: TrainingConfig,
    pub optimizer: OptimizerConfig,
    /// Forest the dataset is drawn from.
    pub world_seed: u64,
    /// Seed of head initialization and batch shuffling.
    pub seed: u64,
    /// Frames held out for the cost comparison.
    pub holdout_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub backend: BackendKind,
    /// Serialized head used by the head backend.
    pub head: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub planner: PlannerConfig,
    pub episode: EpisodeSettings,
    pub world: WorldConfig,
    pub tracking: TrackingScenario,
    pub navigation: NavigationScenario,
    pub train: TrainBlock,
    pub grad_check: GradCheckConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::default(),
            backend: BackendKind::default(),
            head: None,
            seeds: (0..10).collect(),
            output: PathBuf::from("out"),
            planner: PlannerConfig::default(),
            episode: EpisodeSettings::default(),
            world: WorldConfig::default(),
            tracking: TrackingScenario::default(),
            navigation: NavigationScenario::default(),
            train: TrainBlock {
                dataset: DatasetSpec { area: [0.0, -22.0, 52.0, 22.0], ..Default::default() },
                world_seed: 3,
                seed: 5,
                holdout_frames: 20,
                ..Default::default()
            },
            grad_check: GradCheckConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.episode.sim.validate()?;
        self.episode.dynamics.validate()?;
        self.world.forest.validate()?;
        self.tracking.detection.validate()?;
        if let Some(s) = &self.train.sampler {
            s.validate()?;
        }
        if self.seeds.is_empty() && matches!(self.mode, RunMode::Tracking | RunMode::Navigation) {
            return Err(invalid("episode runs need at least one seed"));
        }
        if self.world.resolution <= 0.0 {
            return Err(invalid("world resolution must be positive"));
        }
        Ok(())
    }

    /// Sampler of the training block, or the planner-limit default.
    pub fn sampler(&self) -> Result<StateSampler> {
        match self.train.sampler {
            Some(s) => Ok(s),
            None => StateSampler::for_limits(self.planner.v_max, self.planner.a_max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("mode = \"tracking\"\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[planner]\nspeed_limit = 3\n").is_err());
    }

    #[test]
    fn partial_document_uses_defaults() {
        let cfg = RunConfig::from_toml("mode = \"navigation\"\n[planner]\nspeed = 8.0\n").unwrap();
        assert_eq!(cfg.mode, RunMode::Navigation);
        assert_eq!(cfg.planner.speed, 8.0);
        assert_eq!(cfg.planner.lattice, RunConfig::default().planner.lattice);
    }
}
