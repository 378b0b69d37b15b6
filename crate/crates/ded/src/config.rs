//! Run configuration: one TOML document holding every tunable default.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ded_core::analysis::AlignmentWindow;
use ded_core::dataset::SplitSpec;
use ded_core::engine::{FlagLevel, Thresholds};
use ded_core::learner::{DqnConfig, TabularConfig};
use ded_core::sc::EncoderConfig;
use ded_core::synth::CohortSpec;
use serde::{Deserialize, Serialize};

use crate::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `--seed` re-derives every component seed from it.
    pub seed: u64,
    pub thresholds: Thresholds,
    pub cohort: CohortSpec,
    pub behavior: BehaviorConfig,
    pub lifegate: LifeGateConfig,
    pub split: SplitSpec,
    pub encoder: EncoderConfig,
    pub dqn: DqnConfig,
    pub tabular: TabularConfig,
    pub analysis: AnalysisConfig,
    pub suite: SuiteConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            thresholds: Thresholds::default(),
            cohort: CohortSpec::default(),
            behavior: BehaviorConfig::default(),
            lifegate: LifeGateConfig::default(),
            split: SplitSpec::default(),
            encoder: EncoderConfig::default(),
            dqn: DqnConfig::default(),
            tabular: TabularConfig::default(),
            analysis: AnalysisConfig::default(),
            suite: SuiteConfig::default(),
        };
        cfg.reseed(0);
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Uniform,
    /// ε-greedy around the optimal R policy.
    EpsilonGreedy,
    /// Extra weight on actions that can enter a dead-end.
    HarmfulBiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorConfig {
    pub policy: BehaviorKind,
    pub epsilon: f64,
    pub bias: f64,
    pub n_trajectories: usize,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            policy: BehaviorKind::HarmfulBiased,
            epsilon: 0.3,
            bias: 4.0,
            n_trajectories: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifeGateConfig {
    /// Layout file; the shipped default when absent.
    pub layout: Option<PathBuf>,
    pub death_drift: f64,
    pub deadend_drift_right: f64,
    /// Episode cap for behavior rollouts.
    pub max_len: usize,
    /// Transitions in a generated offline dataset.
    pub n_transitions: usize,
}

impl Default for LifeGateConfig {
    fn default() -> Self {
        Self {
            layout: None,
            death_drift: 0.4,
            deadend_drift_right: 0.7,
            max_len: 2000,
            n_transitions: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Steps before the end covered by the emergence table.
    pub horizon: usize,
    pub window: AlignmentWindow,
    pub first_flag: FlagLevel,
    pub k_frac: f64,
    pub max_duration: usize,
    pub hist_bins: usize,
    /// Wall-clock hours per step, used only for labels.
    pub step_hours: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            horizon: 18,
            window: AlignmentWindow::default(),
            first_flag: FlagLevel::Yellow,
            k_frac: 0.2,
            max_duration: 18,
            hist_bins: 20,
            step_hours: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub cases: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { cases: 100 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).map_err(|e| ValidationError(format!("{}: {e}", path.display())).into())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ValidationError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the master seed and derives one seed per component from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.cohort.seed = seed;
        self.split.seed = seed.wrapping_add(1);
        self.encoder.seed = seed.wrapping_add(2);
        self.dqn.seed = seed.wrapping_add(3);
        self.tabular.seed = seed.wrapping_add(4);
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: ded_core::Error| ValidationError(e.to_string());
        self.thresholds.validate().map_err(invalid)?;
        self.cohort.validate().map_err(invalid)?;
        self.split.validate().map_err(invalid)?;
        self.encoder.validate().map_err(invalid)?;
        self.dqn.validate().map_err(invalid)?;
        let b = &self.behavior;
        if !(0.0..=1.0).contains(&b.epsilon) || !(b.bias >= 0.0) {
            return Err(ValidationError("behavior needs epsilon in [0, 1] and bias >= 0".into()).into());
        }
        let lg = &self.lifegate;
        if !(0.0..=1.0).contains(&lg.death_drift) || !(0.0..=1.0).contains(&lg.deadend_drift_right) || lg.max_len == 0 {
            return Err(ValidationError("lifegate drifts must lie in [0, 1] and max_len be positive".into()).into());
        }
        let a = &self.analysis;
        if !(a.k_frac > 0.0 && a.k_frac <= 1.0) || a.horizon == 0 || a.hist_bins == 0 {
            return Err(ValidationError("analysis needs k_frac in (0, 1] and positive horizon and bins".into()).into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[dqn]\nupdatez = 3\n").unwrap_err();
        assert!(err.downcast_ref::<ValidationError>().unwrap().0.contains("updatez"));
        assert!(RunConfig::parse("colour = 1\n").is_err());
    }

    #[test]
    fn partial_documents_keep_defaults() {
        let cfg = RunConfig::parse("[dqn]\nupdates = 10\n[thresholds.red]\nd = -0.3\nr = 0.7\n").unwrap();
        assert_eq!(cfg.dqn.updates, 10);
        assert_eq!(cfg.dqn.target_sync, 2000);
        assert_eq!(cfg.thresholds.red.d, -0.3);
        assert_eq!(cfg.thresholds.yellow.d, -0.15);
    }

    #[test]
    fn inconsistent_thresholds_fail_validation() {
        assert!(RunConfig::parse("[thresholds.red]\nd = -0.1\nr = 0.75\n").is_err());
    }

    #[test]
    fn reseed_derives_component_seeds() {
        let mut cfg = RunConfig::default();
        cfg.reseed(10);
        assert_eq!((cfg.cohort.seed, cfg.split.seed, cfg.dqn.seed), (10, 11, 13));
    }
}
