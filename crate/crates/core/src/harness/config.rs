//! Experiment configuration (TOML).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{DqnConfig, EpsilonSchedule};
use crate::env::Environment;
use crate::reflection::TaskCategory;
use crate::registry::{Registry, SkillProfile, DEFAULT_SIGMA};
use crate::sim::PromptGenerator;
use crate::{Error, Result};

/// Profile override for one expert. Missing failure entries default to
/// `(10 - mean) / 20`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertProfileConfig {
    pub means: BTreeMap<TaskCategory, f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub failure: BTreeMap<TaskCategory, f64>,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub total_steps: u64,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    pub target_sync_interval: u64,
    pub exploration_fraction: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    pub t_max: u32,
    pub step_penalty: f64,
    pub hidden: Vec<usize>,
    pub taxonomy: Vec<TaskCategory>,
    /// Twelve profiles in registry order; empty means the built-in defaults.
    pub experts: Vec<ExpertProfileConfig>,
    pub train_prompts: usize,
    pub eval_prompts: usize,
    pub difficulty_min: usize,
    pub difficulty_max: usize,
    /// Share of corpus prompts that start from an input image.
    pub edit_fraction: f64,
    /// Text-to-image expert used by editing-only baselines for the first step.
    pub baseline_default_t2i: usize,
    /// Editing expert used by generation-only baselines without a counterpart.
    pub baseline_default_i2i: usize,
    /// `[t2i, i2i]` pairs that are the same backend in both modalities.
    pub counterparts: Vec<[usize; 2]>,
    /// Checkpoint every this many steps during training (0: final only).
    pub checkpoint_every: u64,
}

impl Default for Config {
    fn default() -> Self {
        let dqn = DqnConfig::default();
        Config {
            seed: 0,
            total_steps: 1000,
            gamma: dqn.gamma,
            lr: dqn.lr,
            batch_size: dqn.batch_size,
            buffer_capacity: dqn.buffer_capacity,
            learning_starts: dqn.learning_starts,
            target_sync_interval: dqn.target_sync_interval,
            exploration_fraction: dqn.exploration_fraction,
            epsilon_initial: dqn.epsilon_initial,
            epsilon_final: dqn.epsilon_final,
            t_max: crate::env::DEFAULT_T_MAX,
            step_penalty: crate::env::DEFAULT_STEP_PENALTY,
            hidden: dqn.hidden,
            taxonomy: TaskCategory::ALL.to_vec(),
            experts: Vec::new(),
            train_prompts: 450,
            eval_prompts: 100,
            difficulty_min: 4,
            difficulty_max: 6,
            edit_fraction: 0.0,
            baseline_default_t2i: 4,
            baseline_default_i2i: 10,
            counterparts: vec![[4, 10], [5, 9], [6, 11]],
            checkpoint_every: 0,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive".into());
        }
        if self.learning_starts > self.buffer_capacity {
            return bad("learning_starts exceeds buffer_capacity".into());
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) {
            return bad("exploration_fraction outside [0, 1]".into());
        }
        for e in [self.epsilon_initial, self.epsilon_final] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("epsilon {e} outside [0, 1]"));
            }
        }
        if self.t_max == 0 {
            return bad("t_max must be positive".into());
        }
        if !(self.step_penalty >= 0.0 && self.step_penalty.is_finite()) {
            return bad("step_penalty must be >= 0".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(1 <= self.difficulty_min
            && self.difficulty_min <= self.difficulty_max
            && self.difficulty_max <= 6)
        {
            return bad("difficulty range must lie within 1..=6".into());
        }
        if !(0.0..=1.0).contains(&self.edit_fraction) {
            return bad("edit_fraction outside [0, 1]".into());
        }
        if self.train_prompts == 0 {
            return bad("train_prompts must be positive".into());
        }
        if !self.experts.is_empty() && self.experts.len() != 12 {
            return bad(format!(
                "expected 12 expert profiles, got {}",
                self.experts.len()
            ));
        }
        PromptGenerator::new(self.taxonomy.clone())?;
        let reg = self.registry()?;
        let check = |i: usize, want_t2i: bool| -> Result<()> {
            let spec = reg.get(i).map_err(|e| Error::Config(e.to_string()))?;
            if (spec.modality == crate::registry::Modality::T2I) != want_t2i {
                return Err(Error::Config(format!("expert {i} has the wrong modality")));
            }
            Ok(())
        };
        check(self.baseline_default_t2i, true)?;
        check(self.baseline_default_i2i, false)?;
        for [a, b] in &self.counterparts {
            check(*a, true)?;
            check(*b, false)?;
        }
        Ok(())
    }

    pub fn dqn(&self) -> DqnConfig {
        DqnConfig {
            hidden: self.hidden.clone(),
            gamma: self.gamma,
            lr: self.lr,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            learning_starts: self.learning_starts,
            target_sync_interval: self.target_sync_interval,
            exploration_fraction: self.exploration_fraction,
            epsilon_initial: self.epsilon_initial,
            epsilon_final: self.epsilon_final,
        }
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            initial: self.epsilon_initial,
            final_: self.epsilon_final,
            fraction: self.exploration_fraction,
        }
    }

    pub fn registry(&self) -> Result<Registry> {
        if self.experts.is_empty() {
            return Ok(Registry::default_synthetic());
        }
        let profiles = self
            .experts
            .iter()
            .map(|e| {
                let mut failure = e.failure.clone();
                for (&c, &m) in &e.means {
                    failure.entry(c).or_insert((10.0 - m) / 20.0);
                }
                SkillProfile {
                    means: e.means.clone(),
                    sigma: e.sigma,
                    failure,
                }
            })
            .collect();
        Registry::synthetic(profiles)
    }

    pub fn environment(&self) -> Result<Environment> {
        let mut env = Environment::synthetic(self.registry()?);
        env.t_max = self.t_max;
        env.step_penalty = self.step_penalty;
        Ok(env)
    }

    pub fn generator(&self) -> Result<PromptGenerator> {
        let mut g = PromptGenerator::new(self.taxonomy.clone())?;
        g.edit_probability = self.edit_fraction;
        Ok(g)
    }

    pub fn difficulty(&self) -> std::ops::RangeInclusive<usize> {
        self.difficulty_min..=self.difficulty_max
    }

    pub fn counterpart(&self, index: usize) -> Option<usize> {
        self.counterparts
            .iter()
            .find_map(|&[a, b]| (a == index).then_some(b).or((b == index).then_some(a)))
    }
}
