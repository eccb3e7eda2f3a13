use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Precision;

/// Optimization and schedule settings for [`super::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Depths drawn uniformly from this list; `None` means `1..=k_max`.
    pub depth_support: Option<Vec<usize>>,
    /// Leading optimizer steps that draw depths from `1..=shallow_max_depth`
    /// before the configured support takes over.
    pub shallow_steps: usize,
    pub shallow_max_depth: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled decay applied to weight matrices only.
    pub weight_decay: f64,
    /// Linear warmup length in optimizer steps.
    pub warmup_steps: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Fraction of training questions drawn with cross-category distractors.
    pub easy_fraction: f64,
    /// Fraction of training stems that compose two attributes.
    pub two_hop_fraction: f64,
    /// Depths at which held-out accuracy is logged after every epoch.
    pub eval_depths: Vec<usize>,
    /// Held-out questions per variant used for the per-epoch log.
    pub eval_items: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth_support: None,
            shallow_steps: 0,
            shallow_max_depth: 4,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 100,
            grad_clip: 1.0,
            batch_size: 32,
            epochs: 10,
            steps_per_epoch: 100,
            seed: 0,
            precision: Precision::F32,
            easy_fraction: 0.5,
            two_hop_fraction: 0.5,
            eval_depths: vec![4, 8, 16, 30],
            eval_items: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, k_max: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("adam_eps must be positive; weight_decay and grad_clip non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        for f in [self.easy_fraction, self.two_hop_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad("mix fractions must lie in [0, 1]");
            }
        }
        if let Some(s) = &self.depth_support {
            if s.is_empty() {
                return bad("depth support is empty");
            }
            if s.iter().any(|&k| k == 0 || k > k_max) {
                return bad("depth support must lie in 1..=k_max");
            }
        }
        if self.shallow_steps > 0 && !(1..=k_max).contains(&self.shallow_max_depth) {
            return bad("shallow_max_depth must lie in 1..=k_max");
        }
        if self.eval_depths.iter().any(|&k| k == 0 || k > k_max) {
            return bad("eval depths must lie in 1..=k_max");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
