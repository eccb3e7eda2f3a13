use std::path::{Path, PathBuf};

use latent_trace::metrics::MetricParams;
use latent_trace::model::LoopedConfig;
use latent_trace::seed::derive_seed;
use latent_trace::task::{BenchmarkConfig, WorldConfig};
use latent_trace::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::PipelineError;

/// Everything one experiment needs. Sub-seeds are derived from `seed` by
/// stage name; the `seed` field inside `[train]` is overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Recurrence steps decoded per question.
    pub steps: usize,
    /// Worker threads for tracing; `0` lets the pool decide.
    pub threads: usize,
    pub world: WorldConfig,
    pub benchmark: BenchmarkConfig,
    pub model: LoopedConfig,
    pub train: TrainConfig,
    pub metrics: MetricParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            steps: 30,
            threads: 0,
            world: WorldConfig::default(),
            benchmark: BenchmarkConfig::default(),
            model: LoopedConfig::default(),
            train: TrainConfig {
                learning_rate: 1e-3,
                warmup_steps: 50,
                epochs: 27,
                steps_per_epoch: 100,
                shallow_steps: 2400,
                ..TrainConfig::default()
            },
            metrics: MetricParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io("config", path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::stage("config", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::stage("config", e.to_string()))
    }

    pub fn world_seed(&self) -> u64 {
        derive_seed(self.seed, "world")
    }

    pub fn benchmark_seed(&self) -> u64 {
        derive_seed(self.seed, "benchmark")
    }

    pub fn metrics_seed(&self) -> u64 {
        derive_seed(self.seed, "metrics")
    }

    /// The training config with its seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train"),
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::stage("config", m));
        self.model.validate().map_err(|e| PipelineError::stage("config", e.to_string()))?;
        self.train
            .validate(self.model.k_max)
            .map_err(|e| PipelineError::stage("config", e.to_string()))?;
        if self.steps == 0 || self.steps > self.model.k_max {
            return bad(format!("steps must lie in 1..={}", self.model.k_max));
        }
        if self.steps < 2 {
            return bad("at least two steps are needed for step-to-step KL".into());
        }
        if self.benchmark.n_permutations == 0 {
            return bad("n_permutations must be positive".into());
        }
        if !(self.metrics.tol > 0.0) || self.metrics.window == 0 {
            return bad("metrics need tol > 0 and window ≥ 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let partial = ExperimentConfig::from_toml("seed = 9\n[benchmark]\nn_stems = 20\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.benchmark.n_stems, 20);
        assert_eq!(partial.benchmark.n_permutations, 25);
        assert!(ExperimentConfig::from_toml("nope = 1").is_err());
    }

    #[test]
    fn sub_seeds_differ() {
        let c = ExperimentConfig::default();
        assert_ne!(c.world_seed(), c.benchmark_seed());
        assert_ne!(c.train_config().seed, c.metrics_seed());
    }
}
