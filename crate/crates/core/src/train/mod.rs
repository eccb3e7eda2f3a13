//! Depth-sampled training of the looped model, AdamW, and accuracy evaluation.

mod config;
mod data;
mod eval;
mod optim;

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use config::TrainConfig;
pub use data::TrainingStream;
pub use eval::{evaluate_accuracy, final_distribution, option_argmax, predict_option};
pub use optim::AdamW;

use crate::error::{Error, Result};
use crate::model::{init_params, loss_graph, LoopedConfig, LoopedModelParams};
use crate::nn::Tensor2;
use crate::scalar::{Precision, Scalar};
use crate::seed::{derive_seed, rng, Rng};
use crate::task::{PermutedItem, SyntheticWorld, Variant};

/// Draws a recurrence depth: uniform over the configured support, or over
/// `1..=k_max` when none is given.
pub fn sample_depth(r: &mut Rng, config: &TrainConfig, k_max: usize) -> Result<usize> {
    match &config.depth_support {
        Some(support) => support.choose(r).copied().ok_or(Error::Empty("depth support")),
        None if k_max == 0 => Err(Error::Empty("depth support")),
        None => Ok(r.random_range(1..=k_max)),
    }
}

/// Depth for optimizer step `step` (zero-based): uniform over
/// `1..=shallow_max_depth` during the shallow phase, then [`sample_depth`].
pub fn scheduled_depth(r: &mut Rng, config: &TrainConfig, k_max: usize, step: usize) -> Result<usize> {
    if step < config.shallow_steps {
        let top = config.shallow_max_depth.min(k_max);
        if top == 0 {
            return Err(Error::Empty("depth support"));
        }
        return Ok(r.random_range(1..=top));
    }
    sample_depth(r, config, k_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Forward through `k` recurrent steps, backward through the whole unroll,
/// and one optimizer update.
pub fn train_step<T: Scalar>(
    params: &mut LoopedModelParams<T>,
    batch: &[(Vec<usize>, usize)],
    k: usize,
    opt: &mut AdamW<T>,
    config: &TrainConfig,
) -> Result<StepOutcome> {
    let refs: Vec<(&[usize], usize)> = batch.iter().map(|(t, y)| (t.as_slice(), *y)).collect();
    let lg = loss_graph(params, &refs, k)?;
    let loss = lg.graph.value(lg.loss).get(0, 0).as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: opt.step,
            detail: format!("loss {loss} at depth {k}, batch of {}", batch.len()),
        });
    }
    let mut grads = lg.graph.backward(lg.loss)?;
    let mut flat: Vec<Tensor2<T>> = lg
        .params
        .named()
        .into_iter()
        .map(|(_, &id)| {
            let shape = lg.graph.value(id).shape();
            grads.take_or_zeros(id, shape)
        })
        .collect();
    let grad_norm = opt.update(&mut params.weights, &mut flat, config);
    if !grad_norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: opt.step,
            detail: format!("gradient norm {grad_norm} at depth {k}"),
        });
    }
    Ok(StepOutcome { loss, grad_norm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthAccuracy {
    pub variant: Variant,
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: Vec<DepthAccuracy>,
    /// Wall-clock seconds; kept out of the CSV so logs stay reproducible.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_accuracy(&self, variant: Variant, k: usize) -> Option<f64> {
        self.records
            .last()?
            .accuracy
            .iter()
            .find(|a| a.variant == variant && a.k == k)
            .map(|a| a.accuracy)
    }

    /// `epoch,mean_loss,<variant>_k<k>...` with one row per epoch.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let cols: Vec<(Variant, usize)> = self
            .records
            .first()
            .map(|r| r.accuracy.iter().map(|a| (a.variant, a.k)).collect())
            .unwrap_or_default();
        let mut header = vec!["epoch".to_string(), "mean_loss".to_string()];
        header.extend(cols.iter().map(|(v, k)| format!("{v}_k{k}")));
        let csv_err = |e: csv::Error| Error::Serde(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.epoch.to_string(), r.mean_loss.to_string()];
            row.extend(r.accuracy.iter().map(|a| a.accuracy.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Questions held aside for the per-epoch accuracy log.
pub fn eval_set(world: &SyntheticWorld, config: &TrainConfig, variant: Variant) -> Result<Vec<PermutedItem>> {
    let mut stream = TrainingStream::new(world, config, derive_seed(config.seed, &format!("eval-{variant}")))?;
    (0..config.eval_items).map(|_| stream.next_item(variant)).collect()
}

/// Runs the configured number of epochs, calling `on_epoch` after each one.
pub fn train<T: Scalar>(
    params: &mut LoopedModelParams<T>,
    world: &SyntheticWorld,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    config.validate(params.config.k_max)?;
    if world.vocab.size() > params.config.vocab_size {
        return Err(Error::VocabBudget {
            needed: world.vocab.size(),
            budget: params.config.vocab_size,
        });
    }
    let mut stream = TrainingStream::new(world, config, derive_seed(config.seed, "train-data"))?;
    let mut depth_rng = rng(derive_seed(config.seed, "depth"));
    let mut opt = AdamW::new(&params.weights);
    let evals: Vec<(Variant, Vec<PermutedItem>)> = if config.eval_items > 0 {
        [Variant::Easy, Variant::Base]
            .into_iter()
            .map(|v| eval_set(world, config, v).map(|s| (v, s)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        for _ in 0..config.steps_per_epoch {
            let batch = stream.next_batch(config.batch_size)?;
            let k = scheduled_depth(&mut depth_rng, config, params.config.k_max, step)?;
            step += 1;
            total += train_step(params, &batch, k, &mut opt, config)?.loss;
        }
        let mut accuracy = Vec::new();
        for (variant, items) in &evals {
            for &k in &config.eval_depths {
                accuracy.push(DepthAccuracy {
                    variant: *variant,
                    k,
                    accuracy: evaluate_accuracy(params, items, k)?,
                });
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss: total / config.steps_per_epoch.max(1) as f64,
            accuracy,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
    }
    Ok(log)
}

/// Initializes from `config.seed`, trains at the configured precision, and
/// returns single-precision weights.
pub fn train_model(
    model: &LoopedConfig,
    world: &SyntheticWorld,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(LoopedModelParams<f32>, TrainLog)> {
    let init_seed = derive_seed(config.seed, "init");
    match config.precision {
        Precision::F32 => {
            let mut p = init_params::<f32>(model, init_seed)?;
            let log = train(&mut p, world, config, on_epoch)?;
            Ok((p, log))
        }
        Precision::F64 => {
            let mut p = init_params::<f64>(model, init_seed)?;
            let log = train(&mut p, world, config, on_epoch)?;
            Ok((p.cast(), log))
        }
    }
}
