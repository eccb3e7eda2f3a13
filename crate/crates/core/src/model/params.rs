use crate::error::Result;
use crate::nn::{LayerWeights, Tensor2};
use crate::scalar::Scalar;
use crate::seed::rng;

use super::config::LoopedConfig;

/// All weights of the model, generic over the slot type.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopedWeights<W> {
    /// `vocab × d`; also the output projection (tied head).
    pub token_embedding: W,
    /// `max_seq × d` learned absolute positions.
    pub position_embedding: W,
    pub prelude: Vec<LayerWeights<W>>,
    pub recurrent: Vec<LayerWeights<W>>,
    pub coda: Vec<LayerWeights<W>>,
    pub final_norm_gain: W,
    pub final_norm_bias: W,
}

impl<W> LoopedWeights<W> {
    /// Every slot with a stable dotted name, in serialization order.
    pub fn named(&self) -> Vec<(String, &W)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (stage, layers) in [("prelude", &self.prelude), ("recurrent", &self.recurrent), ("coda", &self.coda)] {
            for (i, layer) in layers.iter().enumerate() {
                for (name, w) in LayerWeights::<W>::NAMES.iter().zip(layer.slots()) {
                    out.push((format!("{stage}.{i}.{name}"), w));
                }
            }
        }
        out.push(("final_norm_gain".to_string(), &self.final_norm_gain));
        out.push(("final_norm_bias".to_string(), &self.final_norm_bias));
        out
    }

    /// Mutable slots in the same order as [`LoopedWeights::named`].
    pub fn slots_mut(&mut self) -> Vec<&mut W> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for layers in [&mut self.prelude, &mut self.recurrent, &mut self.coda] {
            for layer in layers.iter_mut() {
                out.extend(layer.slots_mut());
            }
        }
        out.push(&mut self.final_norm_gain);
        out.push(&mut self.final_norm_bias);
        out
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(&W) -> Result<U, E>) -> Result<LoopedWeights<U>, E> {
        let mut stack = |layers: &[LayerWeights<W>]| -> Result<Vec<LayerWeights<U>>, E> {
            layers.iter().map(|l| l.try_map(|_, w| f(w))).collect()
        };
        let prelude = stack(&self.prelude)?;
        let recurrent = stack(&self.recurrent)?;
        let coda = stack(&self.coda)?;
        Ok(LoopedWeights {
            token_embedding: f(&self.token_embedding)?,
            position_embedding: f(&self.position_embedding)?,
            prelude,
            recurrent,
            coda,
            final_norm_gain: f(&self.final_norm_gain)?,
            final_norm_bias: f(&self.final_norm_bias)?,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&W) -> U) -> LoopedWeights<U> {
        self.try_map::<U, std::convert::Infallible>(|w| Ok(f(w)))
            .unwrap_or_else(|e| match e {})
    }
}

impl<T: Scalar> LoopedWeights<Tensor2<T>> {
    pub fn zeros(config: &LoopedConfig) -> Self {
        let d = config.d_model;
        let dims = config.layer_dims();
        let stack = |n: usize| (0..n).map(|_| LayerWeights::zeros(dims)).collect();
        Self {
            token_embedding: Tensor2::zeros(config.vocab_size, d),
            position_embedding: Tensor2::zeros(config.max_seq, d),
            prelude: stack(config.prelude_layers),
            recurrent: stack(config.recurrent_layers),
            coda: stack(config.coda_layers),
            final_norm_gain: Tensor2::zeros(1, d),
            final_norm_bias: Tensor2::zeros(1, d),
        }
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopedModelParams<T> {
    pub config: LoopedConfig,
    pub weights: LoopedWeights<Tensor2<T>>,
}

impl<T: Scalar> LoopedModelParams<T> {
    pub fn cast<U: Scalar>(&self) -> LoopedModelParams<U> {
        LoopedModelParams {
            config: self.config.clone(),
            weights: self.weights.map(Tensor2::cast),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count()
    }
}

/// Deterministic initialization: embeddings and input projections N(0, 0.02),
/// residual output projections N(0, 0.02/√(2·layers)), unit norm gains, zero biases.
pub fn init_params<T: Scalar>(config: &LoopedConfig, seed: u64) -> Result<LoopedModelParams<T>> {
    config.validate()?;
    let mut r = rng(seed);
    let d = config.d_model;
    let dims = config.layer_dims();
    let out_std = 0.02 / (2.0 * config.total_layers() as f64).sqrt();
    let token_embedding = Tensor2::randn(config.vocab_size, d, 0.02, &mut r);
    let position_embedding = Tensor2::randn(config.max_seq, d, 0.02, &mut r);
    let mut stack = |n: usize| -> Vec<LayerWeights<Tensor2<T>>> {
        (0..n).map(|_| LayerWeights::init(dims, out_std, &mut r)).collect()
    };
    let prelude = stack(config.prelude_layers);
    let recurrent = stack(config.recurrent_layers);
    let coda = stack(config.coda_layers);
    Ok(LoopedModelParams {
        config: config.clone(),
        weights: LoopedWeights {
            token_embedding,
            position_embedding,
            prelude,
            recurrent,
            coda,
            final_norm_gain: Tensor2::filled(1, d, T::one()),
            final_norm_bias: Tensor2::zeros(1, d),
        },
    })
}
