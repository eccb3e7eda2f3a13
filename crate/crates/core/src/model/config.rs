use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerDims;

/// Shape of a looped model. Defaults follow a 2/4/2 prelude/recurrent/coda
/// split with up to 30 recurrence steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopedConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Hidden width of the MLP inside every layer.
    pub d_ff: usize,
    pub prelude_layers: usize,
    pub recurrent_layers: usize,
    pub coda_layers: usize,
    pub max_seq: usize,
    pub k_max: usize,
}

impl Default for LoopedConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            prelude_layers: 2,
            recurrent_layers: 4,
            coda_layers: 2,
            max_seq: 16,
            k_max: 30,
        }
    }
}

impl LoopedConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("prelude_layers", self.prelude_layers),
            ("recurrent_layers", self.recurrent_layers),
            ("coda_layers", self.coda_layers),
            ("max_seq", self.max_seq),
            ("k_max", self.k_max),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        self.layer_dims().validate()
    }

    pub fn layer_dims(&self) -> LayerDims {
        LayerDims {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
        }
    }

    pub fn total_layers(&self) -> usize {
        self.prelude_layers + self.recurrent_layers + self.coda_layers
    }

    /// Scalar parameter count: tied embedding, positions, every layer, and
    /// the final norm.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        (self.vocab_size + self.max_seq) * d + self.total_layers() * self.layer_dims().param_count() + 2 * d
    }
}
