//! Prelude → weight-tied recurrent block → coda, decodable after any step.
//!
//! `h_0 = P(x)`, `h_i = R(h_{i-1})`, and the coda reads any `h_i` out as a
//! next-token distribution at the last prompt position. The recurrent stack
//! is a single set of weights reused at every step.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::LoopedConfig;
pub use forward::{
    coda_decode, loss_graph, prelude_forward, recurrent_step, run_deliberation, HiddenState, LossGraph,
    StepDistribution,
};
pub use params::{init_params, LoopedModelParams, LoopedWeights};
