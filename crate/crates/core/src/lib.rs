//! A looped (prelude → recurrent block → coda) transformer whose predictive
//! distribution can be decoded after every recurrence step, together with a
//! synthetic four-choice QA benchmark and the metrics used to study how the
//! decoded beliefs evolve across steps.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below pin the two
//! instantiations in use.

pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod task;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

pub type Tensor32 = nn::Tensor2<f32>;
pub type Tensor64 = nn::Tensor2<f64>;
