//! Experiment orchestration for latent-trace: benchmark generation,
//! training, trajectory tracing, analysis, CSV/SVG reporting, and a
//! hash manifest over everything emitted.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod svg;
pub mod verify;

use std::fmt::Display;
use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use manifest::{Manifest, ManifestEntry};
pub use pipeline::{run_experiment, ExperimentReport};

/// A failure tagged with the pipeline stage that raised it.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage} stage: {}: {source}", path.display())]
    Io {
        stage: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{stage} stage: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn io(stage: &'static str, path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            stage,
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn stage(stage: &'static str, message: impl Into<String>) -> Self {
        Self::Stage {
            stage,
            message: message.into(),
        }
    }

    pub fn stage_name(&self) -> &'static str {
        match self {
            Self::Io { stage, .. } | Self::Stage { stage, .. } => stage,
        }
    }
}

pub(crate) trait AtStage<T> {
    fn at(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: Display> AtStage<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::stage(stage, e.to_string()))
    }
}
