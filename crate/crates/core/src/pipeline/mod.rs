//! Stage orchestration, on-disk artifacts and run configuration.

mod artifacts;
mod config;
mod split;
mod stages;

pub use artifacts::{
    read_images, read_latent_csv, read_manifest, read_signal_csv, read_split, write_images, write_latent_csv,
    write_manifest, write_signal_csv, write_split, EvalSummary, FinalLoss, LatentRow, ManifestEntry, Metrics, SplitEntry,
};
pub use config::{LatentFeature, RunConfig, SignalSection, SvmSection, TrainSection, VaeSection};
pub use split::{assign_split, LabeledDataset, Split};
pub use stages::{
    emit_latent_csv, run_both_generators, run_pipeline, stage_classify, stage_embed, stage_eval, stage_gen, stage_project, stage_train,
    RunPaths,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("run directory {0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, reason: impl Into<String>) -> Self {
        PipelineError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> StageContext<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
