//! Gradient engine, layers and the variational auto-encoder.

mod checkpoint;
mod optim;
mod tape;
mod train;
mod vae;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{Optimizer, OptimizerState};
pub use tape::{ConvGeometry, Gradients, Tape, Tensor, Var};
pub use train::{train, write_loss_csv, read_loss_csv, EpochStats, TrainConfig};
pub use vae::{
    gaussian_kl, reparameterize, vae_loss, EncoderArch, LatentPoint, LossBreakdown, LossWeights, VaeArch,
    VaeModel,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called before any forward pass was recorded")]
    NoForward,
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad checkpoint: {reason}")]
    Checkpoint { path: std::path::PathBuf, reason: String },
}
