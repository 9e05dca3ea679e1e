//! Multi-stage U-Net skeletonizer: architecture, sequential stage training,
//! inference and the binary model format.

mod io;
mod net;
mod train;

pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use net::{binarize, mask_to_tensor, ForwardCache, UNet, UNetConfig};
pub use train::{
    apply_stage, infer, infer_all, infer_prefix, stage_rng, train_pipeline, train_pipeline_with, train_stage,
    ModelBundle, PipelineConfig, TrainEvent,
};

use std::path::PathBuf;

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum UnetError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("image is {height}x{width}, the network expects {expected}x{expected}")]
    SizeMismatch {
        expected: usize,
        height: usize,
        width: usize,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("{inputs} inputs but {targets} targets")]
    CountMismatch { inputs: usize, targets: usize },
    #[error("non-finite loss in stage {stage}, epoch {epoch}, batch {batch}")]
    NonFiniteLoss { stage: usize, epoch: usize, batch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file is truncated")]
    Truncated,
    #[error("malformed model file: {0}")]
    Format(String),
}
