//! Skeletonization benchmark toolkit.
//!
//! * [`mask`]: binary rasters, PNG I/O, distance transform, components.
//! * [`metrics`]: pixel F1 and the translation-aware M-CCORR score.
//! * [`thinning`]: classical skeletons (Zhang-Suen, medial axis, spur pruning).
//! * [`nn`]: hand-written CNN kernels with backward passes, weighted loss and Adam.
//! * [`unet`]: the U-Net, sequential multi-stage training, inference and model files.
//! * [`datagen`]: synthetic shape/skeleton datasets and directory ingestion.
//! * [`cli`]: the `skelbench` command-line front end.

pub mod cli;
pub mod datagen;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod thinning;
pub mod unet;

pub use mask::{BBox, BinaryMask, GrayImage};
pub use metrics::{MatchConfig, MetricReport};
