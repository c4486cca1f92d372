//! Hierarchical convolutional sparse coding with predictive-coding feedback.
//!
//! A stack of non-negative convolutional sparse-coding layers is coupled so
//! that each layer reconstructs the one below through feedback connections
//! while forwarding its prediction error upward. The crate covers the full
//! workflow: inference, dictionary learning, image preprocessing, the
//! orientation-domain analyses (interaction maps, co-linearity and
//! co-circularity statistics, feedback activity ratios) and denoising
//! evaluation, plus a command-line front end for running the experiments.
//!
//! Start with the `examples/` directory; each example is a runnable tour of
//! one capability. The `sdpc` binary exposes the same pipelines as
//! subcommands (`preprocess`, `train`, `denoise`, `maps`, `sparsity`,
//! `show-rfs`).

pub mod error;
pub mod util;
pub mod kernels;
pub mod model;
pub mod ops;
pub mod inference;
pub mod learning;
pub mod backproject;
pub mod checkpoint;
pub mod eig;
pub mod data;
pub mod analysis;
pub mod cli;

pub use error::{Result, SdpcError};
pub use inference::{infer, total_loss, InferenceResult, SolverMode};
pub use model::{ActivityMap, ConvDictionary, LayerConfig, NetworkConfig};
