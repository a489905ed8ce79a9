//! Contrail segmentation on satellite brightness-temperature-difference imagery.
//!
//! The crate is organised along the processing chain:
//!
//! - [`ingest`]: two-channel scenes to normalized BTD images paired with label masks.
//! - [`data`]: per-step random geometric and photometric augmentation.
//! - [`model`]: the ResUNet (residual encoder, transposed-convolution U-Net decoder).
//! - [`hough`]: soft, differentiable Hough accumulator plus line extraction and rendering.
//! - [`losses`]: Focal, Dice, log-Dice and the Hough-space SR loss, with analytic gradients.
//! - [`pipeline`]: training, evaluation, tiled inference, diagnostics and metric plots.

pub mod data;
pub mod error;
pub mod hough;
pub mod ingest;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod synthetic;

pub use error::{Error, Result};
