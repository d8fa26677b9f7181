//! Assisted excitation training for salient object detection in small U-Nets.
//!
//! During training, selected feature maps are excited at ground-truth object
//! locations by `α(t)·max_c a(c,i,j)`; the factor decays to exactly zero
//! before training ends, so the trained network is an ordinary U-Net at
//! inference time.
//!
//! Modules, bottom-up:
//! - [`tensor`]: `f64` tensors, a reverse-mode tape and finite-difference checks.
//! - [`excitation`]: the excitation transform itself.
//! - [`curriculum`]: the epoch-indexed factor `α(t)`.
//! - [`network`]: U-Net construction and forward passes.
//! - [`metrics`]: adaptive-threshold F-measure and MAE.
//! - [`dataio`]: PGM files, dataset layouts, synthetic data, checkpoints.
//! - [`train`], [`config`], [`cli`]: experiments and the `aae` command.

pub mod cli;
pub mod config;
pub mod curriculum;
pub mod dataio;
pub mod error;
pub mod excitation;
pub mod exec;
pub mod gradsuite;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
