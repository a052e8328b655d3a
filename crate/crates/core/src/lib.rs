//! Source-free domain adaptation for single-image super-resolution.
//!
//! A source-trained SR network is adapted to an unlabeled target domain with
//! an EMA teacher, uncertainty-weighted pseudo-labels, a wavelet augmentation
//! transformer on the student's features and frequency-domain regularizers.
//! Everything runs on the small tensor/autodiff stack in [`numerics`].

pub mod error;
pub mod numerics;
pub mod wavelet;
pub mod wat;
pub mod backbone;
pub mod cli;
pub mod data;
pub mod rng;
pub mod selftrain;

pub use error::{Error, Result};
