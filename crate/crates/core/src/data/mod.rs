//! Synthetic domains, image I/O, patch sampling, source pre-training and
//! fidelity metrics.

mod dataset;
pub mod io;
mod metrics;
mod patches;
mod resize;
mod source;
mod synth;

pub use dataset::{generate, DataConfig, Datasets, Pairs};
pub use io::{read_ppm, read_srf32, write_ppm, write_srf32, Domain, Manifest, Split};
pub use metrics::{psnr_y, ssim, PSNR_CAP};
pub use patches::{crop, sample_lr_batch, sample_pair_batch, stack_images};
pub use resize::bicubic_resize;
pub use source::{train_source, SourceTrainConfig};
pub use synth::{degrade, gaussian_blur, synthesize_hr, DegradationSpec, Image};
