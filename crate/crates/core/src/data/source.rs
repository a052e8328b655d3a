//! Supervised pre-training on the labeled source domain.

use rand::Rng;

use super::dataset::Pairs;
use super::patches::sample_pair_batch;
use crate::backbone::{extract_features, reconstruct, upsample_skip, NormMode, ToySRNet};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Float, Tape};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub patch: usize,
    pub learning_rate: f64,
}

impl Default for SourceTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 8,
            patch: 48,
            learning_rate: 1e-3,
        }
    }
}

/// L1 training with Adam. Returns the per-iteration losses.
pub fn train_source<T: Float, R: Rng + ?Sized>(
    net: &mut ToySRNet<T>,
    source: &Pairs,
    cfg: &SourceTrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &net.params);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (lr, hr) = sample_pair_batch(&source.lr, &source.hr, cfg.batch, cfg.patch, net.config.scale, rng)?;
        let (lr, hr) = (lr.cast::<T>(), hr.cast::<T>());
        let tape = Tape::new();
        let p = net.params.bind(&tape, true);
        let f = extract_features(&net.config, &p, tape.constant(lr.clone()), NormMode::Softmax, None)?;
        let sr = reconstruct(&net.config, &p, f, &upsample_skip(&net.config, &lr)?, false)?;
        let loss = sr.l1_loss(tape.constant(hr))?;
        let value = loss.value().item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("source loss at iteration {}", it)));
        }
        let grads = p.grads(&tape.backward(loss));
        adam.step(&mut net.params, &grads)?;
        losses.push(value);
        if (it + 1) % 100 == 0 {
            log::info!("source iteration {}: L1 {:.5}", it + 1, value);
        }
    }
    Ok(losses)
}
