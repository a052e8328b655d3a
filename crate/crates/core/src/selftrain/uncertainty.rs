//! Pseudo-labels from repeated stochastic teacher passes, their per-pixel
//! variance and the confidence map that down-weights unstable pixels.

use rand::RngCore;

use super::transform::{mean_of, transformed_outputs_multi, EnsembleMode};
use crate::backbone::{upsample_skip, NormMode, ToySRNet};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Float, Tensor};

/// Largest batch pushed through the teacher in one call.
const MAX_TEACHER_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyEstimate<T: Float = f32> {
    /// `[B,H,W,3]`
    pub mean: Tensor<T>,
    /// `[B,H,W,1]`, population variance averaged over RGB.
    pub variance: Tensor<T>,
    /// `[B,H,W,1]`
    pub cof: Tensor<T>,
}

impl<T: Float> UncertaintyEstimate<T> {
    pub fn cof_mean(&self) -> f64 {
        self.cof.mean().as_f64()
    }
}

/// `β − sigmoid(σ²/α)`, element-wise.
pub fn confidence_map<T: Float>(variance: &Tensor<T>, alpha: f64, beta: f64) -> Tensor<T> {
    variance.map(|v| T::of(beta - 1.0 / (1.0 + (-v.as_f64() / alpha).exp())))
}

/// Mean and channel-averaged population variance of `N ≥ 2` pseudo-labels.
pub fn estimate_from_passes<T: Float>(passes: &[Tensor<T>], alpha: f64, beta: f64) -> Result<UncertaintyEstimate<T>> {
    if passes.len() < 2 {
        return Err(Error::Config(format!(
            "uncertainty needs at least 2 passes, got {}",
            passes.len()
        )));
    }
    let s = passes[0].shape().to_vec();
    if s.len() != 4 || passes.iter().any(|p| p.shape() != s.as_slice()) {
        return shape_err("pseudo-labels must share one [B,H,W,C] shape");
    }
    let mean = mean_of(passes);
    let c = s[3];
    let n = passes.len() as f64;
    let pixels = mean.len() / c;
    let mut var = vec![T::zero(); pixels];
    for (px, v) in var.iter_mut().enumerate() {
        let mut acc = 0.0;
        for ch in 0..c {
            let i = px * c + ch;
            let m = mean.data()[i].as_f64();
            let ss: f64 = passes.iter().map(|p| (p.data()[i].as_f64() - m).powi(2)).sum();
            acc += ss / n;
        }
        *v = T::of(acc / c as f64);
    }
    let variance = Tensor::from_vec(&[s[0], s[1], s[2], 1], var);
    let cof = confidence_map(&variance, alpha, beta);
    Ok(UncertaintyEstimate { mean, variance, cof })
}

/// Settings for [`estimate_uncertainty`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabelConfig {
    pub passes: usize,
    pub tau: f64,
    pub ensemble: EnsembleMode,
    pub alpha: f64,
    pub beta: f64,
}

/// Runs the teacher `passes` times in Gumbel mode (fresh noise per pass,
/// none when `rng` is `None`), each pass self-ensembled per `cfg.ensemble`;
/// `step` selects the transforms in rotating mode. No tape is built.
pub fn estimate_uncertainty<T: Float>(
    teacher: &ToySRNet<T>,
    x: &Tensor<T>,
    cfg: &PseudoLabelConfig,
    step: usize,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<UncertaintyEstimate<T>> {
    if cfg.passes < 2 {
        return Err(Error::Config(format!(
            "uncertainty needs at least 2 passes, got {}",
            cfg.passes
        )));
    }
    let mode = NormMode::gumbel(cfg.tau)?;
    // Every (pass, transform) job goes through one stacked forward; samples
    // draw independent noise, so a stacked pass equals separate passes.
    let mut jobs = Vec::new();
    let mut owner = Vec::new();
    for pass in 0..cfg.passes {
        for t in cfg.ensemble.transforms(step, cfg.passes, pass) {
            jobs.push(t);
            owner.push(pass);
        }
    }
    // Bicubic upscaling commutes with the transforms, so the skip is built
    // once and transformed alongside the input.
    let skip = upsample_skip(&teacher.config, x)?;
    let outs = transformed_outputs_multi(
        |xs| match rng.as_mut() {
            Some(r) => teacher.infer_with_skip(&xs[0], &xs[1], mode, Some(&mut **r)),
            None => teacher.infer_with_skip(&xs[0], &xs[1], mode, None),
        },
        &[x, &skip],
        &jobs,
        MAX_TEACHER_BATCH,
    )?;
    let passes: Vec<Tensor<T>> = (0..cfg.passes)
        .map(|p| {
            let mine: Vec<Tensor<T>> = outs
                .iter()
                .zip(&owner)
                .filter(|(_, &o)| o == p)
                .map(|(t, _)| t.clone())
                .collect();
            mean_of(&mine)
        })
        .collect();
    estimate_from_passes(&passes, cfg.alpha, cfg.beta)
}
