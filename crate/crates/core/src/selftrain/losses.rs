//! Loss terms of the adaptation objective and their weighted sum.

use std::fmt;
use std::str::FromStr;

use crate::backbone::{discriminator_forward, extract_features, NetConfig, NormMode};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Binding, Float, Tensor, Var};
use crate::wavelet::{high_bands, low_band};

/// Stabilizer inside the adversarial logs.
pub const LOG_EPS: f64 = 1e-8;

/// Uncertainty-weighted L1: `mean |cof·sr − cof·y|`, `cof` broadcast over RGB.
pub fn loss_rec<'t, T: Float>(sr: Var<'t, T>, mean: &Tensor<T>, cof: &Tensor<T>) -> Result<Var<'t, T>> {
    let ss = sr.shape();
    let cs = cof.shape();
    if ss.as_slice() != mean.shape() || cs.len() != 4 || cs[..3] != ss[..3] || cs[3] != 1 {
        return shape_err(format!(
            "rectified L1: sr {:?}, pseudo-label {:?}, confidence {:?}",
            ss,
            mean.shape(),
            cs
        ));
    }
    let tape = sr.tape();
    let c = tape.constant(cof.clone());
    let target = tape.constant(scale_by_cof(mean, cof));
    Ok(sr.mul(c)?.sub(target)?.abs().mean())
}

/// `x · cof` with `cof` `[..,1]` broadcast over the last axis of `x`.
fn scale_by_cof<T: Float>(x: &Tensor<T>, cof: &Tensor<T>) -> Tensor<T> {
    let c = *x.shape().last().unwrap();
    let data = x.data().iter().enumerate().map(|(i, &v)| v * cof.data()[i / c]).collect();
    Tensor::from_vec(x.shape(), data)
}

/// L1 between frozen source-extractor features of the average-pooled
/// (LR-resolution) SR output and pseudo-label. `extractor` must be bound as
/// constants so no gradient reaches it.
pub fn loss_perceptual<'t, T: Float>(
    sr: Var<'t, T>,
    mean: &Tensor<T>,
    cfg: &NetConfig,
    extractor: &Binding<'t, T>,
) -> Result<Var<'t, T>> {
    if sr.shape().as_slice() != mean.shape() {
        return shape_err(format!("perceptual: {:?} vs {:?}", sr.shape(), mean.shape()));
    }
    let tape = sr.tape();
    let fs = extract_features(cfg, extractor, sr.avg_pool(cfg.scale)?, NormMode::Softmax, None)?;
    let ft = extract_features(
        cfg,
        extractor,
        tape.constant(mean.clone()).avg_pool(cfg.scale)?,
        NormMode::Softmax,
        None,
    )?;
    fs.l1_loss(ft.detach())
}

/// How the two low bands are brought to a common gain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LowBandNorm {
    /// Divide the SR band by `2^(l2−l1)` (the orthonormal gain difference),
    /// so a resolution-consistent pair has zero loss.
    Compensated,
    /// Compare the bands as they come out of the transform.
    Raw,
}

impl FromStr for LowBandNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compensated" => Ok(LowBandNorm::Compensated),
            "raw" => Ok(LowBandNorm::Raw),
            _ => Err(Error::Config(format!("unknown low-band normalization '{}'", s))),
        }
    }
}

impl fmt::Display for LowBandNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LowBandNorm::Compensated => "compensated",
            LowBandNorm::Raw => "raw",
        })
    }
}

fn check_levels(lr: &[usize], sr: &[usize], l1: usize, l2: usize) -> Result<usize> {
    if l2 < l1 || lr.len() != 4 || sr.len() != 4 || sr[1] != lr[1] << (l2 - l1) || sr[2] != lr[2] << (l2 - l1) {
        return Err(Error::Config(format!(
            "levels ({}, {}) do not match LR {:?} and SR {:?}",
            l1, l2, lr, sr
        )));
    }
    Ok(l2 - l1)
}

/// L1 between the level-`l1` low band of the LR input and the level-`l2`
/// low band of the SR output.
pub fn loss_low<'t, T: Float>(
    x_lr: &Tensor<T>,
    sr: Var<'t, T>,
    l1: usize,
    l2: usize,
    norm: LowBandNorm,
) -> Result<Var<'t, T>> {
    let d = check_levels(x_lr.shape(), &sr.shape(), l1, l2)?;
    let real = low_band(sr.tape().constant(x_lr.clone()), l1)?;
    let mut fake = low_band(sr, l2)?;
    if norm == LowBandNorm::Compensated {
        fake = fake.mul_scalar(T::of(1.0 / (1u64 << d) as f64));
    }
    fake.l1_loss(real)
}

fn neg_mean_log<'t, T: Float>(p: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(p.add_scalar(T::of(LOG_EPS)).log()?.mean().neg())
}

/// Generator adversarial term `−E[log D(H(sr))]`. Bind `disc` as constants
/// for the generator update.
pub fn loss_high_g<'t, T: Float>(
    sr: Var<'t, T>,
    disc: &Binding<'t, T>,
    disc_channels: usize,
    l2: usize,
) -> Result<Var<'t, T>> {
    neg_mean_log(discriminator_forward(disc, disc_channels, high_bands(sr, l2)?)?)
}

/// Discriminator term `−E[log D(H(x_lr))] − E[log(1 − D(H(sr)))]`, with `sr`
/// entering as a constant.
pub fn loss_high_d<'t, T: Float>(
    x_lr: Var<'t, T>,
    sr: &Tensor<T>,
    disc: &Binding<'t, T>,
    disc_channels: usize,
    l1: usize,
    l2: usize,
) -> Result<Var<'t, T>> {
    check_levels(&x_lr.shape(), sr.shape(), l1, l2)?;
    let tape = x_lr.tape();
    let real = discriminator_forward(disc, disc_channels, high_bands(x_lr, l1)?)?;
    let fake = discriminator_forward(disc, disc_channels, high_bands(tape.constant(sr.clone()), l2)?)?;
    let fake_term = neg_mean_log(fake.neg().add_scalar(T::one()))?;
    neg_mean_log(real)?.add(fake_term)
}

/// Weights of the auxiliary terms; the rectified L1 has weight 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub perceptual: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            perceptual: 0.01,
            low: 0.1,
            high: 0.005,
        }
    }
}

/// Scalar values of the generator-side terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub rec: f64,
    pub perceptual: f64,
    pub low: f64,
    pub high_g: f64,
}

/// `rec + λ1·per + λ2·low + λ3·high`, rejecting non-finite terms by name.
pub fn total_loss(t: &LossTerms, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("l_rec", t.rec),
        ("l_per", t.perceptual),
        ("l_low", t.low),
        ("l_highG", t.high_g),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss term {} = {}", name, v)));
        }
    }
    Ok(t.rec + w.perceptual * t.perceptual + w.low * t.low + w.high * t.high_g)
}

/// The same weighted sum on the tape.
pub fn total_loss_var<'t, T: Float>(
    rec: Var<'t, T>,
    per: Var<'t, T>,
    low: Var<'t, T>,
    high_g: Var<'t, T>,
    w: &LossWeights,
) -> Result<Var<'t, T>> {
    rec.add(per.mul_scalar(T::of(w.perceptual)))?
        .add(low.mul_scalar(T::of(w.low)))?
        .add(high_g.mul_scalar(T::of(w.high)))
}
