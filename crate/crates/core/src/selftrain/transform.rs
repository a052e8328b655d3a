//! The eight flips/rotations of the square and test-time self-ensembling.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Float, Tensor};

/// `x ↦ R^k F x`: an optional horizontal flip followed by `k` counter-clockwise
/// quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GeometricTransform {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl GeometricTransform {
    pub const IDENTITY: Self = Self {
        flip: false,
        quarter_turns: 0,
    };

    /// All eight group elements, identity first.
    pub fn all() -> [Self; 8] {
        std::array::from_fn(Self::from_index)
    }

    pub fn from_index(i: usize) -> Self {
        Self {
            flip: (i % 8) >= 4,
            quarter_turns: (i % 4) as u8,
        }
    }

    pub fn index(self) -> usize {
        self.flip as usize * 4 + self.quarter_turns as usize
    }

    /// Group inverse. `F R^-k = R^k F`, so flipped elements are involutions.
    pub fn inverse(self) -> Self {
        if self.flip {
            self
        } else {
            Self {
                flip: false,
                quarter_turns: (4 - self.quarter_turns) % 4,
            }
        }
    }

    /// Applies the transform to `[H,W,C]` or `[B,H,W,C]`.
    pub fn apply<T: Float>(self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        let batched = match s.len() {
            4 => x.clone(),
            3 => x.clone().reshape(&[1, s[0], s[1], s[2]])?,
            _ => return shape_err(format!("geometric transform of {:?}", s)),
        };
        let mut y = if self.flip { flip_h(&batched) } else { batched };
        for _ in 0..self.quarter_turns {
            y = rot90(&y);
        }
        if s.len() == 3 {
            let ys = y.shape().to_vec();
            y = y.reshape(&ys[1..])?;
        }
        Ok(y)
    }

    /// Undoes [`apply`](Self::apply), bit-exactly.
    pub fn invert<T: Float>(self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.inverse().apply(y)
    }
}

impl fmt::Display for GeometricTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}rot{}", if self.flip { "flip+" } else { "" }, 90 * self.quarter_turns as u32)
    }
}

fn flip_h<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for row in 0..b * h {
        for j in (0..w).rev() {
            let o = (row * w + j) * c;
            out.extend_from_slice(&src[o..o + c]);
        }
    }
    Tensor::from_vec(s, out)
}

/// Counter-clockwise quarter turn: `out[i][j] = in[j][W-1-i]`, shape `[B,W,H,C]`.
fn rot90<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for bi in 0..b {
        for i in 0..w {
            for j in 0..h {
                let o = ((bi * h + j) * w + (w - 1 - i)) * c;
                out.extend_from_slice(&src[o..o + c]);
            }
        }
    }
    Tensor::from_vec(&[b, w, h, c], out)
}

/// How many transforms each stochastic teacher pass averages over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleMode {
    /// Every pass is a full eight-way self-ensemble.
    Full,
    /// Pass `n` of step `t` uses the single transform `(t·N + n) mod 8`, so
    /// the group is cycled across passes and steps.
    Rotating,
    /// Plain forward passes.
    Off,
}

impl EnsembleMode {
    /// Transforms used by pass `pass` of step `step` with `passes` passes per step.
    pub fn transforms(self, step: usize, passes: usize, pass: usize) -> Vec<GeometricTransform> {
        match self {
            EnsembleMode::Full => GeometricTransform::all().to_vec(),
            EnsembleMode::Rotating => vec![GeometricTransform::from_index(step * passes + pass)],
            EnsembleMode::Off => vec![GeometricTransform::IDENTITY],
        }
    }
}

impl FromStr for EnsembleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(EnsembleMode::Full),
            "rotating" => Ok(EnsembleMode::Rotating),
            "off" => Ok(EnsembleMode::Off),
            _ => Err(Error::Config(format!("unknown ensemble mode '{}' (full|rotating|off)", s))),
        }
    }
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleMode::Full => "full",
            EnsembleMode::Rotating => "rotating",
            EnsembleMode::Off => "off",
        })
    }
}

/// Runs `model` on the transformed copies of `x`, stacked along the batch
/// axis in chunks of at most `max_batch` samples when shapes allow, and
/// returns each output mapped back by the inverse transform.
pub fn transformed_outputs<T, F>(
    mut model: F,
    x: &Tensor<T>,
    transforms: &[GeometricTransform],
    max_batch: usize,
) -> Result<Vec<Tensor<T>>>
where
    T: Float,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    transformed_outputs_multi(|xs| model(&xs[0]), &[x], transforms, max_batch)
}

/// [`transformed_outputs`] for a model of several `[B,·,·,·]` inputs that are
/// transformed together (e.g. an image and its upscaled copy).
pub fn transformed_outputs_multi<T, F>(
    mut model: F,
    inputs: &[&Tensor<T>],
    transforms: &[GeometricTransform],
    max_batch: usize,
) -> Result<Vec<Tensor<T>>>
where
    T: Float,
    F: FnMut(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let first = match inputs.first() {
        Some(x) if x.rank() == 4 => x,
        _ => return shape_err("expected at least one [B,H,W,C] input"),
    };
    let b = first.shape()[0];
    if inputs.iter().any(|x| x.rank() != 4 || x.shape()[0] != b) {
        return shape_err("inputs must share the batch size");
    }
    let square = inputs.iter().all(|x| x.shape()[1] == x.shape()[2]);
    let per_chunk = if square { (max_batch / b).max(1) } else { 1 };
    let mut outs = Vec::with_capacity(transforms.len());
    for group in transforms.chunks(per_chunk) {
        let stacked = inputs
            .iter()
            .map(|x| {
                let parts = group.iter().map(|t| t.apply(x)).collect::<Result<Vec<_>>>()?;
                Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)
            })
            .collect::<Result<Vec<_>>>()?;
        let y = model(&stacked)?;
        for (k, t) in group.iter().enumerate() {
            outs.push(t.invert(&y.narrow(0, k * b, b)?)?);
        }
    }
    Ok(outs)
}

/// Pixel-wise mean of `model` over all eight transforms of `x`.
pub fn geometric_ensemble<T, F>(model: F, x: &Tensor<T>) -> Result<Tensor<T>>
where
    T: Float,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    let outs = transformed_outputs(model, x, &GeometricTransform::all(), x.shape()[0].max(1))?;
    Ok(mean_of(&outs))
}

/// Element-wise mean, accumulated in f64 in a fixed order.
pub(crate) fn mean_of<T: Float>(parts: &[Tensor<T>]) -> Tensor<T> {
    let n = parts.len() as f64;
    let mut acc = vec![0.0f64; parts[0].len()];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p.data()) {
            *a += v.as_f64();
        }
    }
    Tensor::from_vec(parts[0].shape(), acc.into_iter().map(|a| T::of(a / n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_is_group_inverse() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 2], |i| i as f64);
        for t in GeometricTransform::all() {
            assert_eq!(t.inverse().inverse(), t);
            assert_eq!(t.invert(&t.apply(&x).unwrap()).unwrap(), x, "{t}");
            // Composing with the inverse from either side gives the identity.
            assert_eq!(t.apply(&t.inverse().apply(&x).unwrap()).unwrap(), x, "{t}");
        }
    }

    #[test]
    fn rotation_orientation() {
        // [[1,2],[3,4]] turned counter-clockwise is [[2,4],[1,3]].
        let x = Tensor::<f32>::from_vec(&[2, 2, 1], vec![1., 2., 3., 4.]);
        let r = GeometricTransform::from_index(1).apply(&x).unwrap();
        assert_eq!(r.data(), &[2., 4., 1., 3.]);
        let f = GeometricTransform::from_index(4).apply(&x).unwrap();
        assert_eq!(f.data(), &[2., 1., 4., 3.]);
    }

    #[test]
    fn rotating_mode_cycles_the_group() {
        let seen: std::collections::HashSet<_> = (0..8)
            .flat_map(|step| (0..5).map(move |p| EnsembleMode::Rotating.transforms(step, 5, p)[0]))
            .collect();
        assert_eq!(seen.len(), 8);
    }
}
