//! Separable cubic-convolution resampling (Catmull-Rom, a = −0.5).

use crate::error::{shape_err, Result};
use crate::numerics::{Float, Tensor};

const A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps and normalized weights of every output sample along one axis.
pub(crate) struct AxisPlan {
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisPlan {
    /// Same-size convolution with `kernel` (odd length), clamped at the edges.
    pub(crate) fn convolution(size: usize, kernel: &[f64]) -> Self {
        let r = (kernel.len() / 2) as isize;
        let taps = (0..size as isize)
            .map(|i| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| ((i + k as isize - r).clamp(0, size as isize - 1) as usize, t))
                    .collect()
            })
            .collect();
        Self { taps }
    }

    fn new(input: usize, output: usize) -> Self {
        let factor = output as f64 / input as f64;
        // Downscaling widens the kernel (antialiasing).
        let kscale = factor.min(1.0);
        let support = 2.0 / kscale;
        let taps = (0..output)
            .map(|i| {
                let center = (i as f64 + 0.5) / factor - 0.5;
                let lo = (center - support).floor() as isize + 1;
                let hi = (center + support).floor() as isize;
                let mut taps: Vec<(usize, f64)> = Vec::new();
                for j in lo..=hi {
                    let wgt = cubic((center - j as f64) * kscale);
                    if wgt == 0.0 {
                        continue;
                    }
                    let idx = j.clamp(0, input as isize - 1) as usize;
                    match taps.iter_mut().find(|(k, _)| *k == idx) {
                        Some(t) => t.1 += wgt,
                        None => taps.push((idx, wgt)),
                    }
                }
                let total: f64 = taps.iter().map(|t| t.1).sum();
                taps.iter_mut().for_each(|t| t.1 /= total);
                taps
            })
            .collect();
        Self { taps }
    }
}

/// Applies `plan` along the outer axis of a `[n_in, line]` buffer.
pub(crate) fn resample_outer(src: &[f64], line: usize, plan: &AxisPlan) -> Vec<f64> {
    let mut out = Vec::with_capacity(plan.taps.len() * line);
    let row = |i: usize| &src[i * line..(i + 1) * line];
    for taps in &plan.taps {
        let start = out.len();
        match taps.split_first() {
            Some((&(i, wgt), rest)) => {
                out.extend(row(i).iter().map(|&v| wgt * v));
                let dst = &mut out[start..];
                for &(i, wgt) in rest {
                    dst.iter_mut().zip(row(i)).for_each(|(a, &v)| *a += wgt * v);
                }
            }
            None => out.resize(start + line, 0.0),
        }
    }
    out
}

/// `[rows, cols, c]` → `[cols, rows, c]`.
pub(crate) fn transpose(src: &[f64], rows: usize, cols: usize, c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(src.len());
    for q in 0..cols {
        for r in 0..rows {
            let from = (r * cols + q) * c;
            out.extend_from_slice(&src[from..from + c]);
        }
    }
    out
}

/// Output size of a resize by `factor`, which must land on whole pixels.
fn scaled(size: usize, factor: f64) -> Result<usize> {
    let out = size as f64 * factor;
    if !(factor > 0.0) || (out - out.round()).abs() > 1e-9 || out.round() < 1.0 {
        return shape_err(format!("cannot resize {} pixels by {}", size, factor));
    }
    Ok(out.round() as usize)
}

/// Resizes `[H,W,C]` or `[B,H,W,C]` images by `factor` (e.g. 4.0 or 0.25),
/// clamping reads at the borders.
pub fn bicubic_resize<T: Float>(img: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    let batched = match img.rank() {
        3 => false,
        4 => true,
        _ => return shape_err(format!("bicubic_resize expects an image, got {:?}", img.shape())),
    };
    let s = img.shape();
    let (b, h, w, c) = if batched {
        (s[0], s[1], s[2], s[3])
    } else {
        (1, s[0], s[1], s[2])
    };
    let (ho, wo) = (scaled(h, factor)?, scaled(w, factor)?);
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (py, px) = (AxisPlan::new(h, ho), AxisPlan::new(w, wo));
    let mut out = Vec::with_capacity(b * ho * wo * c);
    let plane = h * w * c;
    for bi in 0..b {
        let x: Vec<f64> = img.data()[bi * plane..(bi + 1) * plane].iter().map(|v| v.as_f64()).collect();
        // Both passes run along the outer axis over contiguous lines; a
        // transpose in between turns columns into rows.
        let tall = resample_outer(&x, w * c, &py);
        let wide = resample_outer(&transpose(&tall, ho, w, c), ho * c, &px);
        out.extend(transpose(&wide, wo, ho, c).into_iter().map(T::of));
    }
    let shape: Vec<usize> = if batched { vec![b, ho, wo, c] } else { vec![ho, wo, c] };
    Tensor::new(&shape, out)
}
