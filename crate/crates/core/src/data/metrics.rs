//! PSNR on BT.601 luma and SSIM, both after shaving a border.

use crate::error::{shape_err, Result};
use crate::numerics::{Float, Tensor};

pub const PSNR_CAP: f64 = 99.0;

/// Splits `[H,W,3]` or `[B,H,W,3]` into per-image f64 planes `[H][W][3]`.
fn images<T: Float>(x: &Tensor<T>) -> Result<(usize, usize, usize, Vec<f64>)> {
    let s = x.shape();
    let (b, h, w) = match s.len() {
        3 if s[2] == 3 => (1, s[0], s[1]),
        4 if s[3] == 3 => (s[0], s[1], s[2]),
        _ => return shape_err(format!("expected RGB images, got {:?}", s)),
    };
    Ok((b, h, w, x.data().iter().map(|v| v.as_f64()).collect()))
}

fn check_pair<T: Float>(a: &Tensor<T>, b: &Tensor<T>, shave: usize) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("metric inputs differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let s = a.shape();
    let (h, w) = if s.len() == 4 { (s[1], s[2]) } else { (s[0], s[1]) };
    if h <= 2 * shave || w <= 2 * shave {
        return shape_err(format!("image {:?} too small to shave {}", s, shave));
    }
    Ok(())
}

fn luma(p: &[f64]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Mean PSNR (dB) over the batch on the Y channel, peak 1, capped at 99.
pub fn psnr_y<T: Float>(sr: &Tensor<T>, hr: &Tensor<T>, shave: usize) -> Result<f64> {
    check_pair(sr, hr, shave)?;
    let (b, h, w, a) = images(sr)?;
    let (_, _, _, r) = images(hr)?;
    let mut total = 0.0;
    for bi in 0..b {
        let mut se = 0.0;
        for y in shave..h - shave {
            for x in shave..w - shave {
                let i = ((bi * h + y) * w + x) * 3;
                let d = luma(&a[i..i + 3]) - luma(&r[i..i + 3]);
                se += d * d;
            }
        }
        let mse = se / ((h - 2 * shave) * (w - 2 * shave)) as f64;
        total += if mse <= 0.0 {
            PSNR_CAP
        } else {
            (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
        };
    }
    Ok(total / b as f64)
}

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; WIN] {
    let mut w = [0.0; WIN];
    let r = (WIN / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" Gaussian filtering of an `h×w` plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64; WIN]) -> Vec<f64> {
    let (ho, wo) = (h - WIN + 1, w - WIN + 1);
    let mut mid = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            mid[y * wo + x] = (0..WIN).map(|k| g[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..WIN).map(|k| g[k] * mid[(y + k) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the batch, averaged over RGB channels.
pub fn ssim<T: Float>(sr: &Tensor<T>, hr: &Tensor<T>, shave: usize) -> Result<f64> {
    check_pair(sr, hr, shave)?;
    let (b, h, w, a) = images(sr)?;
    let (_, _, _, r) = images(hr)?;
    let (hs, ws) = (h - 2 * shave, w - 2 * shave);
    if hs < WIN || ws < WIN {
        return shape_err(format!("SSIM needs at least {}x{} pixels after shaving", WIN, WIN));
    }
    let g = window();
    let mut total = 0.0;
    for bi in 0..b {
        for c in 0..3 {
            let plane = |src: &[f64]| -> Vec<f64> {
                let mut p = Vec::with_capacity(hs * ws);
                for y in shave..h - shave {
                    for x in shave..w - shave {
                        p.push(src[((bi * h + y) * w + x) * 3 + c]);
                    }
                }
                p
            };
            let (x, y) = (plane(&a), plane(&r));
            let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
            let mx = filter(&x, hs, ws, &g);
            let my = filter(&y, hs, ws, &g);
            let sxx = filter(&prod(&x, &x), hs, ws, &g);
            let syy = filter(&prod(&y, &y), hs, ws, &g);
            let sxy = filter(&prod(&x, &y), hs, ws, &g);
            let mut acc = 0.0;
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let (vx, vy, cxy) = (sxx[i] - ux * ux, syy[i] - uy * uy, sxy[i] - ux * uy);
                acc += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2))
                    / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
            }
            total += acc / mx.len() as f64;
        }
    }
    Ok(total / (3 * b) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Tensor::<f32>::zeros(&[16, 16, 3]);
        let b = Tensor::<f32>::full(&[16, 16, 3], 0.1);
        assert_eq!(psnr_y(&a, &a, 4).unwrap(), PSNR_CAP);
        assert!((psnr_y(&a, &b, 4).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr_y(&a, &Tensor::zeros(&[16, 15, 3]), 0).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = Tensor::<f64>::from_fn(&[20, 24, 3], |i| ((i * 7919) % 101) as f64 / 100.0);
        assert!((ssim(&a, &a, 2).unwrap() - 1.0).abs() < 1e-12);
    }
}
