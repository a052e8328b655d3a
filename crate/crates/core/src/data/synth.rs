//! Procedural HR images and the degradations that map them to LR.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::bicubic_resize;
use super::resize::{resample_outer, transpose, AxisPlan};
use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// An `[H,W,3]` image with values in [0,1].
pub type Image = Tensor<f32>;

/// Smooth gradients, hard-edged shapes, stripes and band-limited texture.
pub fn synthesize_hr<R: Rng + ?Sized>(count: usize, size: usize, rng: &mut R) -> Vec<Image> {
    (0..count).map(|_| synthesize_one(size, rng)).collect()
}

fn synthesize_one<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Image {
    let n = size as f64;
    let mut img = vec![0.0f64; size * size * 3];

    // Low-frequency colour field.
    let mut base = [[0.0f64; 3]; 3];
    for ch in base.iter_mut() {
        *ch = [rng.random_range(0.2..0.8), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    }
    let (fx, fy, ph) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.0..6.3));
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / n, y as f64 / n);
            let wave = 0.1 * (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin();
            for c in 0..3 {
                img[(y * size + x) * 3 + c] = base[c][0] + base[c][1] * (u - 0.5) + base[c][2] * (v - 0.5) + wave;
            }
        }
    }

    // Rectangles and discs with partial opacity.
    for _ in 0..rng.random_range(4..10) {
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let alpha = rng.random_range(0.5..1.0);
        let (cx, cy) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        let (rw, rh) = (rng.random_range(n * 0.04..n * 0.3), rng.random_range(n * 0.04..n * 0.3));
        let disc = rng.random_bool(0.35);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / rw, (y as f64 + 0.5 - cy) / rh);
                let inside = if disc { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    for c in 0..3 {
                        let p = &mut img[(y * size + x) * 3 + c];
                        *p = (1.0 - alpha) * *p + alpha * color[c];
                    }
                }
            }
        }
    }

    // Periodic stripes inside a random window: detail an SR model can learn.
    for _ in 0..rng.random_range(1..4) {
        let period = rng.random_range(5.0..14.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let amp = rng.random_range(0.1..0.3);
        let (x0, y0) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
        let (x1, y1) = (x0 + rng.random_range(size / 8..size / 2), y0 + rng.random_range(size / 8..size / 2));
        let (ca, sa) = (angle.cos(), angle.sin());
        for y in y0..y1.min(size) {
            for x in x0..x1.min(size) {
                let t = (x as f64 * ca + y as f64 * sa) / period;
                let s = amp * (std::f64::consts::TAU * t).sin();
                for c in 0..3 {
                    img[(y * size + x) * 3 + c] += s;
                }
            }
        }
    }

    // Band-limited texture: a handful of mid-frequency plane waves.
    let tex_amp = rng.random_range(0.02..0.06);
    for _ in 0..6 {
        let f = rng.random_range(0.03..0.12);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (kx, ky) = (f * angle.cos(), f * angle.sin());
        for y in 0..size {
            for x in 0..size {
                let s = tex_amp * (std::f64::consts::TAU * (kx * x as f64 + ky * y as f64) + ph).sin();
                for c in 0..3 {
                    img[(y * size + x) * 3 + c] += s;
                }
            }
        }
    }

    Tensor::from_vec(&[size, size, 3], img.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}

/// HR → LR mapping: optional Gaussian blur, bicubic downsampling, noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub blur_sigma: Option<f64>,
    pub scale: usize,
    pub noise_std: f64,
}

impl DegradationSpec {
    pub fn bicubic(scale: usize) -> Self {
        Self {
            blur_sigma: None,
            scale,
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 || !(self.noise_std >= 0.0) || self.blur_sigma.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config(format!("invalid degradation {:?}", self)));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps over `[-r, r]`, `r = ceil(3σ)`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of an `[H,W,C]` image, edge-clamped.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if img.rank() != 3 {
        return shape_err(format!("blur expects [H,W,C], got {:?}", img.shape()));
    }
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let taps = gaussian_taps(sigma);
    let x: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let tall = resample_outer(&x, w * c, &AxisPlan::convolution(h, &taps));
    let wide = resample_outer(&transpose(&tall, h, w, c), h * c, &AxisPlan::convolution(w, &taps));
    let out: Vec<f32> = transpose(&wide, w, h, c).into_iter().map(|v| v as f32).collect();
    Tensor::new(img.shape(), out)
}

/// Degrades an HR image; the noise draw comes from `rng`. The result is
/// clamped to [0,1].
pub fn degrade<R: Rng + ?Sized>(hr: &Image, spec: &DegradationSpec, rng: &mut R) -> Result<Image> {
    Ok(degrade_unclamped(hr, spec, rng)?.clamp(0.0, 1.0))
}

fn degrade_unclamped<R: Rng + ?Sized>(
    hr: &Image,
    spec: &DegradationSpec,
    rng: &mut R,
) -> Result<Image> {
    spec.validate()?;
    if hr.rank() != 3 || hr.shape()[0] % spec.scale != 0 || hr.shape()[1] % spec.scale != 0 {
        return shape_err(format!(
            "HR image {:?} is not divisible by scale {}",
            hr.shape(),
            spec.scale
        ));
    }
    let blurred = match spec.blur_sigma {
        Some(s) => gaussian_blur(hr, s)?,
        None => hr.clone(),
    };
    let mut lr = bicubic_resize(&blurred, 1.0 / spec.scale as f64)?;
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for v in lr.data_mut() {
            *v += normal.sample(rng) as f32;
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn images_are_in_range_and_deterministic() {
        let a = synthesize_hr(2, 64, &mut ChaCha8Rng::seed_from_u64(3));
        let b = synthesize_hr(2, 64, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        for img in &a {
            assert_eq!(img.shape(), &[64, 64, 3]);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = synthesize_hr(1, 64, &mut ChaCha8Rng::seed_from_u64(1)).remove(0);
        let b = synthesize_hr(1, 64, &mut ChaCha8Rng::seed_from_u64(2)).remove(0);
        let mse = a.zip_map(&b, |x, y| (x - y) * (x - y)).unwrap().mean();
        assert!(mse > 0.01, "{mse}");
    }

    #[test]
    fn blur_taps_are_normalized() {
        let t = gaussian_taps(1.8);
        assert_eq!(t.len(), 2 * 6 + 1);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degrade_rejects_indivisible_sizes() {
        let hr = Tensor::zeros(&[30, 32, 3]);
        assert!(degrade(&hr, &DegradationSpec::bicubic(4), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
