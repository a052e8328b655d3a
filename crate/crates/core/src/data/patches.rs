//! Random aligned crops batched into `[B,p,p,3]` tensors.

use rand::Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Crop `(top, left, size)` of an `[H,W,C]` image.
pub fn crop(img: &Image, top: usize, left: usize, size: usize) -> Result<Image> {
    img.narrow(0, top, size)?.narrow(1, left, size)
}

fn usable<'a>(images: impl Iterator<Item = (usize, &'a Image)>, patch: usize) -> Vec<usize> {
    images
        .filter_map(|(i, img)| {
            if img.shape()[0] >= patch && img.shape()[1] >= patch {
                Some(i)
            } else {
                log::warn!("skipping image {} ({:?}): smaller than patch {}", i, img.shape(), patch);
                None
            }
        })
        .collect()
}

fn stack(parts: Vec<Image>) -> Result<Tensor<f32>> {
    let refs: Vec<&Image> = parts.iter().collect();
    let s = parts[0].shape().to_vec();
    Tensor::concat(&refs, 0)?.reshape(&[parts.len(), s[0], s[1], s[2]])
}

/// `batch` LR crops of side `patch` drawn uniformly over images and offsets.
pub fn sample_lr_batch<R: Rng + ?Sized>(
    images: &[Image],
    batch: usize,
    patch: usize,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let ok = usable(images.iter().enumerate(), patch);
    if ok.is_empty() || batch == 0 {
        return Err(Error::Config(format!("no image can provide a {}px patch", patch)));
    }
    let mut parts = Vec::with_capacity(batch);
    for _ in 0..batch {
        let img = &images[ok[rng.random_range(0..ok.len())]];
        let top = rng.random_range(0..=img.shape()[0] - patch);
        let left = rng.random_range(0..=img.shape()[1] - patch);
        parts.push(crop(img, top, left, patch)?);
    }
    stack(parts)
}

/// Aligned LR/HR crop pairs: LR `(i, j, p)` pairs with HR `(s·i, s·j, s·p)`.
pub fn sample_pair_batch<R: Rng + ?Sized>(
    lr: &[Image],
    hr: &[Image],
    batch: usize,
    patch: usize,
    scale: usize,
    rng: &mut R,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if lr.len() != hr.len() {
        return Err(Error::Config("LR and HR lists differ in length".into()));
    }
    let ok = usable(lr.iter().enumerate(), patch);
    if ok.is_empty() || batch == 0 {
        return Err(Error::Config(format!("no image can provide a {}px patch", patch)));
    }
    let (mut lp, mut hp) = (Vec::with_capacity(batch), Vec::with_capacity(batch));
    for _ in 0..batch {
        let i = ok[rng.random_range(0..ok.len())];
        let top = rng.random_range(0..=lr[i].shape()[0] - patch);
        let left = rng.random_range(0..=lr[i].shape()[1] - patch);
        lp.push(crop(&lr[i], top, left, patch)?);
        hp.push(crop(&hr[i], top * scale, left * scale, patch * scale)?);
    }
    Ok((stack(lp)?, stack(hp)?))
}

/// Stacks equally sized images into one batch.
pub fn stack_images(images: &[Image]) -> Result<Tensor<f32>> {
    if images.is_empty() {
        return Err(Error::Config("no images to stack".into()));
    }
    stack(images.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pairs_are_aligned() {
        let lr = vec![Tensor::from_fn(&[8, 8, 3], |i| i as f32)];
        let hr = vec![Tensor::from_fn(&[16, 16, 3], |i| {
            let (y, x, c) = (i / 48, (i / 3) % 16, i % 3);
            (((y / 2) * 8 + x / 2) * 3 + c) as f32
        })];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (l, h) = sample_pair_batch(&lr, &hr, 2, 4, 2, &mut rng).unwrap();
            assert_eq!(l.shape(), &[2, 4, 4, 3]);
            assert_eq!(h.shape(), &[2, 8, 8, 3]);
            // The HR crop is the nearest-upsampled LR crop by construction.
            let up = crate::numerics::upsample_nearest_tensor(&l, 2);
            assert_eq!(up, h);
        }
    }

    #[test]
    fn small_images_are_skipped() {
        let imgs = vec![Tensor::zeros(&[4, 4, 3]), Tensor::ones(&[8, 8, 3])];
        let b = sample_lr_batch(&imgs, 3, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(b.data().iter().all(|&v| v == 1.0));
        assert!(sample_lr_batch(&imgs[..1], 1, 6, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
