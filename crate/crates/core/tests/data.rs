use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soda_sr::backbone::{NetConfig, ToySRNet};
use soda_sr::data::{
    bicubic_resize, crop, degrade, generate, psnr_y, sample_lr_batch, ssim, stack_images, train_source, DataConfig,
    Datasets, DegradationSpec, Image, SourceTrainConfig,
};
use soda_sr::numerics::Tensor;
use soda_sr::selftrain::evaluate;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ramp(h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[1, h, w, 1], |i| 0.1 + 0.01 * (i % w) as f64 + 0.003 * (i / w) as f64)
}

#[test]
fn bicubic_reproduces_linear_ramps_away_from_borders() {
    let x = ramp(16, 16);
    for factor in [2.0, 4.0, 0.5] {
        let y = bicubic_resize(&x, factor).unwrap();
        let (h, w) = (y.shape()[1], y.shape()[2]);
        // Source coordinate of output pixel i: (i + 0.5)/factor − 0.5.
        let src = |i: usize| (i as f64 + 0.5) / factor - 0.5;
        let margin = (3.0 * factor.max(1.0)) as usize;
        for r in margin..h - margin {
            for c in margin..w - margin {
                let want = 0.1 + 0.01 * src(c) + 0.003 * src(r);
                let got = y.data()[r * w + c];
                assert!((got - want).abs() < 1e-5, "factor {factor} at ({r},{c}): {got} vs {want}");
            }
        }
    }
}

#[test]
fn degradation_of_a_constant_image_is_constant() {
    let hr: Image = Tensor::full(&[32, 32, 3], 0.4);
    let spec = DegradationSpec {
        blur_sigma: Some(1.8),
        scale: 4,
        noise_std: 0.0,
    };
    let lr = degrade(&hr, &spec, &mut rng(1)).unwrap();
    assert_eq!(lr.shape(), &[8, 8, 3]);
    assert!(lr.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
}

#[test]
fn degradation_noise_has_the_requested_spread() {
    let hr: Image = Tensor::full(&[256, 256, 3], 0.5);
    let spec = DegradationSpec {
        blur_sigma: None,
        scale: 4,
        noise_std: 0.05,
    };
    let lr = degrade(&hr, &spec, &mut rng(2)).unwrap();
    let n = lr.len() as f64;
    let mean = lr.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = lr.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!((mean - 0.5).abs() < 0.002, "{mean}");
    assert!((var.sqrt() - 0.05).abs() < 0.002, "{}", var.sqrt());
}

#[test]
fn crops_are_uniform_over_offsets() {
    // One 6×6 image, 3×3 patches: 16 equally likely offsets, identified by
    // the top-left pixel value.
    let img: Image = Tensor::from_fn(&[6, 6, 3], |i| (i / 3) as f32);
    let mut counts = [0usize; 36];
    let mut r = rng(3);
    let draws = 4000;
    for _ in 0..draws / 8 {
        let b = sample_lr_batch(std::slice::from_ref(&img), 8, 3, &mut r).unwrap();
        for k in 0..8 {
            counts[b.data()[k * 27] as usize] += 1;
        }
    }
    let valid: Vec<usize> = (0..36).filter(|i| i % 6 < 4 && i / 6 < 4).collect();
    assert_eq!(valid.iter().map(|&i| counts[i]).sum::<usize>(), draws);
    let expected = draws as f64 / 16.0;
    let chi2: f64 = valid.iter().map(|&i| (counts[i] as f64 - expected).powi(2) / expected).sum();
    // 15 degrees of freedom, p = 0.001.
    assert!(chi2 < 37.7, "chi2 {chi2}");
    assert_eq!(crop(&img, 2, 1, 3).unwrap().data()[0], 13.0);
}

#[test]
fn psnr_examples() {
    let a: Tensor<f64> = Tensor::full(&[1, 12, 12, 3], 0.5);
    let b: Tensor<f64> = Tensor::full(&[1, 12, 12, 3], 0.6);
    // Luma differs by 0.1 everywhere: MSE 0.01, 20 dB.
    assert!((psnr_y(&a, &b, 2).unwrap() - 20.0).abs() < 1e-9);
    assert!((psnr_y(&b, &a, 2).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr_y(&a, &a, 2).unwrap() > 98.0);
    assert!(psnr_y(&a, &b, 6).is_err());
}

#[test]
fn ssim_of_an_inverted_texture_is_negative() {
    let x: Tensor<f64> = Tensor::uniform(&[1, 32, 32, 3], 0.0, 1.0, &mut rng(4));
    let inv = x.map(|v| 1.0 - v);
    assert!(ssim(&x, &inv, 4).unwrap() < 0.0);
    assert!((ssim(&x, &x, 4).unwrap() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>(), shave in 0usize..3) {
        let a: Tensor<f64> = Tensor::uniform(&[2, 24, 24, 3], 0.0, 1.0, &mut rng(seed));
        let b: Tensor<f64> = Tensor::uniform(&[2, 24, 24, 3], 0.0, 1.0, &mut rng(seed ^ 1));
        prop_assert!((psnr_y(&a, &b, shave).unwrap() - psnr_y(&b, &a, shave).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &b, shave).unwrap() - ssim(&b, &a, shave).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bicubic_preserves_constants(c in 0.0f64..1.0, factor in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0])) {
        let x: Tensor<f64> = Tensor::full(&[1, 8, 8, 2], c);
        let y = bicubic_resize(&x, factor).unwrap();
        prop_assert!(y.data().iter().all(|v| (v - c).abs() < 1e-12));
    }
}

fn small(seed: u64) -> Datasets {
    generate(&DataConfig {
        hr_size: 128,
        source_pairs: 16,
        target_train: 2,
        target_val: 2,
        target_test: 2,
        seed,
        ..DataConfig::default()
    })
    .unwrap()
}

#[test]
fn default_dataset_sizes_and_determinism() {
    let cfg = DataConfig::default();
    assert_eq!(
        (cfg.hr_size, cfg.source_pairs, cfg.target_train, cfg.target_val, cfg.target_test),
        (256, 64, 64, 16, 16)
    );
    assert!(DataConfig { hr_size: 96, ..cfg.clone() }.validate().is_err());
    let a = small(5);
    assert_eq!(a, small(5));
    assert_ne!(a.source_train.hr, small(6).source_train.hr);
    assert_eq!(a.source_train.lr[0].shape(), &[32, 32, 3]);
}

#[test]
fn datasets_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let d = small(7);
    d.save(dir.path(), false).unwrap();
    assert!(d.save(dir.path(), false).is_err());
    d.save(dir.path(), true).unwrap();
    assert_eq!(Datasets::load(dir.path()).unwrap(), d);
}

#[test]
fn source_training_learns_and_beats_bicubic() {
    let train = small(8);
    let held_out = small(9).source_train;
    let cfg = NetConfig {
        channels: 8,
        blocks: 2,
        scale: 4,
    };
    let mut net = ToySRNet::<f32>::init(cfg, &mut rng(10)).unwrap();
    let tc = SourceTrainConfig {
        iterations: 400,
        batch: 4,
        patch: 16,
        learning_rate: 2e-3,
    };
    let losses = train_source(&mut net, &train.source_train, &tc, &mut rng(11)).unwrap();
    let head: f64 = losses[..50].iter().sum::<f64>() / 50.0;
    let tail: f64 = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(tail < head, "{head} -> {tail}");

    let (model, _) = evaluate(&net, &held_out, 8).unwrap();
    let hr = stack_images(&held_out.hr).unwrap();
    let up = bicubic_resize(&stack_images(&held_out.lr).unwrap(), 4.0).unwrap().clamp(0.0, 1.0);
    let bicubic = psnr_y(&up, &hr, 4).unwrap();
    assert!(model >= bicubic + 0.3, "model {model:.3} dB vs bicubic {bicubic:.3} dB");
}
