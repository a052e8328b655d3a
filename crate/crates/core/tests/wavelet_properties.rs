use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soda_sr::numerics::gradcheck::{check_unary, DEFAULT_STEP};
use soda_sr::numerics::{Tape, Tensor};
use soda_sr::wavelet::{
    decompose_tensor, high_bands_tensor, reconstruct_tensor, wpt_decompose, wpt_reconstruct,
    SubbandSet,
};

fn randn<T: soda_sr::numerics::Float>(shape: &[usize], seed: u64) -> Tensor<T> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn parseval_at_level_two_f64() {
    let x = randn::<f64>(&[1, 8, 8, 1], 1);
    let s = decompose_tensor(&x, 2).unwrap();
    assert_eq!(s.shape(), &[16, 1, 2, 2, 1]);
    // Direct summation over the 16 bands.
    let mut energy = 0.0;
    for band in 0..16 {
        energy += s.narrow(0, band, 1).unwrap().sum_squares();
    }
    assert!((energy - x.sum_squares()).abs() < 1e-10);
}

#[test]
fn round_trip_f64_all_levels() {
    for level in 1..=4 {
        let x = randn::<f64>(&[2, 32, 16, 3], level as u64);
        let y = reconstruct_tensor(&decompose_tensor(&x, level).unwrap(), level).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-10, "level {level}");
    }
}

#[test]
fn editing_only_the_low_band_leaves_high_bands_of_the_difference_empty() {
    let level = 2;
    let x = randn::<f64>(&[1, 16, 16, 2], 9);
    let tape = Tape::no_grad();
    let s = wpt_decompose(tape.constant(x.clone()), level).unwrap();
    let low = s.low().unwrap();
    let bumped = low.add_scalar(0.7).mul_scalar(1.3);
    let edited = wpt_reconstruct(&s.with_low(bumped).unwrap()).unwrap().value();
    let diff = edited.zip_map(&x, |a, b| a - b).unwrap();
    let d = decompose_tensor(&diff, level).unwrap();
    let high = d.narrow(0, 1, 15).unwrap();
    assert!(high.sum_squares() < 1e-6);
    assert!(d.narrow(0, 0, 1).unwrap().sum_squares() > 1.0);
    // The difference is 2^level-periodic only inside each block: every 4x4
    // block of the difference is constant.
    let dd = diff.data();
    for by in 0..4 {
        for bx in 0..4 {
            for ch in 0..2 {
                let v0 = dd[((by * 4) * 16 + bx * 4) * 2 + ch];
                for y in 0..4 {
                    for xx in 0..4 {
                        let v = dd[((by * 4 + y) * 16 + bx * 4 + xx) * 2 + ch];
                        assert!((v - v0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn band_accessors_agree_with_stack() {
    let x = randn::<f32>(&[2, 8, 8, 3], 4);
    let tape = Tape::no_grad();
    let s = wpt_decompose(tape.constant(x), 1).unwrap();
    assert_eq!(s.count(), 4);
    let rebuilt = SubbandSet::from_bands(1, &(0..4).map(|i| s.band(i).unwrap()).collect::<Vec<_>>()).unwrap();
    assert_eq!(*rebuilt.stacked().value(), *s.stacked().value());
}

#[test]
fn decompose_and_reconstruct_gradients() {
    let x = randn::<f64>(&[1, 8, 8, 2], 5);
    let w = randn::<f64>(&[16, 1, 2, 2, 2], 6);
    let err = check_unary(
        |v| {
            let s = wpt_decompose(v, 2)?;
            let wv = v.tape().constant(w.clone());
            s.stacked().mul(wv)
        },
        &x,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    let bands = randn::<f64>(&[16, 1, 2, 2, 2], 7);
    let err = check_unary(
        |v| {
            let s = SubbandSet::from_stacked(2, v)?;
            Ok(wpt_reconstruct(&s)?.square())
        },
        &bands,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    let err = check_unary(
        |v| Ok(soda_sr::wavelet::high_bands(v, 2)?.square()),
        &x,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    let err = check_unary(
        |v| Ok(soda_sr::wavelet::low_band(v, 3)?.square()),
        &x,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn perfect_reconstruction_and_parseval_f32(seed in any::<u64>(), level in 1usize..=4, b in 1usize..3, c in 1usize..4) {
        let x = randn::<f32>(&[b, 16, 32, c], seed);
        let s = decompose_tensor(&x, level).unwrap();
        let y = reconstruct_tensor(&s, level).unwrap();
        prop_assert!(y.max_abs_diff(&x) < 1e-5);
        let rel = (s.sum_squares() - x.sum_squares()).abs() / x.sum_squares();
        prop_assert!(rel < 1e-4);
    }

    #[test]
    fn decomposition_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, bcoef in -2.0f32..2.0) {
        let x = randn::<f32>(&[1, 8, 8, 2], seed);
        let y = randn::<f32>(&[1, 8, 8, 2], seed ^ 0x9e37);
        let combo = x.zip_map(&y, |u, v| a * u + bcoef * v).unwrap();
        let lhs = decompose_tensor(&combo, 3).unwrap();
        let dx = decompose_tensor(&x, 3).unwrap();
        let dy = decompose_tensor(&y, 3).unwrap();
        let rhs = dx.zip_map(&dy, |u, v| a * u + bcoef * v).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-5);
    }

    #[test]
    fn constant_images_have_no_detail(c in -1.0f64..1.0, level in 1usize..=3) {
        let x = Tensor::<f64>::full(&[1, 8, 8, 3], c);
        prop_assert!(high_bands_tensor(&x, level).unwrap().max_abs() < 1e-12);
    }
}
