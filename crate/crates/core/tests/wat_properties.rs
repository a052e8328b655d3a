use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soda_sr::numerics::gradcheck::finite_difference_check;
use soda_sr::numerics::{Binding, Float, ParamStore, Tape, Tensor};
use soda_sr::wat::{
    baa_forward, compute_reference_points, mhda_forward, wat_forward, wat_forward_traced, Fusion,
    LevelSet, WatConfig, WatParams,
};
use soda_sr::wavelet::decompose_tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn params<T: Float>(cfg: &WatConfig, seed: u64) -> WatParams<T> {
    WatParams::init(cfg.clone(), &mut rng(seed)).unwrap()
}

/// Replaces every zero-initialized tensor so all paths carry signal.
fn perturb<T: Float>(store: &mut ParamStore<T>, seed: u64, std: f64) {
    let mut r = rng(seed);
    for (_, t) in store.iter_mut() {
        let noise = Tensor::<T>::randn(t.shape(), std, &mut r);
        t.add_assign(&noise);
    }
}

fn run<T: Float>(x: &Tensor<T>, wp: &WatParams<T>) -> Tensor<T> {
    let tape = Tape::no_grad();
    let p = wp.params.bind(&tape, false);
    (*wat_forward(tape.constant(x.clone()), &p, &wp.config).unwrap().value()).clone()
}

#[test]
fn identity_at_init_with_mean_fusion() {
    let cfg = WatConfig::new(8);
    let wp = params::<f32>(&cfg, 1);
    let x = Tensor::<f32>::uniform(&[3, 32, 16, 8], -1.0, 1.0, &mut rng(2));
    let y = run(&x, &wp);
    assert_eq!(y.shape(), x.shape());
    assert!(y.max_abs_diff(&x) < 1e-6, "{}", y.max_abs_diff(&x));
}

#[test]
fn sum_fusion_at_init_is_level_count_times_input() {
    let mut cfg = WatConfig::new(8);
    cfg.fusion = Fusion::Sum;
    let wp = params::<f64>(&cfg, 3);
    let x = Tensor::<f64>::randn(&[2, 16, 16, 8], 1.0, &mut rng(4));
    let y = run(&x, &wp);
    assert!(y.max_abs_diff(&x.scale(4.0)) < 1e-10);
}

#[test]
fn high_bands_are_bit_preserved_and_recoverable() {
    let cfg = WatConfig::new(4);
    let mut wp = params::<f64>(&cfg, 5);
    perturb(&mut wp.params, 6, 0.3);
    let x = Tensor::<f64>::randn(&[2, 16, 16, 4], 1.0, &mut rng(7));
    let tape = Tape::no_grad();
    let p = wp.params.bind(&tape, false);
    let trace = wat_forward_traced(tape.constant(x), &p, &cfg).unwrap();
    for (orig, aug) in trace.original.iter().zip(&trace.augmented) {
        let level = orig.level();
        let n = orig.count();
        let o = orig.stacked().value().narrow(0, 1, n - 1).unwrap();
        let a = aug.stacked().value().narrow(0, 1, n - 1).unwrap();
        assert_eq!(o, a, "level {level}");
        assert_ne!(*orig.low().unwrap().value(), *aug.low().unwrap().value());
        // Decompose the reconstruction again and compare detail bands.
        let rec = soda_sr::wavelet::reconstruct_tensor(&aug.stacked().value(), level).unwrap();
        let again = decompose_tensor(&rec, level).unwrap().narrow(0, 1, n - 1).unwrap();
        assert!(again.max_abs_diff(&o) < 1e-5);
    }
}

#[test]
fn baa_zero_output_projection_gives_zero() {
    let cfg = WatConfig::new(4);
    let wp = params::<f64>(&cfg, 8);
    let tape = Tape::no_grad();
    let p = wp.params.bind(&tape, false);
    let s0 = tape.constant(Tensor::randn(&[3, 5, 4], 1.0, &mut rng(9)));
    assert_eq!(baa_forward(s0, &p, 2).unwrap().value().max_abs(), 0.0);
}

#[test]
fn attention_weights_are_distributions() {
    let cfg = WatConfig::new(8);
    let mut wp = params::<f32>(&cfg, 10);
    perturb(&mut wp.params, 11, 0.5);
    let x = Tensor::<f32>::randn(&[2, 16, 16, 8], 1.0, &mut rng(12));
    let tape = Tape::no_grad();
    let p = wp.params.bind(&tape, false);
    let trace = wat_forward_traced(tape.constant(x), &p, &cfg).unwrap();
    let a = trace.attention.value();
    assert_eq!(a.shape(), &[2, 64 + 16 + 4 + 1, 4, 16]);
    for row in a.data().chunks(16) {
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn mhda_uniform_weights_zero_offsets_closed_form() {
    // Frozen heads: every sample of a head lands on the reference point, so
    // the output is W1 * W2 * mean over levels of the bilinear sample at p_i.
    let mut cfg = WatConfig::new(4);
    cfg.heads = 2;
    cfg.samples = 3;
    cfg.levels = LevelSet::new(vec![1, 2]).unwrap();
    let mut wp = params::<f64>(&cfg, 13);
    let mut r = rng(14);
    wp.params.insert("mhda.out", Tensor::randn(&[4, 4], 1.0, &mut r));
    let (h, w) = (8, 8);
    let maps_t = [
        Tensor::<f64>::randn(&[1, h / 2, w / 2, 4], 1.0, &mut r),
        Tensor::<f64>::randn(&[1, h / 4, w / 4, 4], 1.0, &mut r),
    ];
    let tokens_t = Tensor::<f64>::randn(&[1, 16 + 4, 4], 1.0, &mut r);
    let refs = compute_reference_points::<f64>(&cfg.levels, h, w).unwrap();
    let tape = Tape::no_grad();
    let p = wp.params.bind(&tape, false);
    let maps: Vec<_> = maps_t.iter().map(|m| tape.constant(m.clone())).collect();
    let (out, _) = mhda_forward(tape.constant(tokens_t), &maps, &refs, &p, &cfg).unwrap();

    let wv = wp.params.get("mhda.value").unwrap();
    let wo = wp.params.get("mhda.out").unwrap();
    let proj = |v: &[f64], m: &Tensor<f64>| -> Vec<f64> {
        (0..4).map(|j| (0..4).map(|k| v[k] * m.data()[k * 4 + j]).sum()).collect()
    };
    for i in 0..20 {
        let (px, py) = (refs.data()[2 * i], refs.data()[2 * i + 1]);
        let mut mean = vec![0.0; 4];
        for m in &maps_t {
            let (mh, mw) = (m.shape()[1], m.shape()[2]);
            // Manual bilinear at cell-centre coordinates.
            let fx = (px * mw as f64 - 0.5).clamp(0.0, (mw - 1) as f64);
            let fy = (py * mh as f64 - 0.5).clamp(0.0, (mh - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(mw - 1), (y0 + 1).min(mh - 1));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let at = |y: usize, x: usize, c: usize| m.data()[(y * mw + x) * 4 + c];
            for c in 0..4 {
                let v = (1.0 - ty) * ((1.0 - tx) * at(y0, x0, c) + tx * at(y0, x1, c))
                    + ty * ((1.0 - tx) * at(y1, x0, c) + tx * at(y1, x1, c));
                mean[c] += v / 2.0;
            }
        }
        let expected = proj(&proj(&mean, wv), wo);
        for c in 0..4 {
            let got = out.value().data()[i * 4 + c];
            assert!((got - expected[c]).abs() < 1e-12, "token {i} ch {c}");
        }
    }
}

#[test]
fn indivisible_dims_are_rejected() {
    let cfg = WatConfig::new(4);
    let wp = params::<f32>(&cfg, 15);
    let tape = Tape::no_grad();
    let p = wp.params.bind(&tape, false);
    let x = tape.constant(Tensor::zeros(&[1, 24, 16, 4]));
    assert!(wat_forward(x, &p, &cfg).is_err());
}

#[test]
fn composed_forward_gradients() {
    let mut cfg = WatConfig::new(4);
    cfg.heads = 2;
    cfg.samples = 2;
    let mut wp = params::<f64>(&cfg, 16);
    // Small offsets keep samples away from grid crossings and clamps.
    perturb(&mut wp.params, 17, 0.05);
    let x = Tensor::<f64>::randn(&[2, 16, 16, 4], 1.0, &mut rng(18));
    let names: Vec<String> = wp.params.names();
    let mut inputs = vec![x];
    inputs.extend(names.iter().map(|n| wp.params.get(n).unwrap().clone()));
    let weight = Tensor::<f64>::randn(&[2, 16, 16, 4], 1.0, &mut rng(19));
    let err = finite_difference_check(
        |tape, v| {
            let p = Binding::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
            let y = wat_forward(v[0], &p, &cfg)?;
            y.mul(tape.constant(weight.clone()))
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-3, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn baa_is_batch_equivariant(seed in any::<u64>(), b in 2usize..6) {
        let cfg = WatConfig::new(8);
        let mut wp = params::<f32>(&cfg, seed);
        perturb(&mut wp.params, seed ^ 1, 0.3);
        let x = Tensor::<f32>::randn(&[b, 7, 8], 1.0, &mut rng(seed ^ 2));
        let perm: Vec<usize> = (0..b).rev().collect();
        let mut px = Vec::new();
        for &i in &perm {
            px.extend_from_slice(x.narrow(0, i, 1).unwrap().data());
        }
        let px = Tensor::from_vec(&[b, 7, 8], px);
        let tape = Tape::no_grad();
        let p = wp.params.bind(&tape, false);
        let y = baa_forward(tape.constant(x), &p, 1).unwrap().value();
        let py = baa_forward(tape.constant(px), &p, 1).unwrap().value();
        for (j, &i) in perm.iter().enumerate() {
            let a = y.narrow(0, i, 1).unwrap();
            let bb = py.narrow(0, j, 1).unwrap();
            prop_assert!(a.max_abs_diff(&bb) < 1e-5);
        }
    }

    #[test]
    fn output_shape_matches_input(seed in any::<u64>(), b in 1usize..3, hm in 1usize..3, wm in 1usize..3) {
        let mut cfg = WatConfig::new(4);
        cfg.heads = 2;
        cfg.levels = LevelSet::new(vec![1, 2]).unwrap();
        let mut wp = params::<f32>(&cfg, seed);
        perturb(&mut wp.params, seed ^ 3, 0.2);
        let x = Tensor::<f32>::randn(&[b, 4 * hm, 4 * wm, 4], 1.0, &mut rng(seed));
        let y = run(&x, &wp);
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.all_finite());
    }
}
