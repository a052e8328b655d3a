use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soda_sr::backbone::{
    channel_attention, discriminator_forward, extract_features, gumbel_softmax, reconstruct, upsample_skip,
    Discriminator, NetConfig, NormMode, ToySRNet,
};
use soda_sr::numerics::gradcheck::{finite_difference_check, DEFAULT_STEP};
use soda_sr::numerics::{Binding, Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const SMALL: NetConfig = NetConfig {
    channels: 8,
    blocks: 2,
    scale: 4,
};

/// A network whose attention layers are no longer at their zero init.
fn trained_like(cfg: NetConfig, seed: u64) -> ToySRNet<f64> {
    let mut net = ToySRNet::<f64>::init(cfg, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 100);
    for (name, t) in net.params.iter_mut() {
        if name.contains("att") {
            let noise = Tensor::<f64>::randn(t.shape(), 1.0, &mut r);
            t.add_assign(&noise);
        }
    }
    net
}

#[test]
fn output_shapes_follow_the_scale() {
    for scale in [2, 4] {
        let cfg = NetConfig { scale, ..SMALL };
        let net = ToySRNet::<f32>::init(cfg, &mut rng(1)).unwrap();
        let x = Tensor::<f32>::uniform(&[2, 6, 5, 3], 0.0, 1.0, &mut rng(2));
        let y = net.infer(&x, NormMode::Softmax, None).unwrap();
        assert_eq!(y.shape(), &[2, 6 * scale, 5 * scale, 3]);
    }
    assert!(NetConfig { scale: 3, ..SMALL }.validate().is_err());
}

#[test]
fn eval_output_is_clamped_to_unit_range() {
    let mut net = ToySRNet::<f32>::init(SMALL, &mut rng(3)).unwrap();
    // A large tail bias pushes raw outputs far outside [0,1].
    net.params.get_mut("tail.b").unwrap().data_mut()[0] = 5.0;
    let x = Tensor::<f32>::uniform(&[1, 8, 8, 3], 0.0, 1.0, &mut rng(4));
    let y = net.infer(&x, NormMode::Softmax, None).unwrap();
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(y.data().iter().any(|&v| v == 1.0));
}

#[test]
fn zero_attention_init_gives_identity_gates() {
    // With zero attention weights the softmax is uniform and every gate is 1.
    let tape = Tape::no_grad();
    let x = Tensor::<f64>::randn(&[2, 3, 3, 6], 1.0, &mut rng(5));
    let (y, a) = channel_attention(
        tape.constant(x.clone()),
        tape.constant(Tensor::zeros(&[6, 6])),
        tape.constant(Tensor::zeros(&[6])),
        NormMode::Softmax,
        None,
    )
    .unwrap();
    assert!(y.value().max_abs_diff(&x) < 1e-15);
    assert!(a.value().data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
}

#[test]
fn gumbel_without_noise_at_unit_temperature_matches_softmax() {
    let net = trained_like(SMALL, 6);
    let x = Tensor::<f64>::uniform(&[1, 6, 6, 3], 0.0, 1.0, &mut rng(7));
    let a = net.infer(&x, NormMode::Softmax, None).unwrap();
    let b = net.infer(&x, NormMode::gumbel(1.0).unwrap(), None).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn gumbel_noise_depends_on_the_stream() {
    let net = trained_like(SMALL, 8);
    let x = Tensor::<f64>::uniform(&[1, 6, 6, 3], 0.0, 1.0, &mut rng(9));
    let mode = NormMode::gumbel(0.1).unwrap();
    let run = |seed| net.infer(&x, mode, Some(&mut rng(seed))).unwrap();
    assert_eq!(run(1), run(1));
    assert!(run(1).max_abs_diff(&run(2)) > 1e-6);
}

#[test]
fn gumbel_softmax_validates_inputs() {
    assert!(gumbel_softmax(&[1.0, 0.0], 1.0, None).is_err());
    assert!(gumbel_softmax(&[1.0, 2.0], 0.0, None).is_err());
    let p = gumbel_softmax(&[1.0, 2.0, 3.0], 0.5, Some(&mut rng(10))).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn generator_gradients_reach_every_parameter() {
    let cfg = NetConfig {
        channels: 4,
        blocks: 1,
        scale: 2,
    };
    let net = trained_like(cfg, 11);
    let x = Tensor::<f64>::uniform(&[1, 4, 4, 3], 0.0, 1.0, &mut rng(12));
    let skip = upsample_skip(&cfg, &x).unwrap();
    let names = net.params.names();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| net.params.get(n).unwrap().clone()).collect();
    let weight = Tensor::<f64>::randn(&[1, 8, 8, 3], 1.0, &mut rng(13));
    let err = finite_difference_check(
        |tape, v| {
            let p = Binding::from_vars(names.iter().cloned().zip(v.iter().copied()));
            let f = extract_features(&cfg, &p, tape.constant(x.clone()), NormMode::Softmax, None)?;
            reconstruct(&cfg, &p, f, &skip, false)?.mul(tape.constant(weight.clone()))
        },
        &inputs,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn discriminator_starts_undecided_and_has_sound_gradients() {
    let disc = Discriminator::<f64>::init(9, &mut rng(14));
    let tape = Tape::no_grad();
    let p = disc.params.bind(&tape, false);
    let x = tape.constant(Tensor::randn(&[3, 8, 8, 9], 1.0, &mut rng(15)));
    let d = discriminator_forward(&p, 9, x).unwrap().value();
    assert_eq!(d.shape(), &[3]);
    assert!(d.data().iter().all(|&v| v == 0.5));

    let mut store = disc.params.clone();
    for (_, t) in store.iter_mut() {
        let noise = Tensor::<f64>::randn(t.shape(), 0.1, &mut rng(16));
        t.add_assign(&noise);
    }
    let names = store.names();
    let mut inputs = vec![Tensor::<f64>::randn(&[2, 8, 8, 9], 1.0, &mut rng(17))];
    inputs.extend(names.iter().map(|n| store.get(n).unwrap().clone()));
    let err = finite_difference_check(
        |_, v| {
            let p = Binding::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
            Ok(discriminator_forward(&p, 9, v[0])?.log()?)
        },
        &inputs,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn mismatched_skip_is_rejected() {
    let net = ToySRNet::<f32>::init(SMALL, &mut rng(18)).unwrap();
    let x = Tensor::<f32>::zeros(&[1, 4, 4, 3]);
    assert!(net.infer_with_skip(&x, &Tensor::zeros(&[1, 8, 8, 3]), NormMode::Softmax, None).is_err());
    assert!(net.infer(&Tensor::zeros(&[1, 4, 4, 2]), NormMode::Softmax, None).is_err());
}
