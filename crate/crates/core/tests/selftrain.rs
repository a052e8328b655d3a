use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soda_sr::backbone::{Discriminator, NetConfig, ToySRNet};
use soda_sr::data::{generate, DataConfig, Datasets};
use soda_sr::numerics::{checkpoint, ParamStore, Tape, Tensor};
use soda_sr::selftrain::{
    adapt_run, adapt_step, confidence_map, ema_update, estimate_from_passes, estimate_uncertainty, geometric_ensemble,
    loss_high_d, loss_high_g, loss_low, loss_rec, total_loss, AdaptHyperParams, AdaptRngs, EnsembleMode,
    GeometricTransform, LossTerms, LossWeights, LowBandNorm, PseudoLabelConfig, RunOptions, TargetData,
    TeacherStudentState, DISC_CHANNELS,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const NET: NetConfig = NetConfig {
    channels: 8,
    blocks: 1,
    scale: 4,
};

fn perturbed_net(seed: u64) -> ToySRNet<f64> {
    let mut net = ToySRNet::<f64>::init(NET, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 1);
    for (name, t) in net.params.iter_mut() {
        if name.contains("att") {
            let noise = Tensor::<f64>::randn(t.shape(), 1.0, &mut r);
            t.add_assign(&noise);
        }
    }
    net
}

mod transforms {
    use super::*;

    #[test]
    fn group_structure() {
        let all = GeometricTransform::all();
        for (i, t) in all.iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(t.inverse().inverse(), *t);
        }
        let x = Tensor::<f32>::randn(&[1, 3, 5, 2], 1.0, &mut rng(1));
        // Four quarter turns are the identity; a flip is an involution.
        let r = GeometricTransform::from_index(1);
        let mut y = x.clone();
        for _ in 0..4 {
            y = r.apply(&y).unwrap();
        }
        assert_eq!(y, x);
        let f = GeometricTransform::from_index(4);
        assert_eq!(f.apply(&f.apply(&x).unwrap()).unwrap(), x);
        assert_eq!(r.apply(&x).unwrap().shape(), &[1, 5, 3, 2]);
    }

    #[test]
    fn images_without_batch_axis_are_accepted() {
        let x = Tensor::<f32>::randn(&[4, 6, 3], 1.0, &mut rng(2));
        for t in GeometricTransform::all() {
            assert_eq!(t.invert(&t.apply(&x).unwrap()).unwrap().len(), x.len());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trips_are_bit_exact(seed in any::<u64>(), h in 1usize..7, w in 1usize..7, i in 0usize..8) {
            let x = Tensor::<f32>::randn(&[2, h, w, 3], 1.0, &mut rng(seed));
            let t = GeometricTransform::from_index(i);
            prop_assert_eq!(t.invert(&t.apply(&x).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn ensemble_of_an_equivariant_map_is_that_map() {
        let x = Tensor::<f64>::randn(&[2, 5, 5, 3], 1.0, &mut rng(3));
        let f = |t: &Tensor<f64>| Ok(t.map(|v| v.tanh() * 2.0));
        let e = geometric_ensemble(f, &x).unwrap();
        assert!(e.max_abs_diff(&f(&x).unwrap()) < 1e-12);
    }

    #[test]
    fn ensemble_of_a_nonequivariant_map_averages() {
        // x ↦ x shifted by its row index is not rotation-invariant.
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 1]);
        let f = |t: &Tensor<f64>| {
            let w = t.shape()[2];
            Ok(Tensor::from_fn(t.shape(), |i| (i / w) as f64))
        };
        let e = geometric_ensemble(f, &x).unwrap();
        assert!(e.data().iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn rotating_mode_cycles_the_group() {
        let seen: Vec<usize> = (0..2)
            .flat_map(|step| (0..4).map(move |p| EnsembleMode::Rotating.transforms(step, 4, p)[0].index()))
            .collect();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(EnsembleMode::Full.transforms(0, 5, 0).len(), 8);
        assert_eq!(EnsembleMode::Off.transforms(3, 5, 2), vec![GeometricTransform::IDENTITY]);
    }
}

mod uncertainty {
    use super::*;

    #[test]
    fn identical_passes_give_full_confidence() {
        let p = Tensor::<f64>::randn(&[1, 4, 4, 3], 1.0, &mut rng(10));
        let e = estimate_from_passes(&[p.clone(), p.clone(), p.clone()], 4e-4, 1.5).unwrap();
        assert!(e.mean.max_abs_diff(&p) < 1e-15);
        assert!(e.variance.data().iter().all(|&v| v < 1e-30));
        assert!(e.cof.data().iter().all(|&c| c == 1.0));
        assert!(estimate_from_passes(&[p], 4e-4, 1.5).is_err());
    }

    #[test]
    fn variance_is_channel_averaged_population_variance() {
        let a = Tensor::<f64>::from_vec(&[1, 1, 1, 3], vec![0.0, 0.0, 0.0]);
        let b = Tensor::<f64>::from_vec(&[1, 1, 1, 3], vec![0.2, 0.4, 0.0]);
        let e = estimate_from_passes(&[a, b], 4e-4, 1.5).unwrap();
        // Per-channel variances 0.01, 0.04, 0.
        assert!((e.variance.data()[0] - 0.05 / 3.0).abs() < 1e-15);
        assert_eq!(e.mean.data(), &[0.1, 0.2, 0.0]);
    }

    proptest! {
        #[test]
        fn confidence_is_monotone_and_bounded(v1 in 0.0f64..0.01, dv in 0.0f64..0.01) {
            let c = confidence_map(&Tensor::from_vec(&[2], vec![v1, v1 + dv]), 4e-4, 1.5);
            prop_assert!(c.data()[1] <= c.data()[0]);
            prop_assert!(c.data().iter().all(|&x| (0.5..=1.0).contains(&x)));
        }
    }

    #[test]
    fn stochastic_teacher_passes_disagree() {
        let net = perturbed_net(11);
        let x = Tensor::<f64>::uniform(&[2, 6, 6, 3], 0.0, 1.0, &mut rng(12));
        let cfg = PseudoLabelConfig {
            passes: 4,
            tau: 0.1,
            ensemble: EnsembleMode::Off,
            alpha: 4e-4,
            beta: 1.5,
        };
        let e = estimate_uncertainty(&net, &x, &cfg, 0, Some(&mut rng(13))).unwrap();
        assert_eq!(e.mean.shape(), &[2, 24, 24, 3]);
        assert_eq!(e.cof.shape(), &[2, 24, 24, 1]);
        assert!(e.cof_mean() < 1.0 && e.cof_mean() > 0.5);
        // No noise: every pass is the same deterministic forward.
        let quiet = estimate_uncertainty(&net, &x, &cfg, 0, None).unwrap();
        assert!(quiet.cof.data().iter().all(|&c| c == 1.0));
    }

    #[test]
    fn full_ensemble_passes_equal_stacked_single_passes_without_noise() {
        let net = perturbed_net(14);
        let x = Tensor::<f64>::uniform(&[1, 6, 6, 3], 0.0, 1.0, &mut rng(15));
        let cfg = PseudoLabelConfig {
            passes: 2,
            tau: 1.0,
            ensemble: EnsembleMode::Full,
            alpha: 4e-4,
            beta: 1.5,
        };
        let e = estimate_uncertainty(&net, &x, &cfg, 0, None).unwrap();
        let direct = geometric_ensemble(
            |t| net.infer(t, soda_sr::backbone::NormMode::Softmax, None),
            &x,
        )
        .unwrap();
        assert!(e.mean.max_abs_diff(&direct) < 1e-12);
    }
}

mod losses {
    use super::*;

    #[test]
    fn rectified_l1_with_unit_confidence_is_plain_l1() {
        let tape = Tape::new();
        let sr = Tensor::<f64>::randn(&[1, 4, 4, 3], 1.0, &mut rng(20));
        let y = Tensor::<f64>::randn(&[1, 4, 4, 3], 1.0, &mut rng(21));
        let ones = Tensor::ones(&[1, 4, 4, 1]);
        let l = loss_rec(tape.constant(sr.clone()), &y, &ones).unwrap().value().item();
        let plain = sr.zip_map(&y, |a, b| (a - b).abs()).unwrap().mean();
        assert!((l - plain).abs() < 1e-15);
        let halves = Tensor::full(&[1, 4, 4, 1], 0.5);
        let l = loss_rec(tape.constant(sr), &y, &halves).unwrap().value().item();
        assert!((l - 0.5 * plain).abs() < 1e-15);
        assert!(loss_rec(tape.constant(Tensor::zeros(&[1, 4, 4, 3])), &y, &Tensor::ones(&[1, 4, 4, 3])).is_err());
    }

    #[test]
    fn low_band_loss_vanishes_on_a_consistent_pair() {
        // A constant LR and its nearest-upsampled SR share every low band up
        // to the orthonormal gain 2^(l2 − l1).
        let lr = Tensor::<f64>::full(&[1, 8, 8, 3], 0.3);
        let sr = Tensor::<f64>::full(&[1, 32, 32, 3], 0.3);
        let tape = Tape::no_grad();
        let comp = loss_low(&lr, tape.constant(sr.clone()), 1, 3, LowBandNorm::Compensated).unwrap();
        assert!(comp.value().item().abs() < 1e-12);
        let raw = loss_low(&lr, tape.constant(sr), 1, 3, LowBandNorm::Raw).unwrap();
        // Raw bands differ by the gain: 2^3·0.3 vs 2^1·0.3.
        assert!((raw.value().item() - 1.8).abs() < 1e-12);
        assert!(loss_low(&lr, tape.constant(Tensor::zeros(&[1, 32, 32, 3])), 1, 2, LowBandNorm::Raw).is_err());
    }

    #[test]
    fn adversarial_terms_at_an_undecided_discriminator() {
        let disc = Discriminator::<f64>::init(DISC_CHANNELS, &mut rng(22));
        let tape = Tape::no_grad();
        let p = disc.params.bind(&tape, false);
        let x = Tensor::<f64>::uniform(&[2, 16, 16, 3], 0.0, 1.0, &mut rng(23));
        let sr = Tensor::<f64>::uniform(&[2, 64, 64, 3], 0.0, 1.0, &mut rng(24));
        let g = loss_high_g(tape.constant(sr.clone()), &p, DISC_CHANNELS, 3).unwrap().value().item();
        let d = loss_high_d(tape.constant(x), &sr, &p, DISC_CHANNELS, 1, 3).unwrap().value().item();
        assert!((g - 2f64.ln()).abs() < 1e-6, "{g}");
        assert!((d - 4f64.ln()).abs() < 1e-6, "{d}");
        assert!((g - 0.6931).abs() < 1e-4 && (d - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let t = LossTerms {
            rec: 0.2,
            perceptual: 3.0,
            low: 0.5,
            high_g: 0.7,
        };
        let w = LossWeights::default();
        assert_eq!((w.perceptual, w.low, w.high), (0.01, 0.1, 0.005));
        let want = 0.2 + 0.01 * 3.0 + 0.1 * 0.5 + 0.005 * 0.7;
        assert!((total_loss(&t, &w).unwrap() - want).abs() < 1e-15);
        assert!(total_loss(&LossTerms { low: f64::NAN, ..t }, &w).is_err());
    }
}

mod ema {
    use super::*;

    proptest! {
        #[test]
        fn matches_the_closed_form(eta in 0.0f64..1.0, k in 0i32..30, seed in any::<u64>()) {
            let mut teacher = ParamStore::<f64>::new();
            teacher.insert("a", Tensor::randn(&[3, 2], 1.0, &mut rng(seed)));
            let mut student = ParamStore::<f64>::new();
            student.insert("a", Tensor::randn(&[3, 2], 1.0, &mut rng(seed ^ 7)));
            let xi0 = teacher.get("a").unwrap().clone();
            for _ in 0..k {
                ema_update(&mut teacher, &student, eta).unwrap();
            }
            let ek = eta.powi(k);
            let closed = xi0.zip_map(student.get("a").unwrap(), |x, s| ek * x + (1.0 - ek) * s).unwrap();
            prop_assert!(teacher.get("a").unwrap().max_abs_diff(&closed) < 1e-12);
        }
    }

    #[test]
    fn mismatched_stores_are_rejected() {
        let mut a = ParamStore::<f64>::new();
        a.insert("w", Tensor::zeros(&[2]));
        let mut b = ParamStore::<f64>::new();
        b.insert("w", Tensor::zeros(&[3]));
        assert!(ema_update(&mut a, &b, 0.5).is_err());
    }
}

mod engine {
    use super::*;

    fn data() -> Datasets {
        generate(&DataConfig {
            hr_size: 128,
            source_pairs: 2,
            target_train: 4,
            target_val: 2,
            target_test: 1,
            seed: 30,
            ..DataConfig::default()
        })
        .unwrap()
    }

    fn hp(iterations: usize) -> AdaptHyperParams {
        AdaptHyperParams {
            iterations,
            batch: 2,
            patch: 16,
            passes: 2,
            eval_interval: 2,
            ensemble: EnsembleMode::Rotating,
            ..AdaptHyperParams::default()
        }
    }

    fn run(net: &ToySRNet<f64>, d: &Datasets, hp: &AdaptHyperParams, seed: u64, dir: &std::path::Path) -> Vec<u8> {
        let csv = dir.join(format!("{}.csv", seed));
        adapt_run(
            net,
            TargetData {
                train_lr: &d.target_train,
                val: &d.target_val,
            },
            hp,
            &RunOptions {
                seed,
                csv: Some(csv.clone()),
                metadata: vec![("no_wat".into(), "false".into())],
                ..RunOptions::default()
            },
        )
        .unwrap();
        std::fs::read(csv).unwrap()
    }

    #[test]
    fn f64_runs_are_bit_reproducible_and_seed_dependent() {
        let dir = tempfile::tempdir().unwrap();
        let (net, d) = (perturbed_net(31), data());
        let a = run(&net, &d, &hp(4), 1, dir.path());
        let b = run(&net, &d, &hp(4), 1, dir.path());
        let c = run(&net, &d, &hp(4), 2, dir.path());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let text = String::from_utf8(run(&perturbed_net(32), &data(), &hp(5), 3, dir.path())).unwrap();
        assert!(text.starts_with("# seed = 3\n# no_wat = false\n"));
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header[0], "iteration");
        assert_eq!(header[6], "l_total");
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        let its: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
        assert_eq!(its, vec!["0", "2", "4", "5"]);
        assert!(rows[0][1].is_empty());
        let w = LossWeights::default();
        for row in &rows[1..] {
            let f = |i: usize| row[i].parse::<f64>().unwrap();
            assert!((f(6) - (f(1) + w.perceptual * f(2) + w.low * f(3) + w.high * f(4))).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&f(8)));
        }
    }

    #[test]
    fn zero_iterations_keep_the_source_model() {
        let dir = tempfile::tempdir().unwrap();
        let (net, d) = (perturbed_net(33), data());
        let ck = dir.path().join("a.ckpt");
        let out = adapt_run(
            &net,
            TargetData {
                train_lr: &d.target_train,
                val: &d.target_val,
            },
            &hp(0),
            &RunOptions {
                seed: 4,
                checkpoint: Some(ck.clone()),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.best_iteration, 0);
        let saved: ParamStore<f64> = checkpoint::load(&ck).unwrap();
        let student = saved.strip_prefix("student.");
        assert_eq!(
            checkpoint::encode(&student).unwrap(),
            checkpoint::encode(&net.params).unwrap()
        );
    }

    #[test]
    fn routing_follows_the_probability() {
        let (net, d) = (perturbed_net(34), data());
        let mut h = hp(40);
        h.passes = 2;
        let mut state = TeacherStudentState::new(&net, &h, &mut rng(35)).unwrap();
        let mut rngs = AdaptRngs::new(5);
        let x = soda_sr::data::sample_lr_batch(&d.target_train, 2, 16, &mut rng(36)).unwrap().cast::<f64>();
        let mut used = 0;
        for _ in 0..40 {
            used += adapt_step(&mut state, &x, &h, &mut rngs).unwrap().wat_used as usize;
        }
        // Binomial(40, 0.5): 8..=32 covers it with probability > 0.9999.
        assert!((8..=32).contains(&used), "{used}");
        h.wat_probability = 0.0;
        for _ in 0..5 {
            assert!(!adapt_step(&mut state, &x, &h, &mut rngs).unwrap().wat_used);
        }
    }

    #[test]
    fn ema_one_freezes_the_teacher() {
        let (net, d) = (perturbed_net(37), data());
        let mut h = hp(3);
        h.ema_decay = 1.0;
        let mut state = TeacherStudentState::new(&net, &h, &mut rng(38)).unwrap();
        let mut rngs = AdaptRngs::new(6);
        let x = soda_sr::data::sample_lr_batch(&d.target_train, 2, 16, &mut rng(39)).unwrap().cast::<f64>();
        for _ in 0..3 {
            adapt_step(&mut state, &x, &h, &mut rngs).unwrap();
        }
        assert_eq!(state.teacher.params, net.params);
        assert_ne!(state.student.params, net.params);
    }
}
