use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sstu::dataset::{synth_blobs, Sample, SynthVariant};
use sstu::mask::{BinaryMask, ProbMask};
use sstu::model::{build, is_buffer, ArchConfig, Decoders, WeightBundle, EGO_PREFIX, ENCODER_PREFIX, EXO_PREFIX};
use sstu::tensor::{BnMode, ImageTensor, Tensor};
use sstu::train::{
    adam_step, analytic_gradients, bce_loss, finetune, gradcheck, train_base, train_ego_decoder, AdamState,
    FinetuneMode, GradcheckConfig, Regime, TrainConfig, Trainer,
};

fn snapshot(b: &WeightBundle, prefix: &str) -> Vec<(String, Vec<u32>)> {
    b.params()
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn toy(n: usize, variant: SynthVariant, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let d = synth_blobs(n, 4, variant, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (d.train, d.val)
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

fn one_param_bundle(value: f32) -> WeightBundle {
    let mut b = build(&ArchConfig::small(32, 1), 0).unwrap();
    b.get_mut("head.bias").unwrap().data_mut()[0] = value;
    b
}

fn grad_of(g: f32) -> IndexMap<String, Tensor> {
    IndexMap::from([("head.bias".to_string(), Tensor::filled(vec![1], g))])
}

#[test]
fn bce_examples() {
    let (l, g) = bce_loss(&ProbMask::filled(2, 2, 0.5), &BinaryMask::zeros(2, 2)).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(g.iter().all(|&v| v == 0.125));
    let p = ProbMask::new(1, 2, vec![0.9, 0.2]).unwrap();
    let t = BinaryMask::new(1, 2, vec![1, 0]).unwrap();
    let (l, g) = bce_loss(&p, &t).unwrap();
    let oracle = (-(0.9f32 as f64).ln() - (1.0 - 0.2f32 as f64).ln()) / 2.0;
    assert!((l - oracle).abs() < 1e-12);
    assert!((l - 0.1643).abs() < 1e-4);
    assert!((g[0] - (0.9 - 1.0) / 2.0).abs() < 1e-7 && (g[1] - 0.1).abs() < 1e-7);
    let perfect = bce_loss(&ProbMask::new(1, 2, vec![1.0, 0.0]).unwrap(), &t).unwrap().0;
    assert!(perfect.is_finite() && perfect < 1e-6);
    let worst = bce_loss(&ProbMask::new(1, 2, vec![0.0, 1.0]).unwrap(), &t).unwrap().0;
    assert!((worst - -(1e-7f64).ln()).abs() < 1e-6);
    assert!(bce_loss(&p, &BinaryMask::zeros(2, 1)).is_err());
}

#[test]
fn adam_zero_gradient_is_a_fixed_point() {
    let mut b = one_param_bundle(0.25);
    let before = snapshot(&b, "");
    let mut state = AdamState::default();
    for _ in 0..5 {
        adam_step(&mut b, &grad_of(0.0), &mut state, &TrainConfig::default()).unwrap();
    }
    assert_eq!(snapshot(&b, ""), before);
    assert_eq!(state.step, 5);
}

#[test]
fn adam_first_step_is_learning_rate() {
    let c = TrainConfig {
        eps_adam: 0.0,
        ..TrainConfig::default()
    };
    for g in [1e-4f32, 0.3, -2.0, 750.0] {
        let mut b = one_param_bundle(0.5);
        adam_step(&mut b, &grad_of(g), &mut AdamState::default(), &c).unwrap();
        let delta = b.get("head.bias").unwrap().data()[0] as f64 - 0.5;
        assert!((delta.abs() - 1e-3).abs() < 1e-6, "g {g}: step {delta}");
        assert_eq!(delta.signum(), -(g as f64).signum());
    }
}

#[test]
fn adam_first_step_is_scale_equivariant() {
    let step = |g: f32| {
        let mut b = one_param_bundle(0.5);
        adam_step(&mut b, &grad_of(g), &mut AdamState::default(), &TrainConfig::default()).unwrap();
        b.get("head.bias").unwrap().data()[0] as f64 - 0.5
    };
    for g in [0.01f32, 0.2, -1.5] {
        let (a, s) = (step(g), step(1000.0 * g));
        assert!(((a - s) / s).abs() < 1e-3, "{a} vs {s}");
    }
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut b = one_param_bundle(0.0);
    let bad = IndexMap::from([("head.bias".to_string(), Tensor::zeros(vec![2]))]);
    assert!(adam_step(&mut b, &bad, &mut AdamState::default(), &TrainConfig::default()).is_err());
}

#[test]
fn frozen_parameters_and_moments_stay_put() {
    let (train, _) = toy(8, SynthVariant::Exo, 1);
    let mut b = build(&ArchConfig::small(32, 2), 1).unwrap();
    let before = snapshot(&b, ENCODER_PREFIX);
    let c = TrainConfig {
        freeze: vec![ENCODER_PREFIX.to_string()],
        ..cfg(1)
    };
    let mut trainer = Trainer::new(&c, Regime::Base).unwrap();
    let images: Vec<ImageTensor> = train.iter().map(|s| s.resized(32).image).collect();
    let masks: Vec<BinaryMask> = train.iter().map(|s| s.resized(32).mask).collect();
    let dec_before = snapshot(&b, "dec");
    for _ in 0..3 {
        trainer.step(&mut b, &images, &masks).unwrap();
    }
    assert_eq!(snapshot(&b, ENCODER_PREFIX), before);
    assert_ne!(snapshot(&b, "dec"), dec_before);
    let state = trainer.state();
    assert!(state
        .m
        .keys()
        .chain(state.v.keys())
        .all(|n| !n.starts_with(ENCODER_PREFIX)));
    assert!(state.m.keys().any(|n| n.starts_with("dec")));
}

#[test]
fn one_step_changes_some_parameter() {
    let (train, _) = toy(4, SynthVariant::Exo, 2);
    let mut b = build(&ArchConfig::small(32, 2), 2).unwrap();
    let before = snapshot(&b, "");
    let mut trainer = Trainer::new(&cfg(1), Regime::Base).unwrap();
    let s = train[0].resized(32);
    let loss = trainer.step(&mut b, &[s.image], &[s.mask]).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_ne!(snapshot(&b, ""), before);
}

#[test]
fn training_is_seed_deterministic() {
    let (train, val) = toy(12, SynthVariant::Exo, 3);
    let run = |seed: u64| {
        let c = TrainConfig { seed, ..cfg(2) };
        train_base(build(&ArchConfig::small(32, 2), 3).unwrap(), &train, &val, &c).unwrap()
    };
    let (a, b) = (run(7), run(7));
    assert_eq!(snapshot(&a.bundle, ""), snapshot(&b.bundle, ""));
    assert_eq!(a.log, b.log);
    assert_eq!(a.bundle.tag(), "SSTU_coco");
    assert_eq!(a.log.len(), 2);
    assert!(a.log[0].line().starts_with("epoch 1 loss "));
    assert!(a.log[0].line().contains(" val_miou "));
    assert_ne!(snapshot(&run(8).bundle, ""), snapshot(&a.bundle, ""));
}

#[test]
fn empty_and_mismatched_inputs_are_rejected() {
    let b = build(&ArchConfig::small(32, 2), 0).unwrap();
    assert!(train_base(b.clone(), &[], &[], &cfg(1)).is_err());
    let (train, val) = toy(2, SynthVariant::Exo, 0);
    assert!(train_ego_decoder(b.clone(), &train, &val, &cfg(1)).is_err());
    let two = b.to_two_decoder().unwrap();
    assert!(train_base(two, &train, &val, &cfg(1)).is_err());
    assert!(Trainer::new(
        &TrainConfig {
            batch_size: 0,
            ..cfg(1)
        },
        Regime::Base
    )
    .is_err());
    assert!(Trainer::new(&TrainConfig { beta1: 1.0, ..cfg(1) }, Regime::Base).is_err());
}

#[test]
fn f1_trains_only_the_decoder() {
    let (train, val) = toy(8, SynthVariant::Exo, 4);
    let b = build(&ArchConfig::small(32, 2), 4).unwrap();
    let enc = snapshot(&b, ENCODER_PREFIX);
    let dec = snapshot(&b, "dec");
    let head = snapshot(&b, "head");
    let out = finetune(b, &train, &val, FinetuneMode::F1, &cfg(1)).unwrap();
    assert_eq!(out.bundle.tag(), "SSTU_f1");
    assert_eq!(snapshot(&out.bundle, ENCODER_PREFIX), enc);
    assert_ne!(snapshot(&out.bundle, "dec"), dec);
    assert_ne!(snapshot(&out.bundle, "head"), head);
}

#[test]
fn f2_with_zero_learning_rate_changes_nothing_trainable() {
    let (train, val) = toy(8, SynthVariant::Exo, 5);
    let b = build(&ArchConfig::small(32, 2), 5).unwrap();
    let c = TrainConfig {
        learning_rate: 0.0,
        ..cfg(1)
    };
    let out = finetune(b.clone(), &train, &val, FinetuneMode::F2, &c).unwrap();
    assert_eq!(out.bundle.tag(), "SSTU_f2");
    let keep = |s: Vec<(String, Vec<u32>)>| s.into_iter().filter(|(n, _)| !is_buffer(n)).collect::<Vec<_>>();
    assert_eq!(keep(snapshot(&out.bundle, "")), keep(snapshot(&b, "")));
}

#[test]
fn ego_decoder_training_freezes_encoder_and_exo() {
    let (ego, _) = toy(6, SynthVariant::Ego, 6);
    let (exo, val) = toy(6, SynthVariant::Exo, 7);
    let train: Vec<Sample> = ego.into_iter().chain(exo).collect();
    let two = build(&ArchConfig::small(32, 2), 6).unwrap().to_two_decoder().unwrap();
    assert_eq!(two.arch().decoders, Decoders::Two);
    let enc = snapshot(&two, ENCODER_PREFIX);
    let exo_before = snapshot(&two, EXO_PREFIX);
    let ego_before = snapshot(&two, EGO_PREFIX);
    let out = train_ego_decoder(two, &train, &val, &cfg(1)).unwrap();
    assert_eq!(out.bundle.tag(), "SSTU");
    assert_eq!(snapshot(&out.bundle, ENCODER_PREFIX), enc);
    assert_eq!(snapshot(&out.bundle, EXO_PREFIX), exo_before);
    assert_ne!(snapshot(&out.bundle, EGO_PREFIX), ego_before);
}

#[test]
fn exo_samples_become_background_for_the_ego_head() {
    let (exo, _) = toy(1, SynthVariant::Exo, 8);
    assert!(exo[0].mask.count_ones() > 0);
    assert_eq!(Regime::EgoDecoder.target(&exo[0]).count_ones(), 0);
    assert_eq!(Regime::Base.target(&exo[0]), exo[0].mask);
    let (ego, _) = toy(1, SynthVariant::Ego, 8);
    assert_eq!(Regime::EgoDecoder.target(&ego[0]), ego[0].mask);
}

#[test]
fn repeated_sample_loss_mostly_decreases() {
    let (train, _) = toy(1, SynthVariant::Exo, 9);
    let s = train[0].clone();
    let mut b = build(&ArchConfig::small(64, 8), 9).unwrap();
    let mut trainer = Trainer::new(&cfg(1), Regime::Base).unwrap();
    let losses: Vec<f64> = (0..50)
        .map(|_| {
            trainer
                .step(&mut b, std::slice::from_ref(&s.image), std::slice::from_ref(&s.mask))
                .unwrap()
        })
        .collect();
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 3, "{rises} increases: {losses:?}");
    assert!(losses[49] < losses[0]);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let b = build(&ArchConfig::small(32, 2), 10).unwrap().cast::<f64>();
    let img = ImageTensor::<f64>::from_fn(3, 32, 32, |c, y, x| ((c + y * 3 + x * 7) % 11) as f64 / 11.0);
    let g = analytic_gradients(&b, &img, ImageTensor::zeros(1, 32, 32), BnMode::Infer).unwrap();
    assert!(!g.is_empty());
    assert!(g.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn gradcheck_is_symmetric_in_step_sign() {
    let (train, _) = toy(1, SynthVariant::Exo, 11);
    let s = train[0].resized(32);
    let b = build(&ArchConfig::small(32, 2), 11).unwrap();
    let c = GradcheckConfig {
        fraction: 0.002,
        ..GradcheckConfig::default()
    };
    let plus = gradcheck(&b, &s.image, &s.mask, &c).unwrap();
    let minus = gradcheck(&b, &s.image, &s.mask, &GradcheckConfig { step: -c.step, ..c }).unwrap();
    assert_eq!(plus, minus);
    assert!(plus.max_rel_error < 1e-3, "{plus:?}");
    let big = build(&ArchConfig::small(64, 2), 0).unwrap();
    assert!(gradcheck(&big, &s.image, &s.mask, &c).is_err());
}
