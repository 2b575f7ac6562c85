use super::*;
use crate::autodiff::Tensor;
use crate::scene::{generate_dataset, DatasetConfig};

fn small_dataset(count: usize) -> Vec<TripleRecord> {
    generate_dataset(&DatasetConfig { count, seed: 42, train_fraction: 0.8 }).unwrap().train
}

#[test]
fn schedule_examples() {
    let peak = 5e-5;
    assert!((lr_schedule(25, 50, 1000, peak) - 2.5e-5).abs() < 1e-18);
    assert_eq!(lr_schedule(50, 50, 1000, peak), peak);
    assert!(lr_schedule(1000, 50, 1000, peak).abs() < 1e-12);
    assert_eq!(lr_schedule(5000, 50, 1000, peak), 0.0);
    assert_eq!(lr_schedule(0, 50, 1000, peak), 0.0);
}

#[test]
fn schedule_matches_closed_form_pointwise() {
    let (warmup, total, peak) = (50, 777, 3e-4);
    for step in 0..=total {
        let want = if step < warmup {
            peak * step as f64 / warmup as f64
        } else {
            let progress = (step - warmup) as f64 / (total - warmup) as f64;
            peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        };
        let got = lr_schedule(step, warmup, total, peak);
        assert!((got - want).abs() <= 1e-20 || (step == total && got == 0.0), "{step}: {got} vs {want}");
    }
}

fn single(value: f64, grad: f64) -> (Tensor, OptimizerState) {
    let mut t = Tensor::matrix(1, 1, vec![value]).unwrap().with_grad();
    t.accumulate_grad(&[grad]).unwrap();
    (t, OptimizerState::default())
}

#[test]
fn first_adamw_step_closed_form() {
    let (mut t, mut state) = single(1.0, 1.0);
    let mut params = [Param { name: "x", tensor: &mut t, decay: true }];
    adamw_step(&mut params, &mut state, 5e-5, &AdamWConfig::default()).unwrap();
    assert!((t.values()[0] - 0.99994).abs() < 1e-9, "{}", t.values()[0]);
}

#[test]
fn zero_gradient_without_decay_is_a_fixed_point() {
    let (mut t, mut state) = single(0.37, 0.0);
    let adam = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
    for _ in 0..10 {
        let mut params = [Param { name: "x", tensor: &mut t, decay: true }];
        adamw_step(&mut params, &mut state, 1e-2, &adam).unwrap();
    }
    assert_eq!(t.values()[0], 0.37);
}

#[test]
fn non_finite_gradient_aborts_the_step() {
    let (mut t, mut state) = single(1.0, f64::NAN);
    let mut params = [Param { name: "x", tensor: &mut t, decay: true }];
    assert!(matches!(adamw_step(&mut params, &mut state, 1e-3, &AdamWConfig::default()), Err(Error::Numeric(_))));
    assert_eq!(t.values()[0], 1.0);
    assert_eq!(state.step, 0);
}

#[test]
fn clipping_examples() {
    let mut a = vec![0.3, 0.4];
    let before = a.clone();
    assert_eq!(clip_gradients(&mut [&mut a[..]], 1.0), 0.5);
    assert_eq!(a, before);

    let mut a = vec![2.0, 0.0];
    let mut b = vec![0.0, 2.0 * 3f64.sqrt()];
    let orig: Vec<f64> = a.iter().chain(&b).copied().collect();
    assert!((clip_gradients(&mut [&mut a[..], &mut b[..]], 1.0) - 4.0).abs() < 1e-12);
    let clipped: Vec<f64> = a.iter().chain(&b).copied().collect();
    let n = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((n - 1.0).abs() < 1e-10);
    let cos = clipped.iter().zip(&orig).map(|(x, y)| x * y).sum::<f64>() / (n * 4.0);
    assert!((cos - 1.0).abs() < 1e-12);
}

fn examples(n: usize) -> Vec<Example> {
    Example::from_records(&small_dataset(n)).unwrap()
}

#[test]
fn accumulation_equals_one_step_on_mean_gradient() {
    let ex = examples(40);
    let (first, second): (Vec<&Example>, Vec<&Example>) = (ex[..8].iter().collect(), ex[8..16].iter().collect());
    let config = TrainConfig { peak_lr: 1e-3, warmup_steps: 0, ..TrainConfig::default() };
    let base = SemClipModel::init(&config.model_config()).unwrap();
    let imgs = |b: &[&Example]| b.iter().map(|e| base.image.encode(&e.scene)).collect::<Vec<_>>();

    let mut trainer = Trainer::with_model(config.clone(), base.clone(), 10);
    assert!(!trainer.micro_batch(&first, &imgs(&first)).unwrap());
    assert!(trainer.micro_batch(&second, &imgs(&second)).unwrap());

    // Oracle: gradients of each micro-batch computed separately, averaged by hand.
    let grads_of = |b: &[&Example]| {
        let mut m = base.clone();
        m.zero_grad();
        accumulate_batch(&mut m, b, &imgs(b), &config.weights).unwrap();
        m.params_mut().iter().map(|p| p.tensor.grad().unwrap().to_vec()).collect::<Vec<_>>()
    };
    let (g1, g2) = (grads_of(&first), grads_of(&second));
    let mut oracle = base.clone();
    oracle.zero_grad();
    let mut params = oracle.params_mut();
    let mut mean: Vec<Vec<f64>> =
        g1.iter().zip(&g2).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect()).collect();
    let mut views: Vec<&mut [f64]> = mean.iter_mut().map(|g| &mut g[..]).collect();
    clip_gradients(&mut views, config.clip_max_norm);
    for (p, g) in params.iter_mut().zip(&mean) {
        p.tensor.accumulate_grad(g).unwrap();
    }
    let lr = lr_schedule(1, 0, 10, config.peak_lr);
    adamw_step(&mut params, &mut OptimizerState::default(), lr, &config.adam).unwrap();
    drop(params);
    oracle.temperature.clamp();

    let got = trainer.model.clone();
    for (a, b) in [
        (&got.text.embedding, &oracle.text.embedding),
        (&got.text.w1, &oracle.text.w1),
        (&got.text.b1, &oracle.text.b1),
        (&got.text.w2, &oracle.text.w2),
        (&got.text.b2, &oracle.text.b2),
        (&got.temperature.theta, &oracle.temperature.theta),
    ] {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
    assert_ne!(got.text.w1, base.text.w1);
}

fn quick_config(weights: LossWeights) -> TrainConfig {
    TrainConfig { epochs: 3, batch_size: 16, peak_lr: 1e-3, warmup_steps: 5, weights, ..TrainConfig::default() }
}

#[test]
fn same_seed_gives_identical_logs_and_models() {
    let records = small_dataset(200);
    let cfg = quick_config(LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 });
    let a = train(&cfg, &records).unwrap();
    let b = train(&cfg, &records).unwrap();
    assert_eq!(log_csv(&a.log), log_csv(&b.log));
    assert_eq!(a.model, b.model);
    assert!(a.failure.is_none());
    let c = train(&TrainConfig { seed: 7, ..cfg }, &records).unwrap();
    assert_ne!(log_csv(&a.log), log_csv(&c.log));
}

#[test]
fn image_encoder_is_frozen() {
    let records = small_dataset(300);
    let cfg = TrainConfig { epochs: 30, ..quick_config(LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 }) };
    let before = SemClipModel::init(&cfg.model_config()).unwrap();
    let out = train(&cfg, &records).unwrap();
    assert!(out.log.len() >= 100, "{}", out.log.len());
    assert_eq!(out.model.image, before.image);
    assert_ne!(out.model.text, before.text);
}

#[test]
fn learnable_bank_stays_orthonormal_and_moves() {
    let records = small_dataset(200);
    let bank = BankConfig { n: 2, normalize: true, learnable: true };
    let cfg = TrainConfig { bank, ..quick_config(LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 }) };
    let before = SemClipModel::init(&cfg.model_config()).unwrap();
    let out = train(&cfg, &records).unwrap();
    assert!(out.model.bank.orthonormality_error() < 1e-8);
    assert_ne!(out.model.bank.v.values(), before.bank.v.values());
}

#[test]
fn frozen_bank_is_untouched() {
    let records = small_dataset(200);
    let cfg = quick_config(LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 });
    let before = SemClipModel::init(&cfg.model_config()).unwrap();
    let out = train(&cfg, &records).unwrap();
    assert_eq!(out.model.bank.v.values(), before.bank.v.values());
}

#[test]
fn baseline_logs_unweighted_components() {
    let records = small_dataset(200);
    let out = train(&quick_config(LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 }), &records).unwrap();
    for r in &out.log {
        assert_eq!(r.total, r.contrastive);
        assert!(r.paraphrase > 0.0 || r.negation >= 0.0);
    }
    let csv = log_csv(&out.log);
    assert!(csv.starts_with(LOG_HEADER));
    assert_eq!(csv.lines().count(), out.log.len() + 1);
}

#[test]
fn baseline_trajectory_ignores_bank_settings() {
    let records = small_dataset(200);
    let w = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 };
    let a = train(&quick_config(w), &records).unwrap();
    let b = train(&TrainConfig { bank: BankConfig { n: 1, normalize: false, learnable: false }, ..quick_config(w) }, &records)
        .unwrap();
    assert_eq!(a.model.text, b.model.text);
    let total = |o: &TrainOutcome| o.log.iter().map(|r| (r.total, r.lr, r.tau)).collect::<Vec<_>>();
    assert_eq!(total(&a), total(&b));
}

#[test]
fn divergence_keeps_last_good_model() {
    let records = small_dataset(200);
    let cfg = TrainConfig { peak_lr: f64::MAX, warmup_steps: 0, ..quick_config(LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 }) };
    let out = train(&cfg, &records).unwrap();
    assert!(out.failure.is_some());
    for p in out.model.clone().params_mut() {
        assert!(p.tensor.values().iter().all(|x| x.is_finite()));
    }
}

#[test]
fn rejects_bad_config() {
    let records = small_dataset(50);
    for cfg in [
        TrainConfig { accumulation_steps: 0, ..TrainConfig::default() },
        TrainConfig { peak_lr: 0.0, ..TrainConfig::default() },
        TrainConfig { weights: LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 }, ..TrainConfig::default() },
    ] {
        assert!(matches!(train(&cfg, &records), Err(Error::Usage(_))));
    }
    assert!(matches!(train(&TrainConfig::default(), &[]), Err(Error::Data(_))));
}
