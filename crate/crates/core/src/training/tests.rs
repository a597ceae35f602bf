use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::ModelConfig;
use crate::spectral::{log_mel, MelParams, StftParams};
use crate::tensor::{grad_check, BatchNormMode, Tape, Tensor, Var};

const LEN: usize = 1024;

fn small_stft() -> StftParams {
    StftParams::new(64, 16).unwrap()
}

fn small_mel() -> MelParams {
    MelParams {
        n_mels: 12,
        ..MelParams::default()
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        mel: small_mel(),
        seed: 3,
        ..TrainConfig::default()
    }
}

fn state() -> TrainState {
    TrainState::new(ModelConfig::ffc_ae(4, 1, 0.5).with_seed(1), small_stft(), small_config()).unwrap()
}

fn pair(seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = Tensor::from_fn(&[1, LEN], |i| 0.5 * (i as f64 * 0.07).sin() + 0.2 * (i as f64 * 0.31).sin());
    let noisy = clean.zip_map(&Tensor::randn(&[1, LEN], &mut rng), |c, n| c + 0.3 * n);
    (noisy, clean)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn discriminator_structure() {
    let d = Discriminators::new(3, 0).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.net.pooled_lengths(16384), vec![16384, 8192, 4096]);
    let tape = Tape::new();
    let mut store = d.store.clone();
    let mut ctx = store.ctx(&tape, BatchNormMode::Train, false);
    let outs = d.net.forward(&mut ctx, tape.constant(Tensor::zeros(&[2, LEN]))).unwrap();
    assert_eq!(outs.len(), 3);
    for (i, o) in outs.iter().enumerate() {
        assert_eq!(o.features.len(), d.net.feature_layers());
        assert_eq!(o.score.shape(), vec![2, 1, (LEN >> i) / 256]);
    }
    let again = d.net.forward(&mut ctx, tape.constant(Tensor::zeros(&[2, LEN]))).unwrap();
    assert_eq!(*outs[2].score.value(), *again[2].score.value());
    assert!(d.net.forward(&mut ctx, tape.constant(Tensor::zeros(&[1, 1000]))).is_err());
}

#[test]
fn lsgan_formulas() {
    let tape = Tape::new();
    let ones = [tape.constant(Tensor::full(&[2, 1, 4], 1.0))];
    let zeros = [tape.constant(Tensor::zeros(&[2, 1, 4]))];
    assert_eq!(lsgan_d(&ones, &zeros).unwrap().item(), 0.0);
    assert_eq!(lsgan_g(&ones).unwrap().item(), 0.0);

    let real: Vec<Tensor> = (0..3).map(|i| random(&[2, 1, 5 + i], i as u64)).collect();
    let fake: Vec<Tensor> = (0..3).map(|i| random(&[2, 1, 5 + i], 10 + i as u64)).collect();
    let mean = |t: &Tensor, f: &dyn Fn(f64) -> f64| t.data().iter().map(|&v| f(v)).sum::<f64>() / t.numel() as f64;
    let want_d: f64 = real
        .iter()
        .zip(&fake)
        .map(|(r, f)| mean(r, &|v| (v - 1.0) * (v - 1.0)) + mean(f, &|v| v * v))
        .sum();
    let want_g: f64 = fake.iter().map(|f| mean(f, &|v| (v - 1.0) * (v - 1.0))).sum();
    let rv: Vec<Var> = real.iter().map(|t| tape.constant(t.clone())).collect();
    let fv: Vec<Var> = fake.iter().map(|t| tape.constant(t.clone())).collect();
    assert!((lsgan_d(&rv, &fv).unwrap().item() - want_d).abs() < 1e-12);
    assert!((lsgan_g(&fv).unwrap().item() - want_g).abs() < 1e-12);
}

#[test]
fn feature_matching_values() {
    let tape = Tape::new();
    let a: Vec<Vec<Tensor>> = (0..3)
        .map(|i| (0..2).map(|j| random(&[1, 4, 3 + j], 7 * i + j as u64)).collect())
        .collect();
    let as_vars = |t: &Vec<Vec<Tensor>>| -> Vec<Vec<Var>> {
        t.iter().map(|l| l.iter().map(|x| tape.constant(x.clone())).collect()).collect()
    };
    let va = as_vars(&a);
    assert_eq!(feature_matching(&va, &va).unwrap().item(), 0.0);
    let shifted: Vec<Vec<Tensor>> = a.iter().map(|l| l.iter().map(|x| x.map(|v| v + 0.75)).collect()).collect();
    let fm = feature_matching(&va, &as_vars(&shifted)).unwrap().item();
    assert!((fm - 0.75).abs() < 1e-12);

    let b: Vec<Vec<Tensor>> = (0..3)
        .map(|i| (0..2).map(|j| random(&[1, 4, 3 + j], 100 + 7 * i + j as u64)).collect())
        .collect();
    let mut want = 0.0;
    for (la, lb) in a.iter().zip(&b) {
        for (x, y) in la.iter().zip(lb) {
            want += x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.numel() as f64;
        }
    }
    want /= 6.0;
    assert!((feature_matching(&va, &as_vars(&b)).unwrap().item() - want).abs() < 1e-12);
}

#[test]
fn mel_loss_values_and_gradient() {
    let ml = MelLoss::new(small_mel(), small_stft()).unwrap();
    let (noisy, clean) = pair(1);
    let tape = Tape::new();
    let w = tape.constant(clean.clone());
    assert_eq!(ml.forward(w, w).unwrap().item(), 0.0);
    let zero = tape.constant(Tensor::zeros(&[1, LEN]));
    let lm = log_mel(clean.data(), &small_mel(), small_stft()).unwrap();
    let floor = small_mel().log_floor.ln();
    let want = lm.data().iter().map(|v| (v - floor).abs()).sum::<f64>() / lm.numel() as f64;
    assert!((ml.forward(w, zero).unwrap().item() - want).abs() < 1e-12);

    let short = noisy.reshape(&[1, LEN]).unwrap();
    let err = grad_check(
        |tape, x| {
            let r = tape.constant(clean.clone());
            ml.forward(x, r)
        },
        &short,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "mel loss gradient error {err}");
}

#[test]
fn generator_loss_is_literal_combination() {
    let s = state();
    let ml = s.mel_loss().unwrap();
    let (noisy, clean) = pair(2);
    let tape = Tape::new();
    let mut store = s.disc.store.clone();
    let mut ctx = store.ctx(&tape, BatchNormMode::Train, false);
    let w = s.config.weights;
    assert_eq!((w.lambda_fm, w.lambda_mel, w.k), (2.0, 45.0, 3));
    let t = generator_loss(&s.disc.net, &mut ctx, tape.constant(noisy), tape.constant(clean), &w, &ml).unwrap();
    let recombined = t.adv.item() + 2.0 * t.fm.item() + 45.0 * t.mel.item();
    assert!((t.total.item() - recombined).abs() < 1e-12);
}

#[test]
fn constant_discriminators_leave_mel_term() {
    let mut s = state();
    // zero weights: every score and feature equals a bias-only constant
    for p in s.disc.store.params_mut() {
        if p.name.ends_with("weight") {
            p.value.data_mut().fill(0.0);
        }
    }
    let ml = s.mel_loss().unwrap();
    let (noisy, clean) = pair(3);
    let tape = Tape::new();
    let mut ctx = s.disc.store.ctx(&tape, BatchNormMode::Train, false);
    let w = s.config.weights;
    let t = generator_loss(&s.disc.net, &mut ctx, tape.constant(noisy), tape.constant(clean), &w, &ml).unwrap();
    assert_eq!(t.fm.item(), 0.0);
    let bias: Vec<f64> = s
        .disc
        .store
        .params()
        .iter()
        .filter(|p| p.name.ends_with("out.bias"))
        .map(|p| p.value.item())
        .collect();
    let adv: f64 = bias.iter().map(|b| (b - 1.0) * (b - 1.0)).sum();
    assert!((t.adv.item() - adv).abs() < 1e-12);
    assert!((t.total.item() - (adv + 45.0 * t.mel.item())).abs() < 1e-12);
}

#[test]
fn toy_generator_finite_differences() {
    let s = state();
    let ml = s.mel_loss().unwrap();
    let (noisy, clean) = pair(4);
    let theta = Tensor::new(&[3], vec![0.8, 0.3, 0.01]).unwrap();
    let w = s.config.weights;
    // fake = theta0 * noisy + theta1 * noisy^2 + theta2
    let basis = Tensor::from_fn(&[LEN, 3], |i| {
        let v = noisy.data()[i / 3];
        [v, v * v, 1.0][i % 3]
    });
    let err = grad_check(
        |tape, th| {
            let mut store = s.disc.store.clone();
            let mut ctx = store.ctx(tape, BatchNormMode::Train, false);
            let fake = th.linear_along(&basis, 0)?.reshape(&[1, LEN])?;
            let t = generator_loss(&s.disc.net, &mut ctx, fake, tape.constant(clean.clone()), &w, &ml)?;
            Ok(t.total)
        },
        &theta,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "toy generator gradient error {err}");
}

#[test]
fn real_path_gets_no_gradient() {
    let s = state();
    let ml = s.mel_loss().unwrap();
    let (noisy, clean) = pair(5);
    let tape = Tape::new();
    let mut store = s.disc.store.clone();
    let mut ctx = store.ctx(&tape, BatchNormMode::Train, false);
    let fake = tape.leaf(noisy);
    let real = tape.leaf(clean);
    let t = generator_loss(&s.disc.net, &mut ctx, fake, real, &s.config.weights, &ml).unwrap();
    let binds = ctx.finish();
    let g = tape.backward(t.total).unwrap();
    assert!(g.get(fake).unwrap().max_abs() > 0.0);
    assert!(g.get(real).map_or(0.0, |t| t.max_abs()) == 0.0);
    assert!(binds.grads(&g, &s.disc.store).iter().all(|t| t.max_abs() == 0.0));
}

#[test]
fn generator_step_leaves_discriminators_alone() {
    let mut s = state();
    s.opt_d.config.lr = 0.0;
    let before = s.disc.store.clone();
    let gen_before = s.gen.store.clone();
    let (noisy, clean) = pair(6);
    train_step(&mut s, &noisy, &clean).unwrap();
    for (a, b) in before.params().iter().zip(s.disc.store.params()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    assert!(gen_before.params().iter().zip(s.gen.store.params()).any(|(a, b)| a.value != b.value));
}

#[test]
fn every_discriminator_gets_gradients() {
    let s = state();
    let (noisy, clean) = pair(7);
    let tape = Tape::new();
    let mut store = s.disc.store.clone();
    let mut ctx = store.ctx(&tape, BatchNormMode::Train, true);
    let loss = discriminator_loss(&s.disc.net, &mut ctx, tape.constant(noisy), tape.constant(clean)).unwrap();
    let binds = ctx.finish();
    let grads = binds.grads(&tape.backward(loss).unwrap(), &s.disc.store);
    for i in 0..3 {
        let prefix = format!("disc{i}.");
        let norm: f64 = s
            .disc
            .store
            .params()
            .iter()
            .zip(&grads)
            .filter(|(p, _)| p.name.starts_with(&prefix))
            .map(|(_, g)| g.norm_sq())
            .sum();
        assert!(norm > 0.0, "discriminator {i} got no gradient");
    }
}

#[test]
fn discriminator_only_descent() {
    let mut s = state();
    s.config.weights.lambda_fm = 0.0;
    s.config.weights.lambda_mel = 0.0;
    s.opt_g.config.lr = 0.0;
    let (noisy, clean) = pair(8);
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let m = train_step(&mut s, &noisy, &clean).unwrap();
        assert!(m.loss_d <= prev, "L_D rose from {prev} to {} at step {}", m.loss_d, m.step);
        prev = m.loss_d;
    }
}

#[test]
fn train_step_is_deterministic() {
    let mut a = state();
    let mut b = state();
    let (noisy, clean) = pair(9);
    for _ in 0..2 {
        let ma = train_step(&mut a, &noisy, &clean).unwrap();
        let mb = train_step(&mut b, &noisy, &clean).unwrap();
        assert_eq!(ma, mb);
    }
    for (x, y) in a.gen.store.params().iter().zip(b.gen.store.params()) {
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn non_finite_loss_is_reported() {
    let mut s = state();
    let (mut noisy, clean) = pair(10);
    noisy.data_mut()[5] = f64::NAN;
    match train_step(&mut s, &noisy, &clean) {
        Err(crate::Error::NonFiniteLoss { step: 1, .. }) => {}
        other => panic!("expected non-finite loss, got {other:?}"),
    }
}

fn assert_same(a: &TrainState, b: &TrainState) {
    assert_eq!(a.step, b.step);
    assert_eq!(a.rng, b.rng);
    assert_eq!(a.opt_g, b.opt_g);
    assert_eq!(a.opt_d, b.opt_d);
    assert_eq!((a.data_epoch_seed, a.data_pos), (b.data_epoch_seed, b.data_pos));
    for (x, y) in a.gen.store.params().iter().zip(b.gen.store.params()) {
        assert_eq!(x.value, y.value, "{}", x.name);
    }
    for (x, y) in a.gen.store.stats().iter().zip(b.gen.store.stats()) {
        assert_eq!(x.stats, y.stats, "{}", x.name);
    }
    for (x, y) in a.disc.store.params().iter().zip(b.disc.store.params()) {
        assert_eq!(x.value, y.value, "{}", x.name);
    }
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    let batches: Vec<(Tensor, Tensor)> = (0..10).map(|i| pair(20 + i)).collect();

    let mut full = state();
    for (n, c) in &batches {
        full.rng.gen::<u64>();
        train_step(&mut full, n, c).unwrap();
    }

    let mut first = state();
    for (n, c) in &batches[..5] {
        first.rng.gen::<u64>();
        train_step(&mut first, n, c).unwrap();
    }
    first.data_pos = 5;
    save_checkpoint(&first, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    assert_same(&first, &resumed);
    for (n, c) in &batches[5..] {
        resumed.rng.gen::<u64>();
        train_step(&mut resumed, n, c).unwrap();
    }
    resumed.data_pos = full.data_pos;
    assert_same(&full, &resumed);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(crate::Error::Checkpoint { .. })));
}

#[test]
fn metrics_are_appended() {
    let dir = tempfile::tempdir().unwrap();
    let (j, c) = (dir.path().join("m.jsonl"), dir.path().join("m.csv"));
    let m = StepMetrics {
        step: 1,
        loss_d: 0.5,
        loss_g: 2.0,
        adv: 1.0,
        fm: 0.25,
        mel: 0.01,
        grad_norm_g: 3.0,
        grad_norm_d: 4.0,
    };
    for _ in 0..2 {
        let mut log = MetricsLog::open(&j, Some(&c)).unwrap();
        log.record(&m).unwrap();
        log.flush().unwrap();
    }
    let lines: Vec<String> = std::fs::read_to_string(&j).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    let back: StepMetrics = serde_json::from_str(&lines[1]).unwrap();
    assert_eq!(back, m);
    assert_eq!(std::fs::read_to_string(&c).unwrap().lines().count(), 3);
}
