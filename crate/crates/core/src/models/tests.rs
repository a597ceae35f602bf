use super::*;
use crate::nn::{Builder, Conv2d};
use crate::tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(kind: ModelKind) -> ModelConfig {
    match kind {
        ModelKind::FfcAe => ModelConfig::ffc_ae(4, 1, 0.5),
        ModelKind::FfcAeAblated => ModelConfig::ffc_ae_ablated(4, 1, 0.5),
        ModelKind::FfcUnet => ModelConfig::ffc_unet(4, 1, 3),
        ModelKind::VanillaUnet => ModelConfig::vanilla_unet(4, 1, 3),
    }
}

fn tiny_stft() -> StftParams {
    StftParams::new(32, 8).unwrap()
}

#[test]
fn published_counts_within_ten_percent() {
    for cfg in [ModelConfig::v0(), ModelConfig::v1(), ModelConfig::unet_published()] {
        let (label, target) = published_target(&cfg).unwrap();
        let n = Generator::new(cfg, StftParams::default()).unwrap().count_params() as f64;
        let rel = (n - target) / target;
        assert!(rel.abs() <= 0.10, "{label}: {n} vs {target} ({rel:+.3})");
    }
}

#[test]
fn exact_counts_are_stable() {
    let count = |cfg| Generator::new(cfg, StftParams::default()).unwrap().count_params();
    assert_eq!(count(ModelConfig::unet_published()), 7_625_858);
    assert!(count(ModelConfig::ffc_ae_ablated(64, 9, 0.75)) > count(ModelConfig::v1()));
}

#[test]
fn single_conv_has_ten_params() {
    let mut b = Builder::new(0);
    Conv2d::same(&mut b, "c", 1, 1, 3, true).unwrap();
    assert_eq!(b.finish().count(), 10);
}

#[test]
fn describe_rows_sum_to_count() {
    let m = Generator::new(ModelConfig::v0(), StftParams::default()).unwrap();
    let rows = m.describe();
    assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), m.count_params());
    assert!(rows.iter().any(|r| r.name == "res.block0.ffc1.ll.weight"));
    assert!(describe_table(&rows).lines().last().unwrap().contains(&m.count_params().to_string()));
}

#[test]
fn unet_skip_channels_line_up() {
    let levels = unet_levels(&ModelConfig::unet_published());
    let widths: Vec<_> = levels.iter().map(|l| l.width).collect();
    assert_eq!(widths, vec![32, 64, 128, 256]);
    let alphas: Vec<_> = levels.iter().map(|l| l.alpha).collect();
    assert_eq!(alphas, vec![0.75, 0.5, 0.25, 0.0]);
    assert_eq!(levels[3].merged, None);
    for i in 0..3 {
        // The level below upsamples to this level's width; concatenating the
        // skip doubles it.
        assert_eq!(levels[i + 1].up_out, levels[i].width);
        assert_eq!(levels[i].merged, Some(2 * levels[i].width));
    }
    assert_eq!(levels[0].up_out, 32);
}

#[test]
fn alpha_zero_matches_ablation() {
    let a = Generator::new(ModelConfig::ffc_ae(8, 2, 0.0), tiny_stft()).unwrap();
    let b = Generator::new(ModelConfig::ffc_ae_ablated(8, 2, 0.0), tiny_stft()).unwrap();
    assert_eq!(a.count_params(), b.count_params());
}

#[test]
fn spectrogram_shapes_for_all_kinds() {
    let sp = tiny_stft();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in ModelKind::ALL {
        let mut m = Generator::new(small(kind), sp).unwrap();
        for t in [17, 64, 129] {
            let x = Tensor::randn(&[1, 2, sp.n_bins(), t], &mut rng);
            let y = m.run_spec(x, BatchNormMode::Train).unwrap();
            assert_eq!(y.shape(), &[1, 2, sp.n_bins(), t], "{kind:?} T={t}");
            let top = sp.n_bins() - 1;
            for c in 0..2 {
                for j in 0..t {
                    assert_eq!(y.get(&[0, c, top, j]), 0.0);
                }
            }
        }
    }
}

#[test]
fn net_input_at_full_resolution() {
    let mut m = Generator::new(ModelConfig::ffc_unet(4, 1, 4), StftParams::default()).unwrap();
    let x = Tensor::randn(&[1, 2, 512, 64], &mut ChaCha8Rng::seed_from_u64(2));
    let tape = Tape::new();
    let mut ctx = m.store.ctx(&tape, BatchNormMode::Eval, false);
    let y = m.net.forward_net(&mut ctx, tape.constant(x)).unwrap();
    assert_eq!(y.shape(), vec![1, 2, 512, 64]);
}

#[test]
fn bad_input_is_rejected() {
    let mut m = Generator::new(small(ModelKind::FfcUnet), tiny_stft()).unwrap();
    let tape = Tape::new();
    let mut ctx = m.store.ctx(&tape, BatchNormMode::Eval, false);
    let odd = tape.constant(Tensor::zeros(&[1, 2, 8, 12]));
    assert!(m.net.forward_net(&mut ctx, odd).is_err());
    let chans = tape.constant(Tensor::zeros(&[1, 3, 8, 16]));
    assert!(matches!(
        m.net.forward_net(&mut ctx, chans),
        Err(Error::AxisMismatch { axis: 1, .. })
    ));
}

#[test]
fn zero_output_layer_gives_silence() {
    let sp = tiny_stft();
    let mut m = Generator::new(small(ModelKind::FfcAe), sp).unwrap();
    m.zero_output_layer();
    let wave: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
    let out = enhance(&mut m, &stft(&wave, sp).unwrap()).unwrap();
    assert_eq!(out.values.re.max_abs(), 0.0);
    assert_eq!(out.values.im.max_abs(), 0.0);
    assert!(enhance_wave(&mut m, &wave).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn every_parameter_gets_a_gradient() {
    let sp = tiny_stft();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in ModelKind::ALL {
        let mut m = Generator::new(small(kind), sp).unwrap();
        let x = Tensor::randn(&[2, 2, sp.n_bins(), 16], &mut rng);
        let target = Tensor::randn(&[2, 2, sp.n_bins(), 16], &mut rng);
        let tape = Tape::new();
        let mut ctx = m.store.ctx(&tape, BatchNormMode::Train, true);
        let y = m.net.forward_spec(&mut ctx, tape.constant(x)).unwrap();
        let loss = y.l1(tape.constant(target)).unwrap();
        let bindings = ctx.finish();
        let grads = tape.backward(loss).unwrap();
        let g = bindings.grads(&grads, &m.store);
        for (p, g) in m.store.params().iter().zip(&g) {
            assert!(g.max_abs() > 0.0, "{kind:?}: {} has zero gradient", p.name);
        }
    }
}

#[test]
fn phase_head_preserves_magnitude() {
    let sp = tiny_stft();
    let cfg = ModelConfig::ffc_ae(4, 1, 0.5);
    let mut m = phase_head(cfg, sp).unwrap();
    assert_eq!(m.config().in_channels(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mag = Tensor::uniform(&[sp.n_bins(), 10], 1.0, &mut rng).map(|v| v.abs());
    let spec = reconstruct_with_phase(&mut m, &mag, 36).unwrap();
    assert!(spec.magnitude().max_abs_diff(&mag) < 1e-12);
    assert!(phase_head(ModelConfig::unet_published(), sp).is_err());
    assert!(enhance(&mut m, &Spectrogram::zeros(sp, 36)).is_err());
}

#[test]
fn unit_phase_normalization() {
    let pred = Tensor::new(&[2, 1, 3], vec![3.0, 0.0, -1.0, 4.0, 0.0, 1.0]).unwrap();
    let u = normalize_phase(&pred).unwrap();
    let d = u.data();
    assert!((d[0] - 0.6).abs() < 1e-15 && (d[3] - 0.8).abs() < 1e-15);
    assert_eq!((d[1], d[4]), (1.0, 0.0));
    for i in 0..3 {
        assert!((d[i].hypot(d[i + 3]) - 1.0).abs() < 1e-15);
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let sp = tiny_stft();
    let mut m = Generator::new(small(ModelKind::FfcUnet).with_seed(9), sp).unwrap();
    // Round weights to f32 first so the stored copy is exact.
    for p in m.store.params().to_vec().iter() {
        let v = p.value.map(|x| x as f32 as f64);
        *m.store.by_name_mut(&p.name).unwrap() = v;
    }
    save_model(&m, &path).unwrap();
    let mut back = load_model(&path).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.stft(), sp);
    for (a, b) in m.store.params().iter().zip(back.store.params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
    let x = Tensor::randn(&[1, 2, sp.n_bins(), 8], &mut ChaCha8Rng::seed_from_u64(5));
    let ya = m.run_spec(x.clone(), BatchNormMode::Eval).unwrap();
    let yb = back.run_spec(x, BatchNormMode::Eval).unwrap();
    assert_eq!(ya, yb);
}

#[test]
fn wave_round_trip_smoke() {
    let sp = StftParams::default();
    let mut m = Generator::new(ModelConfig::ffc_ae(4, 1, 0.75), sp).unwrap();
    let wave: Vec<f64> = (0..16000)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
        .collect();
    let out = enhance_wave(&mut m, &wave).unwrap();
    assert_eq!(out.len(), wave.len());
    assert!(out.iter().all(|v| v.is_finite()));
}
