use std::f64::consts::PI;
use std::path::Path;

use proptest::prelude::*;

use ffc_se::audio::{encode_wav, parse_wav, si_sdr, AudioClip};
use ffc_se::checkpoint::{Container, Dtype};
use ffc_se::cli::RunConfig;
use ffc_se::models::ModelKind;
use ffc_se::spectral::{channels_to_complex, complex_to_channels, log_mel, mel_filterbank, stft, MelParams, StftParams};
use ffc_se::tensor::fft::{irfft_axis, rfft_axis};
use ffc_se::tensor::{ComplexTensor, Real, Tensor};

fn signal(max_len: usize) -> impl Strategy<Value = Vec<Real>> {
    prop::collection::vec(-1.0..1.0f64, 1..max_len)
}

fn even_signal() -> impl Strategy<Value = Vec<Real>> {
    (1usize..65).prop_flat_map(|h| prop::collection::vec(-1.0..1.0f64, 2 * h))
}

fn naive_dft(x: &[Real]) -> Vec<(Real, Real)> {
    let n = x.len();
    (0..=n / 2)
        .map(|b| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (f, &v)| {
                let ang = -2.0 * PI * ((b * f) % n) as Real / n as Real;
                (re + v * ang.cos(), im + v * ang.sin())
            })
        })
        .collect()
}

fn max_diff(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn squared_hann_overlap_adds_from_three_frames_on(hop in 1usize..40, m in 2usize..9) {
        // squared Hann has harmonics at 1 and 2 cycles per window
        let p = StftParams { win_len: 2 * hop * m, hop: 2 * hop };
        let w = p.window();
        let sums: Vec<Real> = (0..p.hop).map(|n| w.iter().skip(n).step_by(p.hop).map(|v| v * v).sum()).collect();
        let flat = sums.iter().all(|s| (s - sums[0]).abs() < 1e-9);
        prop_assert_eq!(flat, m >= 3);
        prop_assert_eq!(p.satisfies_cola(), flat);
        prop_assert_eq!(StftParams::new(p.win_len, p.hop).is_ok(), flat);
    }

    #[test]
    fn rfft_matches_naive_dft(x in even_signal()) {
        let n = x.len();
        let spec = rfft_axis(&Tensor::new(&[n], x.clone()).unwrap(), 0).unwrap();
        for (b, (re, im)) in naive_dft(&x).into_iter().enumerate() {
            prop_assert!((spec.re.data()[b] - re).abs() < 1e-10);
            prop_assert!((spec.im.data()[b] - im).abs() < 1e-10);
        }
        let back = irfft_axis(&spec, 0, n).unwrap();
        prop_assert!(max_diff(back.data(), &x) < 1e-12);
    }

    #[test]
    fn parseval(x in even_signal()) {
        let n = x.len();
        let spec = rfft_axis(&Tensor::new(&[n], x.clone()).unwrap(), 0).unwrap();
        let freq: Real = (0..=n / 2)
            .map(|b| {
                let w = if b == 0 || b == n / 2 { 1.0 } else { 2.0 };
                w * (spec.re.data()[b].powi(2) + spec.im.data()[b].powi(2))
            })
            .sum::<Real>() / n as Real;
        let time: Real = x.iter().map(|v| v * v).sum();
        prop_assert!((freq - time).abs() < 1e-9 * time.max(1.0));
    }

    #[test]
    fn stft_is_linear(x in signal(700), a in -3.0..3.0f64, b in -3.0..3.0f64, seed in any::<u64>()) {
        let p = StftParams::new(64, 16).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let y: Vec<Real> = (0..x.len()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let mix: Vec<Real> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (sx, sy, sm) = (stft(&x, p).unwrap().to_packed(), stft(&y, p).unwrap().to_packed(), stft(&mix, p).unwrap().to_packed());
        let expect = sx.zip_map(&sy, |u, v| a * u + b * v);
        prop_assert!(sm.max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn pure_tone_peaks_at_its_bin(k in 1usize..31, amp in 0.1..1.0f64, phase in 0.0..6.28f64) {
        let p = StftParams::new(64, 16).unwrap();
        let x: Vec<Real> = (0..640).map(|i| amp * (2.0 * PI * k as Real * i as Real / 64.0 + phase).cos()).collect();
        let mag = stft(&x, p).unwrap().magnitude();
        let frames = mag.shape()[1];
        for t in 2..frames - 2 {
            let col: Vec<Real> = (0..mag.shape()[0]).map(|b| mag.get(&[b, t])).collect();
            let peak = col.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            prop_assert_eq!(peak, k);
            // Hann: all energy in bins k-1..=k+1
            let off: Real = col.iter().enumerate().filter(|(b, _)| b.abs_diff(k) > 1).map(|(_, v)| *v).sum();
            prop_assert!(off < 1e-9 * col[k]);
        }
    }

    #[test]
    fn log_mel_shifts_by_log_gain(x in prop::collection::vec(-1.0..1.0f64, 256..600), c in 0.5..4.0f64) {
        let mp = MelParams { n_mels: 16, log_floor: 1e-12, ..MelParams::default() };
        let p = StftParams::new(128, 32).unwrap();
        let base = log_mel(&x, &mp, p).unwrap();
        let scaled: Vec<Real> = x.iter().map(|v| c * v).collect();
        let shifted = log_mel(&scaled, &mp, p).unwrap();
        for (u, v) in base.data().iter().zip(shifted.data()) {
            if *u > -20.0 {
                prop_assert!((v - u - c.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn si_sdr_is_scale_invariant(x in prop::collection::vec(-1.0..1.0f64, 16..300), c in 0.01..100.0f64, seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let est: Vec<Real> = x.iter().map(|v| v + 0.3 * rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let scaled: Vec<Real> = est.iter().map(|v| c * v).collect();
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
        let (a, b) = (si_sdr(&est, &x).unwrap(), si_sdr(&scaled, &x).unwrap());
        prop_assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn complex_channel_round_trip(c in 1usize..4, f in 1usize..6, t in 1usize..6, seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let z = ComplexTensor::new(Tensor::randn(&[c, f, t], &mut rng), Tensor::randn(&[c, f, t], &mut rng)).unwrap();
        let packed = complex_to_channels(&z);
        prop_assert_eq!(packed.shape(), &[2 * c, f, t]);
        prop_assert_eq!(channels_to_complex(&packed).unwrap(), z);
    }

    #[test]
    fn wav_round_trip_within_quantization(x in prop::collection::vec(-1.0..1.0f64, 0..400)) {
        let clip = AudioClip::new(x.clone(), 16_000).unwrap();
        let back = parse_wav(&encode_wav(&clip), Path::new("mem.wav")).unwrap();
        prop_assert_eq!(back.len(), x.len());
        prop_assert!(max_diff(&back.samples, &x) <= 1.0 / 32767.0);
    }

    #[test]
    fn checkpoint_container_round_trip(
        entries in prop::collection::vec((prop::collection::vec(1usize..4, 0..4), any::<bool>()), 0..5),
        meta in prop::collection::btree_map("[a-z_]{1,8}", "[ -~]{0,12}", 0..4),
        seed in any::<u64>(),
    ) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut c = Container::new("model");
        for (k, v) in &meta {
            c.set(k.clone(), v);
        }
        for (i, (shape, f64s)) in entries.iter().enumerate() {
            let mut t = Tensor::randn(shape, &mut rng);
            let dtype = if *f64s { Dtype::F64 } else { Dtype::F32 };
            if !f64s {
                t = t.map(|v| v as f32 as f64);
            }
            c.push(format!("t{i}"), dtype, t);
        }
        let bytes = c.to_bytes();
        prop_assert_eq!(Container::from_bytes(&bytes, Path::new("mem")).unwrap(), c);
        // any single flipped byte is caught
        let at = (seed as usize) % bytes.len();
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        prop_assert!(Container::from_bytes(&bad, Path::new("mem")).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn config_emit_parse_round_trip(
        kind in prop::sample::select(vec![ModelKind::FfcAe, ModelKind::FfcAeAblated, ModelKind::FfcUnet, ModelKind::VanillaUnet]),
        in_ch in 1usize..64,
        n_blocks in 1usize..10,
        steps in 1u64..100_000,
        lr in 1e-6..1e-2f64,
        snr in -10.0..20.0f64,
    ) {
        let mut cfg = RunConfig::default();
        cfg.model.kind = kind;
        cfg.model.in_ch = in_ch;
        cfg.model.n_blocks = n_blocks;
        cfg.train.steps = steps;
        cfg.optim.lr = lr;
        cfg.synth.snr_db = snr;
        prop_assert_eq!(RunConfig::parse(&cfg.emit()).unwrap(), cfg);
    }
}

#[test]
fn mel_filters_are_ordered_and_peak_at_one() {
    let mp = MelParams::default();
    let fb = mel_filterbank(&mp, 1024).unwrap();
    let bins = fb.shape()[1];
    let mut last_peak = 0;
    for m in 0..mp.n_mels {
        let row = &fb.data()[m * bins..][..bins];
        let peak = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(peak >= last_peak, "filter {m} peaks below filter {}", m.saturating_sub(1));
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        last_peak = peak;
    }
}
