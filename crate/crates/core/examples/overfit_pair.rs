use std::time::Instant;

use ffc_se::audio::{si_sdr, synth_pair_with, SynthSpec};
use ffc_se::models::{enhance_wave, ModelConfig};
use ffc_se::spectral::StftParams;
use ffc_se::tensor::Tensor;
use ffc_se::training::{train_step, TrainConfig, TrainState};

fn main() -> ffc_se::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let spec = SynthSpec {
        dur_s: 4096.0 / 16000.0,
        ..SynthSpec::default()
    };
    let (clean, noisy) = synth_pair_with(&spec, 1)?;
    let n = clean.len();
    let noisy_t = Tensor::new(&[1, n], noisy.samples.clone())?;
    let clean_t = Tensor::new(&[1, n], clean.samples.clone())?;
    let mut state = TrainState::new(ModelConfig::v0(), StftParams::default(), TrainConfig::default())?;
    println!("noisy si-sdr {:.2} dB", si_sdr(&noisy.samples, &clean.samples)?);
    let start = Instant::now();
    for _ in 0..steps {
        let m = train_step(&mut state, &noisy_t, &clean_t)?;
        if m.step % 50 == 0 || m.step <= 10 {
            let out = enhance_wave(&mut state.gen.clone(), &noisy.samples)?;
            println!(
                "step {} mel {:.4} adv {:.3} fm {:.3} d {:.3} si-sdr {:.2} ({:.1}s)",
                m.step,
                m.mel,
                m.adv,
                m.fm,
                m.loss_d,
                si_sdr(&out, &clean.samples)?,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
