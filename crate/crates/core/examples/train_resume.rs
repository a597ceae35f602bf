//! Library-level training loop on a small model: a few steps, a
//! checkpoint, a reload, and a bitwise comparison with the run that never
//! stopped.

use ffc_se::audio::{synth_pair_with, SynthSpec};
use ffc_se::models::ModelConfig;
use ffc_se::spectral::{MelParams, StftParams};
use ffc_se::tensor::Tensor;
use ffc_se::training::{load_checkpoint, save_checkpoint, train_step, TrainConfig, TrainState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        dur_s: 2048.0 / 16000.0,
        ..SynthSpec::default()
    };
    let (clean, noisy) = synth_pair_with(&spec, 3)?;
    let n = clean.len();
    let noisy = Tensor::new(&[1, n], noisy.samples)?;
    let clean = Tensor::new(&[1, n], clean.samples)?;

    let config = TrainConfig {
        mel: MelParams {
            n_mels: 40,
            ..MelParams::default()
        },
        ..TrainConfig::default()
    };
    let fresh = || TrainState::new(ModelConfig::ffc_ae(8, 2, 0.75), StftParams::new(256, 64)?, config);

    let mut straight = fresh()?;
    for _ in 0..8 {
        let m = train_step(&mut straight, &noisy, &clean)?;
        println!("step {} d {:.4} g {:.4} mel {:.4}", m.step, m.loss_d, m.loss_g, m.mel);
    }

    let dir = std::env::temp_dir().join(format!("ffc-se-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("half.ckpt");
    let mut half = fresh()?;
    for _ in 0..4 {
        train_step(&mut half, &noisy, &clean)?;
    }
    save_checkpoint(&half, &path)?;
    let mut resumed = load_checkpoint(&path)?;
    for _ in 0..4 {
        train_step(&mut resumed, &noisy, &clean)?;
    }
    let same = straight
        .gen
        .store
        .params()
        .iter()
        .zip(resumed.gen.store.params())
        .all(|(a, b)| a.value == b.value);
    println!("resumed run matches the uninterrupted one bitwise: {same}");
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
