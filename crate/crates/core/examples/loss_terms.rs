//! The generator objective split into its adversarial, feature-matching and
//! mel terms, and the discriminator loss, on one noisy/clean pair.

use ffc_se::audio::{synth_pair_with, SynthSpec};
use ffc_se::models::ModelConfig;
use ffc_se::spectral::StftParams;
use ffc_se::tensor::{BatchNormMode, Tape, Tensor};
use ffc_se::training::{discriminator_loss, generator_loss, TrainConfig, TrainState};

fn main() -> ffc_se::Result<()> {
    let spec = SynthSpec {
        dur_s: 4096.0 / 16000.0,
        ..SynthSpec::default()
    };
    let (clean, noisy) = synth_pair_with(&spec, 2)?;
    let n = clean.len();
    let noisy = Tensor::new(&[1, n], noisy.samples)?;
    let clean = Tensor::new(&[1, n], clean.samples)?;
    let s = TrainState::new(ModelConfig::v0(), StftParams::default(), TrainConfig::default())?;
    let w = s.config.weights;

    // The noisy input stands in for a generator output here.
    let tape = Tape::new();
    let mut store = s.disc.store.clone();
    let mut ctx = store.ctx(&tape, BatchNormMode::Train, false);
    let g = generator_loss(&s.disc.net, &mut ctx, tape.constant(noisy.clone()), tape.constant(clean.clone()), &w, &s.mel_loss()?)?;
    println!("adv {:.5}  fm {:.5}  mel {:.5}", g.adv.item(), g.fm.item(), g.mel.item());
    println!(
        "total {:.5} = adv + {} fm + {} mel = {:.5}",
        g.total.item(),
        w.lambda_fm,
        w.lambda_mel,
        g.adv.item() + w.lambda_fm * g.fm.item() + w.lambda_mel * g.mel.item()
    );

    let tape = Tape::new();
    let mut store = s.disc.store.clone();
    let mut ctx = store.ctx(&tape, BatchNormMode::Train, false);
    let d = discriminator_loss(&s.disc.net, &mut ctx, tape.constant(noisy), tape.constant(clean))?;
    println!("discriminator loss over {} scales: {:.5}", w.k, d.item());
    Ok(())
}
