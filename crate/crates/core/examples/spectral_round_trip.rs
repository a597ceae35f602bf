//! STFT analysis/synthesis round trip and log-mel features of a synthetic
//! harmonic clip, at the default 1024/256 Hann setup.

use ffc_se::audio::{synth_pair_with, SynthSpec};
use ffc_se::spectral::{istft, log_mel, stft, MelParams, StftParams};

fn main() -> ffc_se::Result<()> {
    let (clean, _) = synth_pair_with(&SynthSpec::default(), 7)?;
    let p = StftParams::default();
    let spec = stft(&clean.samples, p)?;
    println!(
        "{} samples -> {} bins x {} frames (win {}, hop {})",
        clean.len(),
        spec.n_bins(),
        spec.n_frames(),
        p.win_len,
        p.hop
    );
    let back = istft(&spec)?;
    let err = clean.samples.iter().zip(&back).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    println!("round trip max error {err:.2e}");

    let mel = log_mel(&clean.samples, &MelParams::default(), p)?;
    let frames = mel.shape()[1];
    let mid = frames / 2;
    println!("log-mel {:?}; middle frame, every 8th band:", mel.shape());
    for m in (0..mel.shape()[0]).step_by(8) {
        println!("  band {m:>2}  {:>8.3}", mel.get(&[m, mid]));
    }
    Ok(())
}
