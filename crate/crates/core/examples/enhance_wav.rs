//! Enhances one WAV file with a saved model (or a fresh untrained one when
//! no checkpoint is given) and reports SI-SDR against an optional clean
//! reference.
//!
//! Usage: `cargo run --release --example enhance_wav <noisy.wav> <out.wav> [model.ckpt or -] [clean.wav]`

use std::path::Path;

use ffc_se::audio::{read_wav, si_sdr, write_wav, AudioClip};
use ffc_se::cli::load_generator;
use ffc_se::models::{enhance_wave, Generator, ModelConfig};
use ffc_se::spectral::StftParams;

fn main() -> ffc_se::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: enhance_wav <noisy.wav> <out.wav> [model.ckpt] [clean.wav]");
        std::process::exit(2);
    }
    let noisy = read_wav(Path::new(&args[0]))?;
    let mut model = match args.get(2).filter(|p| p.as_str() != "-") {
        Some(p) => load_generator(Path::new(p))?,
        None => Generator::new(ModelConfig::v0(), StftParams::default())?,
    };
    let out = enhance_wave(&mut model, &noisy.samples)?;
    if let Some(c) = args.get(3) {
        let clean = read_wav(Path::new(c))?;
        println!(
            "si-sdr noisy {:.2} dB, enhanced {:.2} dB",
            si_sdr(&noisy.samples, &clean.samples)?,
            si_sdr(&out, &clean.samples)?
        );
    }
    write_wav(Path::new(&args[1]), &AudioClip::new(out, noisy.sample_rate)?)?;
    println!("wrote {} ({} samples)", args[1], noisy.len());
    Ok(())
}
