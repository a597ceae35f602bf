//! Writes synthetic (noisy, clean) WAV pairs and a manifest that
//! `ffc-se train --data manifest` accepts.
//!
//! Usage: `cargo run --example synth_dataset <dir> [pairs]`

use std::path::PathBuf;

use ffc_se::audio::{measured_snr, synth_pair_with, write_wav, NoiseKind, PairedDataset, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synth-data".into()));
    let pairs: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    std::fs::create_dir_all(&dir)?;
    let mut set = PairedDataset {
        pairs: Vec::new(),
        split: "train".into(),
    };
    for i in 0..pairs {
        let spec = SynthSpec {
            f0: 110.0 + 20.0 * i as f64,
            snr_db: -5.0 + (i % 4) as f64 * 5.0,
            noise: if i % 2 == 0 {
                NoiseKind::White
            } else {
                NoiseKind::BandPass { center_hz: 1500.0, q: 2.0 }
            },
            ..SynthSpec::default()
        };
        let (clean, noisy) = synth_pair_with(&spec, i)?;
        let (n, c) = (format!("noisy-{i:03}.wav"), format!("clean-{i:03}.wav"));
        write_wav(&dir.join(&n), &noisy)?;
        write_wav(&dir.join(&c), &clean)?;
        println!("{n}  f0 {:>5.1} Hz  snr {:>5.1} dB", spec.f0, measured_snr(&clean.samples, &noisy.samples));
        set.pairs.push((n.into(), c.into()));
    }
    set.write_manifest(&dir.join("manifest.tsv"))?;
    println!("wrote {}", dir.join("manifest.tsv").display());
    Ok(())
}
