//! Generator architectures (FFC-AE, FFC-UNet and their ablations),
//! parameter accounting, spectrogram enhancement, and the phase head.

mod config;
mod generator;

pub use config::{alpha_schedule, published_target, Head, ModelConfig, ModelKind};
pub use generator::{describe_table, unet_levels, Generator, LevelShape, Network, ParamRow};

use std::path::Path;

use crate::checkpoint::{load_store, push_store, Container, Dtype};
use crate::error::{Error, Result};
use crate::spectral::{istft, stft, Spectrogram, StftParams};
use crate::tensor::{BatchNormMode, Real, Tensor};

/// Exact number of trainable scalars.
pub fn count_params(model: &Generator) -> usize {
    model.count_params()
}

/// Runs the generator on one spectrogram in eval mode. The output is a
/// direct prediction of the clean real and imaginary parts.
pub fn enhance(model: &mut Generator, noisy: &Spectrogram) -> Result<Spectrogram> {
    if model.config().head != Head::Spectrum {
        return Err(Error::invalid("enhance needs a spectrum-head model"));
    }
    if noisy.params != model.stft() {
        return Err(Error::invalid(format!(
            "spectrogram uses {:?} but the model was built for {:?}",
            noisy.params,
            model.stft()
        )));
    }
    let out = model.run_spec(noisy.to_packed(), BatchNormMode::Eval)?;
    Spectrogram::from_packed(&out, noisy.params, noisy.orig_len)
}

/// Waveform in, enhanced waveform of the same length out.
pub fn enhance_wave(model: &mut Generator, wave: &[Real]) -> Result<Vec<Real>> {
    let spec = stft(wave, model.stft())?;
    istft(&enhance(model, &spec)?)
}

/// Builds the phase-estimation variant of `config`: one magnitude channel
/// in, (cos, sin) out.
pub fn phase_head(config: ModelConfig, stft: StftParams) -> Result<Generator> {
    if !matches!(
        config.kind,
        ModelKind::FfcAe | ModelKind::FfcAeAblated | ModelKind::VanillaUnet
    ) {
        return Err(Error::InvalidConfig(format!(
            "no phase head for {}",
            config.kind.name()
        )));
    }
    Generator::new(config.with_head(Head::Phase), stft)
}

/// Normalizes a `... x 2 x F x T` (cos, sin) prediction to unit norm per
/// cell. A zero cell maps to phase 0.
pub fn normalize_phase(pred: &Tensor) -> Result<Tensor> {
    let shape = pred.shape();
    let r = shape.len();
    if r < 3 || shape[r - 3] != 2 {
        return Err(Error::invalid(format!("expected ... x 2 x F x T, got {shape:?}")));
    }
    let cell = shape[r - 2] * shape[r - 1];
    let outer = pred.numel() / (2 * cell);
    let mut out = pred.data().to_vec();
    for o in 0..outer {
        let base = o * 2 * cell;
        for i in 0..cell {
            let (c, s) = (out[base + i], out[base + cell + i]);
            let n = c.hypot(s);
            let (c, s) = if n > 0.0 { (c / n, s / n) } else { (1.0, 0.0) };
            out[base + i] = c;
            out[base + cell + i] = s;
        }
    }
    Tensor::new(shape, out)
}

/// Predicts the phase of an `F x T` magnitude and returns the complex
/// spectrogram `mag * (cos, sin)` with unit-normalized phase, so its
/// magnitude equals `mag`.
pub fn reconstruct_with_phase(model: &mut Generator, mag: &Tensor, orig_len: usize) -> Result<Spectrogram> {
    if model.config().head != Head::Phase {
        return Err(Error::invalid("phase reconstruction needs a phase-head model"));
    }
    let (f, t) = (mag.shape()[0], mag.shape()[1]);
    let pred = model.run_spec(mag.reshape(&[1, 1, f, t])?, BatchNormMode::Eval)?;
    let unit = normalize_phase(&pred)?;
    let (cos, sin) = unit.data().split_at(f * t);
    let re = Tensor::new(&[f, t], mag.data().iter().zip(cos).map(|(m, c)| m * c).collect())?;
    let im = Tensor::new(&[f, t], mag.data().iter().zip(sin).map(|(m, s)| m * s).collect())?;
    let s = Spectrogram {
        values: crate::tensor::ComplexTensor::new(re, im)?,
        params: model.stft(),
        orig_len,
    };
    Ok(s)
}

const MODEL_KIND: &str = "model";

fn head_name(h: Head) -> &'static str {
    match h {
        Head::Spectrum => "spectrum",
        Head::Phase => "phase",
    }
}

/// Writes the model configuration into checkpoint metadata.
pub fn write_model_meta(c: &mut Container, prefix: &str, model: &Generator) {
    let cfg = model.config();
    c.set(format!("{prefix}kind"), cfg.kind.name());
    c.set(format!("{prefix}in_ch"), cfg.in_ch);
    c.set(format!("{prefix}n_blocks"), cfg.n_blocks);
    c.set(format!("{prefix}depth"), cfg.depth);
    let alpha: Vec<String> = cfg.alpha.iter().map(|a| a.to_string()).collect();
    c.set(format!("{prefix}alpha"), alpha.join(","));
    c.set(format!("{prefix}head"), head_name(cfg.head));
    c.set(format!("{prefix}seed"), cfg.seed);
    c.set(format!("{prefix}stft.win_len"), model.stft().win_len);
    c.set(format!("{prefix}stft.hop"), model.stft().hop);
    c.set(format!("{prefix}stft.window"), "hann_periodic");
    c.set(format!("{prefix}fft.forward"), "unnormalized");
    c.set(format!("{prefix}fft.inverse"), "scaled_1_over_n");
}

/// Rebuilds an untrained generator from [`write_model_meta`] metadata.
pub fn read_model_meta(c: &Container, prefix: &str, path: &Path) -> Result<Generator> {
    let key = |k: &str| format!("{prefix}{k}");
    let kind = ModelKind::parse(c.meta_str(&key("kind"), path)?)?;
    let alpha = c
        .meta_str(&key("alpha"), path)?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "alpha metadata does not parse".into(),
        })?;
    let head = match c.meta_str(&key("head"), path)? {
        "spectrum" => Head::Spectrum,
        "phase" => Head::Phase,
        other => {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("unknown head {other}"),
            })
        }
    };
    let config = ModelConfig {
        kind,
        in_ch: c.meta_parse(&key("in_ch"), path)?,
        n_blocks: c.meta_parse(&key("n_blocks"), path)?,
        depth: c.meta_parse(&key("depth"), path)?,
        alpha,
        head,
        seed: c.meta_parse(&key("seed"), path)?,
    };
    let stft = StftParams::new(
        c.meta_parse(&key("stft.win_len"), path)?,
        c.meta_parse(&key("stft.hop"), path)?,
    )?;
    Generator::new(config, stft)
}

/// Saves configuration, STFT parameters, weights and running statistics
/// (as 32-bit floats).
pub fn save_model(model: &Generator, path: &Path) -> Result<()> {
    let mut c = Container::new(MODEL_KIND);
    write_model_meta(&mut c, "", model);
    c.set("dtype", "f32");
    push_store(&mut c, "", &model.store, Dtype::F32);
    c.write(path)
}

pub fn load_model(path: &Path) -> Result<Generator> {
    let c = Container::read(path)?;
    c.expect_kind(MODEL_KIND, path)?;
    let mut model = read_model_meta(&c, "", path)?;
    load_store(&c, "", &mut model.store, path)?;
    Ok(model)
}

#[cfg(test)]
mod tests;
