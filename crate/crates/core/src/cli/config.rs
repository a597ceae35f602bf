//! Run configuration: a TOML file with one section per module. Every key
//! is optional and defaults to the published setup; unknown keys and type
//! errors are collected and reported together.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::audio::{NoiseKind, PhaseInit, SynthSpec};
use crate::error::{Error, Result};
use crate::models::{alpha_schedule, Head, ModelConfig, ModelKind};
use crate::phase::PhaseTaskConfig;
use crate::spectral::{MelParams, StftParams};
use crate::training::{AdamConfig, LossWeights, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub in_ch: usize,
    pub n_blocks: usize,
    /// U-Net depth K.
    pub depth: usize,
    /// Empty selects the default: 0.75 for the autoencoders, the
    /// depth-decreasing schedule for the FFC U-Net, zeros for the vanilla one.
    pub alpha: Vec<f64>,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::FfcAe,
            in_ch: 32,
            n_blocks: 9,
            depth: 4,
            alpha: Vec::new(),
            seed: 0,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self) -> ModelConfig {
        let alpha = if !self.alpha.is_empty() {
            self.alpha.clone()
        } else {
            match self.kind {
                ModelKind::FfcAe | ModelKind::FfcAeAblated => vec![0.75],
                ModelKind::FfcUnet => alpha_schedule(self.depth),
                ModelKind::VanillaUnet => vec![0.0; self.depth],
            }
        };
        ModelConfig {
            kind: self.kind,
            in_ch: self.in_ch,
            n_blocks: self.n_blocks,
            depth: if self.kind.is_unet() { self.depth } else { 0 },
            alpha,
            head: Head::Spectrum,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: u64,
    pub batch: usize,
    /// Training crop length in samples.
    pub segment_len: usize,
    pub seed: u64,
    /// Write a resumable checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            segment_len: 16384,
            seed: 0,
            checkpoint_every: 500,
            log_every: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Manifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    /// Two-column manifest (noisy, clean), used when `source = "manifest"`.
    pub manifest: String,
    /// Number of synthetic training pairs.
    pub synth_pairs: usize,
    /// Pairs held out for the final summary (synthetic: extra pairs;
    /// manifest: the last lines).
    pub holdout: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            manifest: String::new(),
            synth_pairs: 1,
            holdout: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseName {
    White,
    BandPass,
}

/// Flat form of [`SynthSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub f0: f64,
    pub n_harmonics: usize,
    pub snr_db: f64,
    pub dur_s: f64,
    pub vibrato_depth: f64,
    pub vibrato_hz: f64,
    pub decay: f64,
    pub peak: f64,
    pub phases: PhaseInit,
    pub noise: NoiseName,
    pub noise_center_hz: f64,
    pub noise_q: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            f0: s.f0,
            n_harmonics: s.n_harmonics,
            snr_db: s.snr_db,
            dur_s: 16384.0 / 16000.0,
            vibrato_depth: s.vibrato_depth,
            vibrato_hz: s.vibrato_hz,
            decay: s.decay,
            peak: s.peak,
            phases: s.phases,
            noise: NoiseName::White,
            noise_center_hz: 1000.0,
            noise_q: 2.0,
            seed: 1,
        }
    }
}

impl SynthSection {
    pub fn to_spec(&self) -> SynthSpec {
        SynthSpec {
            f0: self.f0,
            n_harmonics: self.n_harmonics,
            snr_db: self.snr_db,
            dur_s: self.dur_s,
            vibrato_depth: self.vibrato_depth,
            vibrato_hz: self.vibrato_hz,
            decay: self.decay,
            peak: self.peak,
            phases: self.phases,
            noise: match self.noise {
                NoiseName::White => NoiseKind::White,
                NoiseName::BandPass => NoiseKind::BandPass {
                    center_hz: self.noise_center_hz,
                    q: self.noise_q,
                },
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Parent of the per-run directories and of `results.log`.
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "runs".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub stft: StftParams,
    pub mel: MelParams,
    pub loss: LossWeights,
    pub optim: AdamConfig,
    pub train: TrainSection,
    pub data: DataSection,
    pub synth: SynthSection,
    pub output: OutputSection,
    pub phase: PhaseTaskConfig,
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Checks `user` against the shape of `schema` (the serialized defaults),
/// appending one message per unknown key or mismatched type.
fn check_keys(schema: &toml::Table, user: &toml::Table, path: &str, errors: &mut Vec<String>) {
    for (key, value) in user {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        let Some(expected) = schema.get(key) else {
            let known: Vec<&str> = schema.keys().map(String::as_str).collect();
            errors.push(format!("{full}: unknown key (expected one of: {})", known.join(", ")));
            continue;
        };
        match (expected, value) {
            (Value::Table(s), Value::Table(u)) => check_keys(s, u, &full, errors),
            (Value::Float(_), Value::Integer(_)) => {}
            (Value::Array(_), Value::Array(_)) => {}
            (e, v) if std::mem::discriminant(e) == std::mem::discriminant(v) => {}
            (e, v) => errors.push(format!("{full}: expected {}, found {}", type_name(e), type_name(v))),
        }
    }
}

/// Overlays `user` onto `base` key by key, widening integers where the
/// default is a float.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u),
            (Some(Value::Float(_)), Value::Integer(i)) => {
                base.insert(key, Value::Float(i as f64));
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let Value::Table(mut base) = Value::try_from(RunConfig::default()).map_err(|e| Error::Config(vec![e.to_string()]))?
        else {
            unreachable!("a struct serializes to a table");
        };
        let mut errors = Vec::new();
        check_keys(&base, &user, "", &mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        merge(&mut base, user);
        let cfg: RunConfig = Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(list) => Error::Config(list.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            e => e,
        })
    }

    pub fn emit(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Semantic checks across every section, all reported together.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut push = |section: &str, r: Result<()>| {
            if let Err(e) = r {
                errors.push(format!("{section}: {e}"));
            }
        };
        push("model", self.model.to_config().validate());
        push("stft", self.stft.validate());
        push("mel", self.mel.validate());
        push("loss", self.loss.validate());
        push("synth", self.synth.to_spec().validate());
        push("phase", self.phase.validate());
        if !(self.optim.lr > 0.0 && (0.0..1.0).contains(&self.optim.beta1) && (0.0..1.0).contains(&self.optim.beta2)) {
            errors.push(format!("optim: need lr > 0 and betas in [0, 1), got {:?}", self.optim));
        }
        if self.train.batch == 0 || self.train.segment_len < self.stft.win_len {
            errors.push(format!(
                "train: batch must be positive and segment_len >= stft.win_len ({})",
                self.stft.win_len
            ));
        }
        if self.data.source == DataSource::Manifest && self.data.manifest.is_empty() {
            errors.push("data: source = \"manifest\" needs data.manifest".into());
        }
        if self.data.source == DataSource::Synthetic && self.data.synth_pairs == 0 {
            errors.push("data: synth_pairs must be positive".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: self.optim,
            weights: self.loss,
            mel: self.mel,
            seed: self.train.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_setup() {
        let c = RunConfig::default();
        assert_eq!(c.model.to_config(), ModelConfig::v0());
        assert_eq!((c.stft.win_len, c.stft.hop), (1024, 256));
        assert_eq!((c.loss.lambda_fm, c.loss.lambda_mel, c.loss.k), (2.0, 45.0, 3));
        assert_eq!(c.optim.lr, 2e-4);
        assert_eq!((c.train.steps, c.train.batch, c.train.segment_len), (2000, 8, 16384));
        assert_eq!(RunConfig::parse("").unwrap(), c);
    }

    #[test]
    fn round_trips_through_text() {
        let c = RunConfig::default();
        let text = c.emit();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.emit(), text);

        let mut c = RunConfig::default();
        c.model.kind = ModelKind::FfcUnet;
        c.model.alpha = vec![0.5, 0.25];
        c.model.depth = 2;
        c.synth.noise = NoiseName::BandPass;
        c.data.source = DataSource::Manifest;
        c.data.manifest = "pairs.txt".into();
        assert_eq!(RunConfig::parse(&c.emit()).unwrap(), c);
    }

    #[test]
    fn overrides_apply_and_integers_widen() {
        let c = RunConfig::parse("[optim]\nlr = 1\n[model]\nkind = \"ffc_unet\"\nin_ch = 8\n").unwrap();
        assert_eq!(c.optim.lr, 1.0);
        assert_eq!(c.model.to_config().alpha, alpha_schedule(4));
        assert_eq!(c.model.in_ch, 8);
        assert_eq!(c.train, TrainSection::default());
    }

    #[test]
    fn every_problem_is_reported_at_once() {
        let text = "bogus = 1\n[model]\nin_ch = \"wide\"\ncolour = 3\n[train]\nsteps = 1.5\n[stft]\nhop = 2\nwindow = \"hann\"\n";
        let Err(Error::Config(errs)) = RunConfig::parse(text) else {
            panic!("expected config errors");
        };
        let joined = errs.join("\n");
        for needle in ["bogus", "model.in_ch", "model.colour", "train.steps", "stft.window"] {
            assert!(joined.contains(needle), "{needle} missing from {joined}");
        }
        assert_eq!(errs.len(), 5);
    }

    #[test]
    fn semantic_errors_are_collected() {
        let text = "[stft]\nhop = 2000\n[loss]\nk = 0\n[data]\nsource = \"manifest\"\n";
        let Err(Error::Config(errs)) = RunConfig::parse(text) else {
            panic!("expected config errors");
        };
        let joined = errs.join("\n");
        assert!(joined.contains("stft") && joined.contains("loss") && joined.contains("data.manifest"));
    }

    #[test]
    fn syntax_errors_surface() {
        assert!(matches!(RunConfig::parse("[model\n"), Err(Error::Config(_))));
    }
}
