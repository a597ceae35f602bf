use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{global_norm, Adam, AdamConfig};
use super::discriminator::Discriminators;
use super::losses::{discriminator_loss, generator_loss, LossWeights, MelLoss};
use crate::checkpoint::{load_store, push_store, Container, Dtype};
use crate::error::{Error, Result};
use crate::models::{read_model_meta, write_model_meta, Generator, ModelConfig};
use crate::spectral::{MelParams, StftParams};
use crate::tensor::{BatchNormMode, Real, Tape, Tensor};

/// Optimization settings carried inside a [`TrainState`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub mel: MelParams,
    /// Seeds the discriminators (the generator uses its model seed) and
    /// the data RNG.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            mel: MelParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_d: Real,
    pub loss_g: Real,
    pub adv: Real,
    pub fm: Real,
    pub mel: Real,
    pub grad_norm_g: Real,
    pub grad_norm_d: Real,
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub gen: Generator,
    pub disc: Discriminators,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Completed steps.
    pub step: u64,
    /// Data-order RNG, advanced by the caller's batch sampling.
    pub rng: ChaCha8Rng,
    /// Shuffle seed of the current data epoch and the next batch index in it.
    pub data_epoch_seed: u64,
    pub data_pos: u64,
}

impl TrainState {
    pub fn new(model: ModelConfig, stft: StftParams, config: TrainConfig) -> Result<Self> {
        config.weights.validate()?;
        let gen = Generator::new(model, stft)?;
        let disc = Discriminators::new(config.weights.k, config.seed ^ 0x5eed_d15c)?;
        Ok(Self {
            opt_g: Adam::new(config.adam, &gen.store),
            opt_d: Adam::new(config.adam, &disc.store),
            gen,
            disc,
            config,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            data_epoch_seed: 0,
            data_pos: u64::MAX,
        })
    }

    pub fn mel_loss(&self) -> Result<MelLoss> {
        MelLoss::new(self.config.mel, self.gen.stft())
    }
}

fn check_finite(step: u64, what: &str, v: Real) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            step,
            detail: format!("{what} = {v}"),
        })
    }
}

/// One discriminator update (all discriminators jointly, on the detached
/// generator output) followed by one generator update against the updated
/// discriminators. `noisy` and `clean` are `B x L` waveforms.
pub fn train_step(state: &mut TrainState, noisy: &Tensor, clean: &Tensor) -> Result<StepMetrics> {
    if noisy.shape() != clean.shape() || noisy.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "train_step",
            left: noisy.shape().to_vec(),
            right: clean.shape().to_vec(),
        });
    }
    let step = state.step + 1;
    let mel = state.mel_loss()?;
    let weights = state.config.weights;

    let tape = Tape::new();
    let mut gctx = state.gen.store.ctx(&tape, BatchNormMode::Train, true);
    let fake = state.gen.net.forward_wave(&mut gctx, tape.constant(noisy.clone()))?;
    let gbind = gctx.finish();
    let real = tape.constant(clean.clone());

    let (loss_d, grad_norm_d) = {
        let dtape = Tape::new();
        let mut dctx = state.disc.store.ctx(&dtape, BatchNormMode::Train, true);
        let fake_d = dtape.constant((*fake.value()).clone());
        let loss = discriminator_loss(&state.disc.net, &mut dctx, fake_d, dtape.constant(clean.clone()))?;
        let dbind = dctx.finish();
        check_finite(step, "discriminator loss", loss.item())?;
        let grads = dbind.grads(&dtape.backward(loss)?, &state.disc.store);
        state.opt_d.step(&mut state.disc.store, &grads)?;
        (loss.item(), global_norm(&grads))
    };

    let mut dctx = state.disc.store.ctx(&tape, BatchNormMode::Train, false);
    let terms = generator_loss(&state.disc.net, &mut dctx, fake, real, &weights, &mel)?;
    check_finite(step, "generator loss", terms.total.item())?;
    let grads = gbind.grads(&tape.backward(terms.total)?, &state.gen.store);
    state.opt_g.step(&mut state.gen.store, &grads)?;
    state.step = step;
    Ok(StepMetrics {
        step,
        loss_d,
        loss_g: terms.total.item(),
        adv: terms.adv.item(),
        fm: terms.fm.item(),
        mel: terms.mel.item(),
        grad_norm_g: global_norm(&grads),
        grad_norm_d,
    })
}

const TRAIN_KIND: &str = "train_state";

fn push_moments(c: &mut Container, prefix: &str, opt: &Adam, names: &[String]) {
    for ((name, m), v) in names.iter().zip(&opt.m).zip(&opt.v) {
        c.push(format!("{prefix}m/{name}"), Dtype::F64, m.clone());
        c.push(format!("{prefix}v/{name}"), Dtype::F64, v.clone());
    }
}

fn load_moments(c: &Container, prefix: &str, opt: &mut Adam, names: &[String], path: &Path) -> Result<()> {
    for ((name, m), v) in names.iter().zip(&mut opt.m).zip(&mut opt.v) {
        for (kind, slot) in [("m", &mut *m), ("v", &mut *v)] {
            let key = format!("{prefix}{kind}/{name}");
            let t = c.tensor(&key).ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("missing tensor {key}"),
            })?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("tensor {key} has shape {:?}, expected {:?}", t.shape(), slot.shape()),
                });
            }
            *slot = t.clone();
        }
    }
    Ok(())
}

fn names(store: &crate::nn::ParamStore) -> Vec<String> {
    store.params().iter().map(|p| p.name.clone()).collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

/// Writes the full training state in 64-bit precision, including Adam
/// moments and the data RNG position.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut c = Container::new(TRAIN_KIND);
    write_model_meta(&mut c, "gen.", &state.gen);
    c.set("dtype", "f64");
    c.set("step", state.step);
    c.set(
        "train_config",
        serde_json::to_string(&state.config).map_err(|e| Error::invalid(e.to_string()))?,
    );
    c.set("opt_g.t", state.opt_g.t);
    c.set("opt_d.t", state.opt_d.t);
    c.set("rng.seed", hex(&state.rng.get_seed()));
    c.set("rng.stream", state.rng.get_stream());
    c.set("rng.word_pos", state.rng.get_word_pos());
    c.set("data.epoch_seed", state.data_epoch_seed);
    c.set("data.pos", state.data_pos);
    push_store(&mut c, "gen.", &state.gen.store, Dtype::F64);
    push_store(&mut c, "disc.", &state.disc.store, Dtype::F64);
    push_moments(&mut c, "opt_g.", &state.opt_g, &names(&state.gen.store));
    push_moments(&mut c, "opt_d.", &state.opt_d, &names(&state.disc.store));
    c.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let c = Container::read(path)?;
    c.expect_kind(TRAIN_KIND, path)?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let config: TrainConfig = serde_json::from_str(c.meta_str("train_config", path)?)
        .map_err(|e| bad(format!("train_config: {e}")))?;
    let model = read_model_meta(&c, "gen.", path)?;
    let mut state = TrainState::new(model.net.config, model.net.stft, config)?;
    load_store(&c, "gen.", &mut state.gen.store, path)?;
    load_store(&c, "disc.", &mut state.disc.store, path)?;
    let gnames = names(&state.gen.store);
    let dnames = names(&state.disc.store);
    load_moments(&c, "opt_g.", &mut state.opt_g, &gnames, path)?;
    load_moments(&c, "opt_d.", &mut state.opt_d, &dnames, path)?;
    state.opt_g.t = c.meta_parse("opt_g.t", path)?;
    state.opt_d.t = c.meta_parse("opt_d.t", path)?;
    state.step = c.meta_parse("step", path)?;
    let seed = unhex(c.meta_str("rng.seed", path)?).ok_or_else(|| bad("rng.seed is not 32 hex bytes".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(c.meta_parse("rng.stream", path)?);
    rng.set_word_pos(c.meta_parse("rng.word_pos", path)?);
    state.rng = rng;
    state.data_epoch_seed = c.meta_parse("data.epoch_seed", path)?;
    state.data_pos = c.meta_parse("data.pos", path)?;
    Ok(state)
}
