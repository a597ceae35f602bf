use serde::{Deserialize, Serialize};

use super::discriminator::{DiscNets, DiscOutput};
use crate::error::{Error, Result};
use crate::nn::Ctx;
use crate::spectral::{log_mel_var, MelParams, StftParams};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_mel: f64,
    /// Number of discriminators.
    pub k: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_fm: 2.0,
            lambda_mel: 45.0,
            k: 3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_fm >= 0.0 && self.lambda_mel >= 0.0) || self.k == 0 {
            return Err(Error::invalid(format!(
                "loss weights must be nonnegative with k >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn sum_all<'t>(terms: impl IntoIterator<Item = Var<'t>>) -> Result<Var<'t>> {
    let mut it = terms.into_iter();
    let first = it.next().ok_or_else(|| Error::invalid("empty loss sum"))?;
    it.try_fold(first, |acc, v| acc.add(v))
}

/// Least-squares discriminator loss summed over discriminators:
/// `mean((s_real - 1)^2) + mean(s_fake^2)`.
pub fn lsgan_d<'t>(real: &[Var<'t>], fake: &[Var<'t>]) -> Result<Var<'t>> {
    if real.len() != fake.len() {
        return Err(Error::invalid("lsgan: score list lengths differ"));
    }
    let terms = real
        .iter()
        .zip(fake)
        .map(|(r, f)| r.add_scalar(-1.0).square().mean().add(f.square().mean()))
        .collect::<Result<Vec<_>>>()?;
    sum_all(terms)
}

/// Least-squares generator loss summed over discriminators:
/// `mean((s_fake - 1)^2)`.
pub fn lsgan_g<'t>(fake: &[Var<'t>]) -> Result<Var<'t>> {
    sum_all(fake.iter().map(|f| f.add_scalar(-1.0).square().mean()))
}

/// Mean over (discriminator, layer) of the L1 distance between generated
/// and real features. Real features are detached.
pub fn feature_matching<'t>(real: &[Vec<Var<'t>>], fake: &[Vec<Var<'t>>]) -> Result<Var<'t>> {
    if real.len() != fake.len() {
        return Err(Error::invalid("feature matching: discriminator counts differ"));
    }
    let mut terms = Vec::new();
    for (r, f) in real.iter().zip(fake) {
        if r.len() != f.len() {
            return Err(Error::invalid("feature matching: layer counts differ"));
        }
        for (r, f) in r.iter().zip(f) {
            terms.push(f.l1(r.detach())?);
        }
    }
    let n = terms.len() as f64;
    Ok(sum_all(terms)?.scale(1.0 / n))
}

/// Log-mel L1 between a generated and a reference waveform (`B x L`). The
/// reference side is detached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelLoss {
    pub mel: MelParams,
    pub stft: StftParams,
}

impl MelLoss {
    pub fn new(mel: MelParams, stft: StftParams) -> Result<Self> {
        mel.validate()?;
        stft.validate()?;
        Ok(Self { mel, stft })
    }

    pub fn forward<'t>(&self, generated: Var<'t>, reference: Var<'t>) -> Result<Var<'t>> {
        if generated.shape() != reference.shape() {
            return Err(Error::ShapeMismatch {
                op: "mel_loss",
                left: generated.shape(),
                right: reference.shape(),
            });
        }
        let a = log_mel_var(generated, &self.mel, self.stft)?;
        let b = log_mel_var(reference.detach(), &self.mel, self.stft)?;
        a.l1(b)
    }
}

/// The three generator terms and their weighted total.
pub struct GeneratorLoss<'t> {
    pub adv: Var<'t>,
    pub fm: Var<'t>,
    pub mel: Var<'t>,
    pub total: Var<'t>,
}

fn split<'t>(outs: Vec<DiscOutput<'t>>) -> (Vec<Var<'t>>, Vec<Vec<Var<'t>>>) {
    outs.into_iter().map(|o| (o.score, o.features)).unzip()
}

/// `adv + lambda_fm * fm + lambda_mel * mel`. The discriminators run on
/// `ctx`, which should bind their parameters as constants.
pub fn generator_loss<'t>(
    disc: &DiscNets,
    ctx: &mut Ctx<'t, '_>,
    fake: Var<'t>,
    real: Var<'t>,
    weights: &LossWeights,
    mel: &MelLoss,
) -> Result<GeneratorLoss<'t>> {
    let real = real.detach();
    let (_, real_feats) = split(disc.forward(ctx, real)?);
    let (fake_scores, fake_feats) = split(disc.forward(ctx, fake)?);
    let adv = lsgan_g(&fake_scores)?;
    let fm = feature_matching(&real_feats, &fake_feats)?;
    let mel = mel.forward(fake, real)?;
    let total = adv.add(fm.scale(weights.lambda_fm))?.add(mel.scale(weights.lambda_mel))?;
    Ok(GeneratorLoss { adv, fm, mel, total })
}

/// Discriminator loss on detached generator output.
pub fn discriminator_loss<'t>(
    disc: &DiscNets,
    ctx: &mut Ctx<'t, '_>,
    fake: Var<'t>,
    real: Var<'t>,
) -> Result<Var<'t>> {
    let (real_scores, _) = split(disc.forward(ctx, real.detach())?);
    let (fake_scores, _) = split(disc.forward(ctx, fake.detach())?);
    lsgan_d(&real_scores, &fake_scores)
}
