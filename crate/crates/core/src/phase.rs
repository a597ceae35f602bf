//! Phase estimation from magnitude: models with a phase head are trained
//! on synthetic harmonic clips to predict `(cos, sin)` of every STFT cell
//! from the magnitude alone, then compared on reconstruction quality.
//!
//! Every clip has a fundamental on the grid `k * sr / hop`, so each harmonic
//! advances by a whole number of cycles per hop and the target phase is the
//! same in every frame. The start phases follow the Schroeder rule
//! `-pi h (h - 1) / n`, which depends on the harmonic index and the harmonic
//! count, information spread across the whole frequency axis.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{harmonic_stack, si_sdr, PhaseInit, SynthSpec, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::models::{normalize_phase, phase_head, Generator, ModelConfig, ModelKind};
use crate::spectral::{istft, stft, Spectrogram, StftParams};
use crate::tensor::{BatchNormMode, ComplexTensor, Real, Tape, Tensor};
use crate::training::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseTaskConfig {
    pub kinds: Vec<ModelKind>,
    pub in_ch: usize,
    pub n_blocks: usize,
    /// Global-branch fraction of the autoencoder kinds.
    pub alpha: Real,
    /// Depth of the vanilla U-Net.
    pub unet_depth: usize,
    pub steps: u64,
    pub batch: usize,
    pub lr: Real,
    pub seeds: Vec<u64>,
    pub clip_len: usize,
    pub eval_clips: usize,
    pub eval_seed: u64,
    /// Inclusive range of fundamental multipliers `k` (f0 = k * sr / hop).
    pub f0_mult: (usize, usize),
    /// Inclusive range of harmonic counts, clipped below Nyquist.
    pub harmonics: (usize, usize),
    pub decay: Real,
    pub stft: StftParams,
}

impl Default for PhaseTaskConfig {
    fn default() -> Self {
        Self {
            kinds: vec![ModelKind::FfcAe, ModelKind::FfcAeAblated, ModelKind::VanillaUnet],
            in_ch: 16,
            n_blocks: 3,
            alpha: 0.75,
            unet_depth: 2,
            steps: 600,
            batch: 4,
            lr: 2e-3,
            seeds: vec![0, 1, 2],
            clip_len: 2048,
            eval_clips: 16,
            eval_seed: 1_000_003,
            f0_mult: (1, 3),
            harmonics: (3, 24),
            decay: 0.5,
            stft: StftParams::new(256, 64).expect("valid stft"),
        }
    }
}

impl PhaseTaskConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.kinds.is_empty() || self.seeds.is_empty() {
            return bad("phase task needs at least one kind and one seed".into());
        }
        if self.batch == 0 || self.eval_clips == 0 || self.clip_len < self.stft.win_len {
            return bad(format!(
                "batch and eval_clips must be positive and clip_len >= {}",
                self.stft.win_len
            ));
        }
        let (k0, k1) = self.f0_mult;
        let (h0, h1) = self.harmonics;
        if k0 == 0 || k0 > k1 || h0 == 0 || h0 > h1 {
            return bad(format!("bad ranges f0_mult {:?}, harmonics {:?}", self.f0_mult, self.harmonics));
        }
        if self.f0_grid() * k1 as Real * h0 as Real >= SAMPLE_RATE as Real / 2.0 {
            return bad("lowest harmonic count does not fit below Nyquist at the top f0".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for &kind in &self.kinds {
            self.model_config(kind, 0).validate()?;
        }
        Ok(())
    }

    /// Fundamental grid spacing `sr / hop` in Hz.
    pub fn f0_grid(&self) -> Real {
        SAMPLE_RATE as Real / self.stft.hop as Real
    }

    pub fn model_config(&self, kind: ModelKind, seed: u64) -> ModelConfig {
        let cfg = match kind {
            ModelKind::FfcAe => ModelConfig::ffc_ae(self.in_ch, self.n_blocks, self.alpha),
            ModelKind::FfcAeAblated => ModelConfig::ffc_ae_ablated(self.in_ch, self.n_blocks, self.alpha),
            ModelKind::VanillaUnet => ModelConfig::vanilla_unet(self.in_ch, self.n_blocks, self.unet_depth),
            ModelKind::FfcUnet => ModelConfig::ffc_unet(self.in_ch, self.n_blocks, self.unet_depth),
        };
        cfg.with_seed(seed)
    }

    /// One clean clip with a random grid fundamental and harmonic count.
    pub fn clip(&self, rng: &mut impl Rng) -> Vec<Real> {
        let f0 = self.f0_grid() * rng.gen_range(self.f0_mult.0..=self.f0_mult.1) as Real;
        let max_h = ((SAMPLE_RATE as Real / 2.0 - 1.0) / f0).floor() as usize;
        let n = rng.gen_range(self.harmonics.0..=self.harmonics.1.min(max_h).max(self.harmonics.0));
        let spec = SynthSpec {
            f0,
            n_harmonics: n,
            dur_s: self.clip_len as Real / SAMPLE_RATE as Real,
            vibrato_depth: 0.0,
            decay: self.decay,
            phases: PhaseInit::Schroeder,
            ..SynthSpec::default()
        };
        let mut wave = harmonic_stack(&spec, rng);
        wave.resize(self.clip_len, 0.0);
        wave
    }
}

/// Magnitudes (`B x 1 x F x T`) and real/imaginary targets (`B x 2 x F x T`).
pub struct PhaseBatch {
    pub mag: Tensor,
    pub target: Tensor,
    pub waves: Vec<Vec<Real>>,
}

pub fn make_batch(cfg: &PhaseTaskConfig, waves: Vec<Vec<Real>>) -> Result<PhaseBatch> {
    let (mut mag, mut target) = (Vec::new(), Vec::new());
    let (mut f, mut t) = (0, 0);
    for w in &waves {
        let s = stft(w, cfg.stft)?;
        (f, t) = (s.n_bins(), s.n_frames());
        mag.extend_from_slice(s.magnitude().data());
        target.extend_from_slice(s.values.re.data());
        target.extend_from_slice(s.values.im.data());
    }
    let b = waves.len();
    Ok(PhaseBatch {
        mag: Tensor::new(&[b, 1, f, t], mag)?,
        target: Tensor::new(&[b, 2, f, t], target)?,
        waves,
    })
}

/// Mean absolute difference between `mag * pred` and the true spectrum,
/// so phase errors count in proportion to the cell's magnitude.
pub fn phase_loss<'t>(pred: crate::tensor::Var<'t>, mag: &Tensor, target: &Tensor) -> Result<crate::tensor::Var<'t>> {
    let mag2 = crate::tensor::ops::concat_tensors(&[mag, mag], 1);
    let tape = pred.tape();
    pred.mul_const(&mag2)?.l1(tape.constant(target.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    /// Mean SI-SDR of the reconstruction in dB.
    pub si_sdr: Real,
    /// Mean absolute waveform error.
    pub wave_l1: Real,
    /// Magnitude-weighted mean absolute wrapped phase error in radians.
    pub phase_err: Real,
}

fn wrap(a: Real) -> Real {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Reconstructs each clip from its magnitude and the model's normalized
/// phase, and averages the metrics.
pub fn evaluate(model: &mut Generator, cfg: &PhaseTaskConfig, waves: &[Vec<Real>]) -> Result<PhaseMetrics> {
    let mut acc = PhaseMetrics {
        si_sdr: 0.0,
        wave_l1: 0.0,
        phase_err: 0.0,
    };
    for w in waves {
        let s = stft(w, cfg.stft)?;
        let (f, t) = (s.n_bins(), s.n_frames());
        let mag = s.magnitude();
        let pred = model.run_spec(mag.reshape(&[1, 1, f, t])?, BatchNormMode::Eval)?;
        let unit = normalize_phase(&pred)?;
        let (cos, sin) = unit.data().split_at(f * t);
        let m = mag.data();
        let re: Vec<Real> = m.iter().zip(cos).map(|(m, c)| m * c).collect();
        let im: Vec<Real> = m.iter().zip(sin).map(|(m, s)| m * s).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..f * t {
            let truth = s.values.im.data()[i].atan2(s.values.re.data()[i]);
            num += m[i] * wrap(sin[i].atan2(cos[i]) - truth).abs();
            den += m[i];
        }
        let rec = istft(&Spectrogram {
            values: ComplexTensor::new(Tensor::new(&[f, t], re)?, Tensor::new(&[f, t], im)?)?,
            params: cfg.stft,
            orig_len: w.len(),
        })?;
        acc.si_sdr += si_sdr(&rec, w)?;
        acc.wave_l1 += rec.iter().zip(w).map(|(a, b)| (a - b).abs()).sum::<Real>() / w.len() as Real;
        acc.phase_err += if den > 0.0 { num / den } else { 0.0 };
    }
    let n = waves.len() as Real;
    Ok(PhaseMetrics {
        si_sdr: acc.si_sdr / n,
        wave_l1: acc.wave_l1 / n,
        phase_err: acc.phase_err / n,
    })
}

/// The fixed evaluation clips, shared by every kind and seed.
pub fn eval_set(cfg: &PhaseTaskConfig) -> Vec<Vec<Real>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    (0..cfg.eval_clips).map(|_| cfg.clip(&mut rng)).collect()
}

/// Trains one phase-head model. Training clips are drawn fresh every step
/// from a stream keyed by `seed`; the same seed gives every kind the same
/// data.
pub fn train_phase_model(cfg: &PhaseTaskConfig, kind: ModelKind, seed: u64) -> Result<(Generator, Real)> {
    let mut model = phase_head(cfg.model_config(kind, seed), cfg.stft)?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut last = Real::NAN;
    for step in 0..cfg.steps {
        let waves = (0..cfg.batch).map(|_| cfg.clip(&mut rng)).collect();
        let batch = make_batch(cfg, waves)?;
        let tape = Tape::new();
        let mut ctx = model.store.ctx(&tape, BatchNormMode::Train, true);
        let pred = model.net.forward_spec(&mut ctx, tape.constant(batch.mag.clone()))?;
        let binds = ctx.finish();
        let loss = phase_loss(pred, &batch.mag, &batch.target)?;
        last = loss.item();
        if !last.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step + 1,
                detail: format!("phase loss of {} = {last}", kind.name()),
            });
        }
        let grads = binds.grads(&tape.backward(loss)?, &model.store);
        opt.step(&mut model.store, &grads)?;
        if (step + 1) % 50 == 0 {
            log::info!("{} seed {seed} step {} loss {last:.4}", kind.name(), step + 1);
        }
    }
    Ok((model, last))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub kind: ModelKind,
    pub seed: u64,
    pub params: usize,
    pub final_loss: Real,
    pub metrics: PhaseMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub rows: Vec<PhaseRow>,
}

impl PhaseReport {
    pub fn row(&self, kind: ModelKind, seed: u64) -> Option<&PhaseRow> {
        self.rows.iter().find(|r| r.kind == kind && r.seed == seed)
    }

    /// Seeds on which `a` reaches at least the SI-SDR of `b`, out of the
    /// seeds where both ran.
    pub fn wins(&self, a: ModelKind, b: ModelKind) -> (usize, usize) {
        let mut wins = 0;
        let mut total = 0;
        for ra in self.rows.iter().filter(|r| r.kind == a) {
            if let Some(rb) = self.row(b, ra.seed) {
                total += 1;
                wins += usize::from(ra.metrics.si_sdr >= rb.metrics.si_sdr);
            }
        }
        (wins, total)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>5} {:>9} {:>10} {:>10} {:>10} {:>10}\n",
            "kind", "seed", "params", "loss", "si_sdr_db", "wave_l1", "phase_err"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>9} {:>10.4} {:>10.3} {:>10.5} {:>10.4}",
                r.kind.name(),
                r.seed,
                r.params,
                r.final_loss,
                r.metrics.si_sdr,
                r.metrics.wave_l1,
                r.metrics.phase_err
            );
        }
        let mut kinds: Vec<ModelKind> = Vec::new();
        for r in &self.rows {
            if !kinds.contains(&r.kind) {
                kinds.push(r.kind);
            }
        }
        for k in kinds {
            let rows: Vec<&PhaseRow> = self.rows.iter().filter(|r| r.kind == k).collect();
            let n = rows.len() as Real;
            let mean = |f: fn(&PhaseMetrics) -> Real| rows.iter().map(|r| f(&r.metrics)).sum::<Real>() / n;
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>9} {:>10} {:>10.3} {:>10.5} {:>10.4}",
                k.name(),
                "mean",
                rows[0].params,
                "",
                mean(|m| m.si_sdr),
                mean(|m| m.wave_l1),
                mean(|m| m.phase_err)
            );
        }
        out
    }
}

/// Trains and evaluates every (kind, seed) pair under the same budget.
pub fn run_phase_task(cfg: &PhaseTaskConfig) -> Result<PhaseReport> {
    cfg.validate()?;
    let eval = eval_set(cfg);
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &kind in &cfg.kinds {
            let (mut model, final_loss) = train_phase_model(cfg, kind, seed)?;
            let metrics = evaluate(&mut model, cfg, &eval)?;
            log::info!("{} seed {seed}: si-sdr {:.3} dB", kind.name(), metrics.si_sdr);
            rows.push(PhaseRow {
                kind,
                seed,
                params: model.count_params(),
                final_loss,
                metrics,
            });
        }
    }
    Ok(PhaseReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PhaseTaskConfig {
        PhaseTaskConfig {
            kinds: vec![ModelKind::FfcAe, ModelKind::FfcAeAblated],
            in_ch: 4,
            n_blocks: 1,
            steps: 2,
            batch: 2,
            seeds: vec![0],
            clip_len: 1024,
            eval_clips: 2,
            f0_mult: (1, 3),
            harmonics: (2, 4),
            stft: StftParams::new(64, 16).unwrap(),
            ..PhaseTaskConfig::default()
        }
    }

    #[test]
    fn grid_fundamentals_give_frame_invariant_phase() {
        let cfg = PhaseTaskConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = cfg.clip(&mut rng);
        let s = stft(&w, cfg.stft).unwrap();
        let (f, t) = (s.n_bins(), s.n_frames());
        let mag = s.magnitude();
        let peak = mag.data().iter().cloned().fold(0.0, Real::max);
        // interior frames, strong cells: identical phase frame to frame
        for bin in 0..f {
            for fr in 4..t - 5 {
                let i = bin * t + fr;
                if mag.data()[i] > 0.1 * peak {
                    let a = s.values.im.data()[i].atan2(s.values.re.data()[i]);
                    let b = s.values.im.data()[i + 1].atan2(s.values.re.data()[i + 1]);
                    assert!(wrap(a - b).abs() < 1e-6, "bin {bin} frame {fr}");
                }
            }
        }
    }

    #[test]
    fn perfect_phase_scores_high_and_loss_is_zero() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = make_batch(&cfg, vec![cfg.clip(&mut rng), cfg.clip(&mut rng)]).unwrap();
        let s = batch.target.shape().to_vec();
        let cell = s[2] * s[3];
        // true unit phase from the target
        let mut unit = batch.target.clone();
        for b in 0..s[0] {
            for i in 0..cell {
                let m = batch.mag.data()[b * cell + i];
                let base = b * 2 * cell;
                let (re, im) = (unit.data()[base + i], unit.data()[base + cell + i]);
                let (c, sn) = if m > 0.0 { (re / m, im / m) } else { (1.0, 0.0) };
                unit.data_mut()[base + i] = c;
                unit.data_mut()[base + cell + i] = sn;
            }
        }
        let tape = Tape::new();
        let loss = phase_loss(tape.constant(unit), &batch.mag, &batch.target).unwrap();
        assert!(loss.item() < 1e-12);
    }

    #[test]
    fn run_is_deterministic_and_tabulated() {
        let cfg = tiny();
        let a = run_phase_task(&cfg).unwrap();
        let b = run_phase_task(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.wins(ModelKind::FfcAe, ModelKind::FfcAeAblated).1, 1);
        let table = a.table();
        assert!(table.contains("ffc_ae_ablated") && table.contains("mean"));
        for r in &a.rows {
            assert!(r.metrics.si_sdr.is_finite() && r.metrics.phase_err <= PI);
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = PhaseTaskConfig {
            harmonics: (5, 2),
            ..tiny()
        };
        assert!(cfg.validate().is_err());
        let cfg = PhaseTaskConfig {
            kinds: vec![],
            ..tiny()
        };
        assert!(cfg.validate().is_err());
    }
}
