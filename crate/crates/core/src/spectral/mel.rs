use serde::{Deserialize, Serialize};

use super::stft::{stft, stft_var, StftParams};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Log-mel feature parameters (HTK mel scale, triangular filters with unit
/// peak).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelParams {
    pub n_mels: usize,
    pub f_min: Real,
    pub f_max: Real,
    pub sample_rate: u32,
    pub log_floor: Real,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            sample_rate: 16_000,
            log_floor: 1e-5,
        }
    }
}

fn hz_to_mel(f: Real) -> Real {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: Real) -> Real {
    700.0 * (10.0_f64.powf(m / 2595.0) - 1.0)
}

impl MelParams {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as Real / 2.0;
        if self.n_mels == 0 {
            return Err(Error::invalid("n_mels must be positive"));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(Error::invalid(format!(
                "mel range {}..{} Hz must lie within 0..{nyquist} Hz",
                self.f_min, self.f_max
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::invalid("log floor must be positive"));
        }
        Ok(())
    }
}

/// `n_mels x (n_fft / 2 + 1)` triangular filterbank.
pub fn mel_filterbank(mp: &MelParams, n_fft: usize) -> Result<Tensor> {
    mp.validate()?;
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(mp.f_min), hz_to_mel(mp.f_max));
    let edges: Vec<Real> = (0..mp.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as Real / (mp.n_mels + 1) as Real))
        .collect();
    let bin_hz = mp.sample_rate as Real / n_fft as Real;
    Ok(Tensor::from_fn(&[mp.n_mels, n_bins], |idx| {
        let (m, k) = (idx / n_bins, idx % n_bins);
        let f = k as Real * bin_hz;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let rise = (f - l) / (c - l);
        let fall = (r - f) / (r - c);
        rise.min(fall).max(0.0)
    }))
}

/// Log-mel spectrogram of one signal, `n_mels x T`.
pub fn log_mel(wave: &[Real], mp: &MelParams, sp: StftParams) -> Result<Tensor> {
    let fb = mel_filterbank(mp, sp.win_len)?;
    let mag = stft(wave, sp)?.magnitude();
    let (n_bins, frames) = (mag.shape()[0], mag.shape()[1]);
    let mut out = vec![0.0; mp.n_mels * frames];
    for m in 0..mp.n_mels {
        let row = &fb.data()[m * n_bins..][..n_bins];
        for (k, &w) in row.iter().enumerate().filter(|(_, w)| **w != 0.0) {
            let mk = &mag.data()[k * frames..][..frames];
            for (o, v) in out[m * frames..][..frames].iter_mut().zip(mk) {
                *o += w * v;
            }
        }
    }
    for v in &mut out {
        *v = v.max(mp.log_floor).ln();
    }
    Tensor::new(&[mp.n_mels, frames], out)
}

/// Differentiable log-mel of a batch `B x L`, producing `B x n_mels x T`.
pub fn log_mel_var<'t>(wave: Var<'t>, mp: &MelParams, sp: StftParams) -> Result<Var<'t>> {
    let fb = mel_filterbank(mp, sp.win_len)?;
    let spec = stft_var(wave, sp)?;
    let mut parts = spec.split(&[1, 1], 1)?.into_iter();
    let (re, im) = (parts.next().unwrap(), parts.next().unwrap());
    let mag = Var::magnitude(re, im)?;
    let shape = mag.shape();
    let mag = mag.reshape(&[shape[0], shape[2], shape[3]])?;
    Ok(mag.linear_along(&fb, 1)?.log_floor(mp.log_floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 100.0, 700.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.1);
    }

    #[test]
    fn filterbank_matches_direct_construction() {
        // Independent construction: peak bins and linear interpolation in Hz.
        let mp = MelParams::default();
        let fb = mel_filterbank(&mp, 1024).unwrap();
        assert_eq!(fb.shape(), &[80, 513]);
        let step = hz_to_mel(8000.0) / 81.0;
        for m in [0usize, 10, 40, 79] {
            let l = 700.0 * (10f64.powf(m as f64 * step / 2595.0) - 1.0);
            let c = 700.0 * (10f64.powf((m + 1) as f64 * step / 2595.0) - 1.0);
            let r = 700.0 * (10f64.powf((m + 2) as f64 * step / 2595.0) - 1.0);
            for k in 0..513 {
                let f = k as f64 * 15.625;
                let want = if f <= l || f >= r {
                    0.0
                } else if f <= c {
                    (f - l) / (c - l)
                } else {
                    (r - f) / (r - c)
                };
                assert!((fb.get(&[m, k]) - want).abs() < 1e-9, "m {m} k {k}");
            }
        }
        assert!(fb.data().iter().all(|&w| (0.0..=1.0).contains(&w)));
        // every filter covers at least one bin above 0
        for m in 0..80 {
            assert!(fb.data()[m * 513..][..513].iter().any(|&w| w > 0.0));
        }
    }

    #[test]
    fn zero_signal_gives_log_floor() {
        let mp = MelParams::default();
        let lm = log_mel(&vec![0.0; 2000], &mp, StftParams::default()).unwrap();
        assert_eq!(lm.shape(), &[80, 9]);
        assert!(lm.data().iter().all(|&v| v == (1e-5_f64).ln()));
    }

    #[test]
    fn tape_version_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[2, 3000], &mut rng);
        let mp = MelParams::default();
        let sp = StftParams::default();
        let tape = Tape::new();
        let v = log_mel_var(tape.constant(x.clone()), &mp, sp).unwrap().value();
        let direct = log_mel(&x.data()[3000..], &mp, sp).unwrap();
        let second = &v.data()[80 * 13..];
        for (a, b) in second.iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_mel_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mp = MelParams {
            n_mels: 6,
            ..MelParams::default()
        };
        let sp = StftParams::new(16, 4).unwrap();
        let x = Tensor::randn(&[1, 30], &mut rng);
        let err = grad_check(|_, x| Ok(log_mel_var(x, &mp, sp)?.mean()), &x, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let bad = MelParams {
            f_max: 9000.0,
            ..MelParams::default()
        };
        assert!(mel_filterbank(&bad, 1024).is_err());
    }
}
