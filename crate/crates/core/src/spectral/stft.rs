use std::f64::consts::PI;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::fft::{irfft_lines, irfft_lines_adjoint, rfft_bins, rfft_lines, rfft_lines_adjoint};
use crate::tensor::ops::{concat_tensors, split_tensor};
use crate::tensor::{check_rank, ComplexTensor, Real, Tensor, Var};

/// STFT analysis parameters. The window is a periodic Hann of `win_len`
/// samples, the FFT length equals `win_len`, and the signal is
/// reflect-padded by `win_len / 2` on both sides so frame `t` is centred on
/// sample `t * hop`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftParams {
    pub win_len: usize,
    pub hop: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            win_len: 1024,
            hop: 256,
        }
    }
}

impl StftParams {
    pub fn new(win_len: usize, hop: usize) -> Result<Self> {
        let p = Self { win_len, hop };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_len < 2 || self.win_len % 2 != 0 {
            return Err(Error::invalid(format!("window length {} must be even", self.win_len)));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return Err(Error::invalid(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.win_len
            )));
        }
        if !self.satisfies_cola() {
            return Err(Error::invalid(format!(
                "Hann {}/{} does not overlap-add to a constant",
                self.win_len, self.hop
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        rfft_bins(self.win_len)
    }

    /// `1 + ceil(len / hop)`.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len.div_ceil(self.hop)
    }

    fn pad(&self) -> usize {
        self.win_len / 2
    }

    pub fn window(&self) -> Vec<Real> {
        let n = self.win_len as Real;
        (0..self.win_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as Real / n).cos())
            .collect()
    }

    /// Whether the squared window overlap-adds to a constant at this hop,
    /// which makes the synthesis normalization uniform.
    pub fn satisfies_cola(&self) -> bool {
        if self.hop > self.win_len || self.hop == 0 {
            return false;
        }
        let w = self.window();
        let sums: Vec<Real> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|v| v * v).sum())
            .collect();
        sums.iter().all(|s| (s - sums[0]).abs() < 1e-9 * sums[0].max(1.0))
    }

    /// Window-square sum at each position of the padded signal.
    fn synthesis_norm(&self, frames: usize) -> Vec<Real> {
        let w = self.window();
        let mut den = vec![0.0; (frames - 1) * self.hop + self.win_len];
        for t in 0..frames {
            for (n, wn) in w.iter().enumerate() {
                den[t * self.hop + n] += wn * wn;
            }
        }
        den
    }
}

/// Index into a signal of length `len` under reflect padding (no edge repeat),
/// mirrored as often as needed.
fn reflect(j: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = j.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Shared analysis/synthesis kernels over a batch laid out `B x L`.
struct Framer {
    p: StftParams,
    window: Vec<Real>,
    batch: usize,
    len: usize,
    frames: usize,
}

impl Framer {
    fn new(p: StftParams, batch: usize, len: usize) -> Self {
        Self {
            window: p.window(),
            frames: p.n_frames(len),
            p,
            batch,
            len,
        }
    }

    fn source(&self, t: usize, n: usize) -> usize {
        reflect((t * self.p.hop + n) as isize - self.p.pad() as isize, self.len)
    }

    /// `x` (`B x L`) -> (re, im), each `B x F x T`.
    fn analyze(&self, x: &[Real]) -> (Vec<Real>, Vec<Real>) {
        let (nw, nt) = (self.p.win_len, self.frames);
        let mut frames = vec![0.0; self.batch * nw * nt];
        for b in 0..self.batch {
            let xb = &x[b * self.len..][..self.len];
            for n in 0..nw {
                for t in 0..nt {
                    frames[(b * nw + n) * nt + t] = self.window[n] * xb[self.source(t, n)];
                }
            }
        }
        rfft_lines(&frames, self.batch, nw, nt)
    }

    fn analyze_adjoint(&self, g_re: &[Real], g_im: &[Real]) -> Vec<Real> {
        let (nw, nt) = (self.p.win_len, self.frames);
        let gf = rfft_lines_adjoint(g_re, g_im, self.batch, nw, nt);
        let mut dx = vec![0.0; self.batch * self.len];
        for b in 0..self.batch {
            for n in 0..nw {
                for t in 0..nt {
                    dx[b * self.len + self.source(t, n)] += self.window[n] * gf[(b * nw + n) * nt + t];
                }
            }
        }
        dx
    }

    /// Padded-signal position of original sample `i` is `i + pad`; returns
    /// the frame-local index of that position in frame `t`, if covered.
    fn local(&self, t: usize, i: usize) -> Option<usize> {
        let j = i + self.p.pad();
        let start = t * self.p.hop;
        (j >= start && j < start + self.p.win_len).then(|| j - start)
    }

    /// (re, im) `B x F x T` -> `B x L` by windowed overlap-add.
    fn synthesize(&self, re: &[Real], im: &[Real], den: &[Real]) -> Vec<Real> {
        let (nw, nt) = (self.p.win_len, self.frames);
        let frames = irfft_lines(re, im, self.batch, nw, nt);
        let mut y = vec![0.0; self.batch * self.len];
        for b in 0..self.batch {
            for t in 0..nt {
                for n in 0..nw {
                    let j = t * self.p.hop + n;
                    if j < self.p.pad() || j - self.p.pad() >= self.len {
                        continue;
                    }
                    y[b * self.len + j - self.p.pad()] += self.window[n] * frames[(b * nw + n) * nt + t];
                }
            }
            for i in 0..self.len {
                y[b * self.len + i] /= den[i + self.p.pad()];
            }
        }
        y
    }

    fn synthesize_adjoint(&self, g: &[Real], den: &[Real]) -> (Vec<Real>, Vec<Real>) {
        let (nw, nt) = (self.p.win_len, self.frames);
        let mut h = vec![0.0; self.batch * nw * nt];
        for b in 0..self.batch {
            for i in 0..self.len {
                let gi = g[b * self.len + i] / den[i + self.p.pad()];
                let first = (i + self.p.pad()).saturating_sub(nw - 1) / self.p.hop;
                for t in first..nt {
                    match self.local(t, i) {
                        Some(n) => h[(b * nw + n) * nt + t] += self.window[n] * gi,
                        None if t * self.p.hop > i + self.p.pad() => break,
                        None => {}
                    }
                }
            }
        }
        irfft_lines_adjoint(&h, self.batch, nw, nt)
    }
}

/// Complex STFT of one signal: `values` is `F x T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub values: ComplexTensor,
    pub params: StftParams,
    pub orig_len: usize,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn zeros(params: StftParams, orig_len: usize) -> Self {
        Self {
            values: ComplexTensor::zeros(&[params.n_bins(), params.n_frames(orig_len)]),
            params,
            orig_len,
        }
    }

    pub fn magnitude(&self) -> Tensor {
        self.values.magnitude()
    }

    /// `1 x 2 x F x T` with the real part in channel 0.
    pub fn to_packed(&self) -> Tensor {
        let (f, t) = (self.n_bins(), self.n_frames());
        concat_tensors(&[&self.values.re, &self.values.im], 0)
            .reshape(&[1, 2, f, t])
            .expect("packed shape")
    }

    pub fn from_packed(packed: &Tensor, params: StftParams, orig_len: usize) -> Result<Self> {
        let shape = packed.shape();
        if shape.len() != 4 || shape[0] != 1 || shape[1] != 2 {
            return Err(Error::invalid(format!("expected 1 x 2 x F x T, got {shape:?}")));
        }
        let parts = split_tensor(&packed.reshape(&shape[1..])?, &[1, 1], 0);
        let re = parts[0].reshape(&shape[2..])?;
        let im = parts[1].reshape(&shape[2..])?;
        let s = Self {
            values: ComplexTensor::new(re, im)?,
            params,
            orig_len,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let expected = [self.params.n_bins(), self.params.n_frames(self.orig_len)];
        for (axis, (&got, want)) in self.values.shape().iter().zip(expected).enumerate() {
            if got != want {
                return Err(Error::AxisMismatch {
                    op: "istft",
                    axis,
                    expected: want,
                    got,
                });
            }
        }
        Ok(())
    }
}

pub fn stft(wave: &[Real], p: StftParams) -> Result<Spectrogram> {
    p.validate()?;
    if wave.is_empty() {
        return Err(Error::invalid("stft of an empty signal"));
    }
    let framer = Framer::new(p, 1, wave.len());
    let (re, im) = framer.analyze(wave);
    let shape = vec![p.n_bins(), framer.frames];
    Ok(Spectrogram {
        values: ComplexTensor {
            re: Tensor::from_parts(shape.clone(), re),
            im: Tensor::from_parts(shape, im),
        },
        params: p,
        orig_len: wave.len(),
    })
}

pub fn istft(s: &Spectrogram) -> Result<Vec<Real>> {
    s.params.validate()?;
    s.check()?;
    let framer = Framer::new(s.params, 1, s.orig_len);
    let den = s.params.synthesis_norm(framer.frames);
    Ok(framer.synthesize(s.values.re.data(), s.values.im.data(), &den))
}

/// Differentiable STFT of a batch of signals `B x L`, returning
/// `B x 2 x F x T` (real part in channel 0, imaginary in channel 1).
pub fn stft_var<'t>(wave: Var<'t>, p: StftParams) -> Result<Var<'t>> {
    p.validate()?;
    let x = wave.value();
    check_rank("stft", x.shape(), 2)?;
    let (batch, len) = (x.shape()[0], x.shape()[1]);
    let framer = Rc::new(Framer::new(p, batch, len));
    let (re, im) = framer.analyze(x.data());
    let (f, t) = (p.n_bins(), framer.frames);
    let value = pack(batch, f * t, &re, &im, vec![batch, 2, f, t]);
    Ok(wave.tape().record(
        value,
        &[wave],
        Box::new(move |g, _| {
            let (g_re, g_im) = unpack(batch, f * t, g.data());
            let dx = framer.analyze_adjoint(&g_re, &g_im);
            vec![Some(Tensor::from_parts(vec![batch, len], dx))]
        }),
    ))
}

/// Differentiable inverse of [`stft_var`], producing `B x len` samples.
pub fn istft_var<'t>(spec: Var<'t>, p: StftParams, len: usize) -> Result<Var<'t>> {
    p.validate()?;
    let s = spec.value();
    check_rank("istft", s.shape(), 4)?;
    let batch = s.shape()[0];
    let expected = [batch, 2, p.n_bins(), p.n_frames(len)];
    for (axis, (&got, want)) in s.shape().iter().zip(expected).enumerate() {
        if got != want {
            return Err(Error::AxisMismatch {
                op: "istft",
                axis,
                expected: want,
                got,
            });
        }
    }
    let framer = Rc::new(Framer::new(p, batch, len));
    let den = Rc::new(p.synthesis_norm(framer.frames));
    let ft = expected[2] * expected[3];
    let (re, im) = unpack(batch, ft, s.data());
    let y = framer.synthesize(&re, &im, &den);
    Ok(spec.tape().record(
        Tensor::from_parts(vec![batch, len], y),
        &[spec],
        Box::new(move |g, _| {
            let (re, im) = framer.synthesize_adjoint(g.data(), &den);
            vec![Some(pack(batch, ft, &re, &im, expected.to_vec()))]
        }),
    ))
}

fn pack(batch: usize, block: usize, re: &[Real], im: &[Real], shape: Vec<usize>) -> Tensor {
    let mut out = Vec::with_capacity(2 * batch * block);
    for b in 0..batch {
        out.extend_from_slice(&re[b * block..][..block]);
        out.extend_from_slice(&im[b * block..][..block]);
    }
    Tensor::from_parts(shape, out)
}

fn unpack(batch: usize, block: usize, data: &[Real]) -> (Vec<Real>, Vec<Real>) {
    let mut re = Vec::with_capacity(batch * block);
    let mut im = Vec::with_capacity(batch * block);
    for b in 0..batch {
        re.extend_from_slice(&data[2 * b * block..][..block]);
        im.extend_from_slice(&data[(2 * b + 1) * block..][..block]);
    }
    (re, im)
}
