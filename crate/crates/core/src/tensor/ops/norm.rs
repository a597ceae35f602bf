use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

pub const BN_EPS: Real = 1e-5;
pub const BN_MOMENTUM: Real = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Per-channel running mean / unbiased variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<Real>,
    pub var: Vec<Real>,
    /// Number of training-mode updates applied so far.
    pub tracked: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

impl<'t> Var<'t> {
    /// Batch normalization over every axis except axis 1 (channels).
    pub fn batch_norm(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        stats: &mut RunningStats,
        mode: BatchNormMode,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::RankMismatch {
                op: "batch_norm",
                expected: 2,
                got: shape,
            });
        }
        let (batch, ch) = (shape[0], shape[1]);
        let spatial = x.numel() / (batch * ch);
        for p in [gamma, beta] {
            let len = p.value().numel();
            if len != ch {
                return Err(Error::AxisMismatch {
                    op: "batch_norm",
                    axis: 1,
                    expected: len,
                    got: ch,
                });
            }
        }
        if stats.channels() != ch {
            return Err(Error::AxisMismatch {
                op: "batch_norm",
                axis: 1,
                expected: stats.channels(),
                got: ch,
            });
        }
        let (gv, bv) = (gamma.value(), beta.value());
        let n = (batch * spatial) as Real;
        let idx = move |b: usize, c: usize| (b * ch + c) * spatial;

        let (mean, inv_std) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for b in 0..batch {
                        s += x.data()[idx(b, c)..][..spatial].iter().sum::<Real>();
                    }
                    let m = s / n;
                    let mut v = 0.0;
                    for b in 0..batch {
                        v += x.data()[idx(b, c)..][..spatial]
                            .iter()
                            .map(|&e| (e - m) * (e - m))
                            .sum::<Real>();
                    }
                    mean[c] = m;
                    var[c] = v / n;
                }
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for c in 0..ch {
                    stats.mean[c] = (1.0 - BN_MOMENTUM) * stats.mean[c] + BN_MOMENTUM * mean[c];
                    stats.var[c] = (1.0 - BN_MOMENTUM) * stats.var[c] + BN_MOMENTUM * var[c] * unbias;
                }
                stats.tracked += 1;
                let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect::<Vec<_>>();
                (mean, inv_std)
            }
            BatchNormMode::Eval => {
                if stats.tracked == 0 {
                    return Err(Error::UntrackedRunningStats);
                }
                let inv_std = stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (stats.mean.clone(), inv_std)
            }
        };

        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for b in 0..batch {
            for c in 0..ch {
                let (m, s, g, be) = (mean[c], inv_std[c], gv.data()[c], bv.data()[c]);
                let range = idx(b, c)..idx(b, c) + spatial;
                for ((h, o), &e) in xhat[range.clone()]
                    .iter_mut()
                    .zip(&mut out[range.clone()])
                    .zip(&x.data()[range])
                {
                    *h = (e - m) * s;
                    *o = g * *h + be;
                }
            }
        }
        let xhat = Rc::new(xhat);
        Ok(self.tape().record(
            Tensor::from_parts(shape.clone(), out),
            &[self, gamma, beta],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for b in 0..batch {
                    for c in 0..ch {
                        let r = idx(b, c)..idx(b, c) + spatial;
                        for (&gy, &h) in gd[r.clone()].iter().zip(&xhat[r]) {
                            dgamma[c] += gy * h;
                            dbeta[c] += gy;
                        }
                    }
                }
                let dx = need[0].then(|| {
                    let mut dx = vec![0.0; gd.len()];
                    for c in 0..ch {
                        let (gam, s) = (gv.data()[c], inv_std[c]);
                        for b in 0..batch {
                            let r = idx(b, c)..idx(b, c) + spatial;
                            for ((d, &gy), &h) in dx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                                *d = match mode {
                                    // d xhat = g*gamma; dx = s/n (n dxhat - sum dxhat - xhat sum(dxhat xhat))
                                    BatchNormMode::Train => {
                                        gam * s * (gy - dbeta[c] / n - h * dgamma[c] / n)
                                    }
                                    BatchNormMode::Eval => gam * s * gy,
                                };
                            }
                        }
                    }
                    Tensor::from_parts(shape.clone(), dx)
                });
                vec![
                    dx,
                    need[1].then(|| Tensor::from_parts(vec![ch], dgamma)),
                    need[2].then(|| Tensor::from_parts(vec![ch], dbeta)),
                ]
            }),
        ))
    }
}
