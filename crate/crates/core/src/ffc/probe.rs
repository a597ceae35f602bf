//! Receptive-field measurements from full Jacobians of a layer mapping
//! `1 x C_in x F x T` to `1 x C_out x F x T`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frequency coupling summarized from one or more Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyProfile {
    /// Fraction of `(f_out, f_in)` pairs with `f_out != f_in`, over all
    /// frames `t`, whose channel-aggregated entry `sum |dy[c, f_out, t] /
    /// dx[c', f_in, t]|` is nonzero.
    pub cross_frequency_density: f64,
    /// Largest `|f_out - f_in|` with any nonzero entry (any frames).
    pub bandwidth: usize,
    /// Largest `|t_out - t_in|` with any nonzero entry.
    pub time_reach: usize,
}

/// Each of `jacs` is `(C_out*F*T) x (C_in*F*T)` as returned by
/// [`crate::tensor::jacobian`], typically at different random inputs: the
/// profile describes the union of their supports, since ReLU gating can
/// zero individual entries at any single input. Entries at or below
/// `rel_tol` times the largest magnitude count as zero.
pub fn frequency_profile(
    jacs: &[Tensor],
    c_out: usize,
    c_in: usize,
    f: usize,
    t: usize,
    rel_tol: f64,
) -> Result<FrequencyProfile> {
    let (rows, cols) = (c_out * f * t, c_in * f * t);
    // agg[f_out][t_out][f_in][t_in]
    let mut agg = vec![0.0; f * t * f * t];
    for jac in jacs {
        if jac.shape() != [rows, cols] {
            return Err(Error::ShapeMismatch {
                op: "frequency_profile",
                left: jac.shape().to_vec(),
                right: vec![rows, cols],
            });
        }
        for co in 0..c_out {
            for fo in 0..f {
                for to in 0..t {
                    let row = &jac.data()[((co * f + fo) * t + to) * cols..][..cols];
                    let dst = &mut agg[(fo * t + to) * f * t..][..f * t];
                    for ci in 0..c_in {
                        for (a, v) in dst.iter_mut().zip(&row[ci * f * t..][..f * t]) {
                            *a += v.abs();
                        }
                    }
                }
            }
        }
    }
    let max = agg.iter().cloned().fold(0.0, f64::max);
    let nonzero = |v: f64| v > rel_tol * max && v > 0.0;
    let (mut dense, mut total, mut bandwidth, mut reach) = (0usize, 0usize, 0usize, 0usize);
    for fo in 0..f {
        for to in 0..t {
            for fi in 0..f {
                for ti in 0..t {
                    let v = agg[((fo * t + to) * f + fi) * t + ti];
                    if nonzero(v) {
                        bandwidth = bandwidth.max(fo.abs_diff(fi));
                        reach = reach.max(to.abs_diff(ti));
                    }
                    if fo != fi && to == ti {
                        total += 1;
                        dense += usize::from(nonzero(v));
                    }
                }
            }
        }
    }
    Ok(FrequencyProfile {
        cross_frequency_density: dense as f64 / total.max(1) as f64,
        bandwidth,
        time_reach: reach,
    })
}
