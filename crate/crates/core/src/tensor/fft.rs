//! Real FFT along one axis of a tensor, and its differentiable tape ops.
//!
//! Convention: the forward transform is unnormalized,
//! `X[b] = sum_f x[f] exp(-2 pi i b f / F)`, and the inverse carries the
//! `1/F` factor. The real transform keeps `F/2 + 1` bins, including the
//! Nyquist bin, so `F` must be even.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::ops::{concat_tensors, split_tensor};
use super::{axis_layout, check_axis, ComplexTensor, ComplexVar, Real, Tensor, Var};
use crate::error::{Error, Result};

thread_local! {
    static PLANS: RefCell<(FftPlanner<Real>, HashMap<(usize, bool), Arc<dyn Fft<Real>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<Real>> {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Number of bins kept by a real transform of length `n`.
pub fn rfft_bins(n: usize) -> usize {
    n / 2 + 1
}

fn check_even(op: &'static str, axis: usize, n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::OddLength { op, axis, len: n });
    }
    Ok(())
}

/// Forward real transform of every line of `x` laid out as
/// `outer x n x inner`. Returns (re, im) laid out `outer x (n/2+1) x inner`.
pub(crate) fn rfft_lines(
    x: &[Real],
    outer: usize,
    n: usize,
    inner: usize,
) -> (Vec<Real>, Vec<Real>) {
    let nb = rfft_bins(n);
    let lines = outer * inner;
    let mut buf = vec![Complex::new(0.0, 0.0); lines * n];
    for o in 0..outer {
        for i in 0..inner {
            let line = &mut buf[(o * inner + i) * n..][..n];
            for (f, slot) in line.iter_mut().enumerate() {
                *slot = Complex::new(x[(o * n + f) * inner + i], 0.0);
            }
        }
    }
    plan(n, false).process(&mut buf);
    let mut re = vec![0.0; outer * nb * inner];
    let mut im = vec![0.0; outer * nb * inner];
    for o in 0..outer {
        for i in 0..inner {
            let line = &buf[(o * inner + i) * n..][..n];
            for b in 0..nb {
                let dst = (o * nb + b) * inner + i;
                re[dst] = line[b].re;
                im[dst] = line[b].im;
            }
        }
    }
    (re, im)
}

/// Inverse real transform (with 1/n) of half-spectra laid out
/// `outer x (n/2+1) x inner`. Imaginary parts of the DC and Nyquist bins are
/// ignored, as for any Hermitian-symmetric inverse.
pub(crate) fn irfft_lines(
    re: &[Real],
    im: &[Real],
    outer: usize,
    n: usize,
    inner: usize,
) -> Vec<Real> {
    let nb = rfft_bins(n);
    let lines = outer * inner;
    let mut buf = vec![Complex::new(0.0, 0.0); lines * n];
    for o in 0..outer {
        for i in 0..inner {
            let line = &mut buf[(o * inner + i) * n..][..n];
            for b in 0..nb {
                let src = (o * nb + b) * inner + i;
                let z = if b == 0 || b == n / 2 {
                    Complex::new(re[src], 0.0)
                } else {
                    Complex::new(re[src], im[src])
                };
                line[b] = z;
                if b != 0 && b != n / 2 {
                    line[n - b] = z.conj();
                }
            }
        }
    }
    plan(n, true).process(&mut buf);
    let scale = 1.0 / n as Real;
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for i in 0..inner {
            let line = &buf[(o * inner + i) * n..][..n];
            for f in 0..n {
                out[(o * n + f) * inner + i] = line[f].re * scale;
            }
        }
    }
    out
}

/// Multiplicity of bin `b` in the full spectrum of a length-`n` signal.
fn bin_weight(b: usize, n: usize) -> Real {
    if b == 0 || b == n / 2 {
        1.0
    } else {
        2.0
    }
}

/// Adjoint of [`rfft_lines`]: maps bin gradients back to signal gradients.
pub(crate) fn rfft_lines_adjoint(
    g_re: &[Real],
    g_im: &[Real],
    outer: usize,
    n: usize,
    inner: usize,
) -> Vec<Real> {
    let nb = rfft_bins(n);
    let mut z_re = vec![0.0; g_re.len()];
    let mut z_im = vec![0.0; g_im.len()];
    for o in 0..outer {
        for b in 0..nb {
            let s = n as Real / bin_weight(b, n);
            for i in 0..inner {
                let k = (o * nb + b) * inner + i;
                z_re[k] = s * g_re[k];
                z_im[k] = s * g_im[k];
            }
        }
    }
    irfft_lines(&z_re, &z_im, outer, n, inner)
}

/// Adjoint of [`irfft_lines`]: maps signal gradients back to bin gradients.
pub(crate) fn irfft_lines_adjoint(
    g: &[Real],
    outer: usize,
    n: usize,
    inner: usize,
) -> (Vec<Real>, Vec<Real>) {
    let nb = rfft_bins(n);
    let (mut re, mut im) = rfft_lines(g, outer, n, inner);
    for o in 0..outer {
        for b in 0..nb {
            let s = bin_weight(b, n) / n as Real;
            let edge = b == 0 || b == n / 2;
            for i in 0..inner {
                let k = (o * nb + b) * inner + i;
                re[k] *= s;
                im[k] = if edge { 0.0 } else { im[k] * s };
            }
        }
    }
    (re, im)
}

/// Real FFT along `axis`. The axis extent `F` must be even; the output
/// has `F/2 + 1` bins along that axis.
pub fn rfft_axis(x: &Tensor, axis: usize) -> Result<ComplexTensor> {
    check_axis("rfft_axis", x.shape(), axis)?;
    let (outer, n, inner) = x.axis_layout(axis);
    check_even("rfft_axis", axis, n)?;
    let (re, im) = rfft_lines(x.data(), outer, n, inner);
    let mut shape = x.shape().to_vec();
    shape[axis] = rfft_bins(n);
    Ok(ComplexTensor {
        re: Tensor::from_parts(shape.clone(), re),
        im: Tensor::from_parts(shape, im),
    })
}

/// Inverse of [`rfft_axis`], producing `out_len` samples along `axis`.
pub fn irfft_axis(spec: &ComplexTensor, axis: usize, out_len: usize) -> Result<Tensor> {
    check_axis("irfft_axis", spec.shape(), axis)?;
    check_even("irfft_axis", axis, out_len)?;
    let (outer, nb, inner) = spec.re.axis_layout(axis);
    if nb != rfft_bins(out_len) {
        return Err(Error::AxisMismatch {
            op: "irfft_axis",
            axis,
            expected: rfft_bins(out_len),
            got: nb,
        });
    }
    let out = irfft_lines(spec.re.data(), spec.im.data(), outer, out_len, inner);
    let mut shape = spec.shape().to_vec();
    shape[axis] = out_len;
    Ok(Tensor::from_parts(shape, out))
}

/// Differentiable real FFT along `fft_axis`, with real and imaginary parts
/// concatenated along `cat_axis` (real first).
pub fn rfft_cat<'t>(x: Var<'t>, fft_axis: usize, cat_axis: usize) -> Result<Var<'t>> {
    let shape = x.shape();
    check_axis("rfft_cat", &shape, fft_axis)?;
    check_axis("rfft_cat", &shape, cat_axis)?;
    if fft_axis == cat_axis {
        return Err(Error::invalid("rfft_cat: fft and concat axes must differ"));
    }
    let spec = rfft_axis(&x.value(), fft_axis)?;
    let half_shape = spec.shape().to_vec();
    let out = concat_tensors(&[&spec.re, &spec.im], cat_axis);
    let n = shape[fft_axis];
    Ok(x.tape().record(
        out,
        &[x],
        Box::new(move |g, _| {
            let parts = split_tensor(g, &[half_shape[cat_axis]; 2], cat_axis);
            let (outer, _, inner) = axis_layout(&half_shape, fft_axis);
            let dx = rfft_lines_adjoint(parts[0].data(), parts[1].data(), outer, n, inner);
            let mut in_shape = half_shape.clone();
            in_shape[fft_axis] = n;
            vec![Some(Tensor::from_parts(in_shape, dx))]
        }),
    ))
}

/// Differentiable inverse of [`rfft_cat`]: splits `y` in two along
/// `cat_axis` into (re, im) and inverts along `fft_axis` to `out_len`.
pub fn irfft_cat<'t>(y: Var<'t>, fft_axis: usize, cat_axis: usize, out_len: usize) -> Result<Var<'t>> {
    let shape = y.shape();
    check_axis("irfft_cat", &shape, fft_axis)?;
    check_axis("irfft_cat", &shape, cat_axis)?;
    if fft_axis == cat_axis {
        return Err(Error::invalid("irfft_cat: fft and concat axes must differ"));
    }
    if shape[cat_axis] % 2 != 0 {
        return Err(Error::OddLength {
            op: "irfft_cat",
            axis: cat_axis,
            len: shape[cat_axis],
        });
    }
    let value = y.value();
    let parts = split_tensor(&value, &[shape[cat_axis] / 2; 2], cat_axis);
    let spec = ComplexTensor {
        re: parts[0].clone(),
        im: parts[1].clone(),
    };
    let out = irfft_axis(&spec, fft_axis, out_len)?;
    let out_shape = out.shape().to_vec();
    Ok(y.tape().record(
        out,
        &[y],
        Box::new(move |g, _| {
            let (outer, n, inner) = axis_layout(&out_shape, fft_axis);
            let (re, im) = irfft_lines_adjoint(g.data(), outer, n, inner);
            let mut half = out_shape.clone();
            half[fft_axis] = rfft_bins(n);
            let re = Tensor::from_parts(half.clone(), re);
            let im = Tensor::from_parts(half, im);
            vec![Some(concat_tensors(&[&re, &im], cat_axis))]
        }),
    ))
}

/// Differentiable real FFT along `axis`.
pub fn rfft_var<'t>(x: Var<'t>, axis: usize) -> Result<ComplexVar<'t>> {
    // Stack (re, im) along a fresh leading axis, then split it off again.
    let mut lifted = vec![1];
    lifted.extend(x.shape());
    let x1 = x.reshape(&lifted)?;
    let packed = rfft_cat(x1, axis + 1, 0)?;
    let mut half = packed.shape();
    half.remove(0);
    let parts = packed.split(&[1, 1], 0)?;
    Ok(ComplexVar {
        re: parts[0].reshape(&half)?,
        im: parts[1].reshape(&half)?,
    })
}

/// Differentiable inverse of [`rfft_var`].
pub fn irfft_var<'t>(z: ComplexVar<'t>, axis: usize, out_len: usize) -> Result<Var<'t>> {
    let mut lifted = vec![1];
    lifted.extend(z.re.shape());
    let packed = Var::concat(&[z.re.reshape(&lifted)?, z.im.reshape(&lifted)?], 0)?;
    let out = irfft_cat(packed, axis + 1, 0, out_len)?;
    let mut shape = out.shape();
    shape.remove(0);
    out.reshape(&shape)
}
