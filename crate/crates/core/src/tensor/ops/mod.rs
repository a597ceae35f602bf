//! Differentiable operations on [`Var`].
//!
//! Every op computes its value eagerly and records a closure producing the
//! vector-Jacobian product for each parent.

mod conv;
mod norm;

pub use conv::{conv1d, conv2d, conv_transpose2d};
pub use norm::{BatchNormMode, RunningStats, BN_EPS, BN_MOMENTUM};

use std::rc::Rc;

use super::{axis_layout, check_axis, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Concatenates tensors along `axis`. All other extents must agree.
pub fn concat_tensors(parts: &[&Tensor], axis: usize) -> Tensor {
    let first = parts[0].shape();
    let (outer, _, inner) = axis_layout(first, axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    Tensor::from_parts(shape, data)
}

/// Splits a tensor into consecutive chunks of the given extents along `axis`.
pub fn split_tensor(x: &Tensor, sizes: &[usize], axis: usize) -> Vec<Tensor> {
    let (outer, _, inner) = x.axis_layout(axis);
    let full = x.shape()[axis] * inner;
    let mut start = 0;
    sizes
        .iter()
        .map(|&size| {
            let mut data = Vec::with_capacity(outer * size * inner);
            for o in 0..outer {
                let base = o * full + start * inner;
                data.extend_from_slice(&x.data()[base..base + size * inner]);
            }
            start += size;
            let mut shape = x.shape().to_vec();
            shape[axis] = size;
            Tensor::from_parts(shape, data)
        })
        .collect()
}

/// Zero-pads (or, with `circular`, wraps) `x` along `axis`.
fn pad_tensor(x: &Tensor, axis: usize, before: usize, after: usize, circular: bool) -> Tensor {
    let (outer, n, inner) = x.axis_layout(axis);
    let m = n + before + after;
    let mut out = vec![0.0; outer * m * inner];
    for o in 0..outer {
        for j in 0..m {
            let src = if j >= before && j < before + n {
                Some(j - before)
            } else if circular {
                Some(((j as isize - before as isize).rem_euclid(n as isize)) as usize)
            } else {
                None
            };
            if let Some(s) = src {
                out[(o * m + j) * inner..][..inner]
                    .copy_from_slice(&x.data()[(o * n + s) * inner..][..inner]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = m;
    Tensor::from_parts(shape, out)
}

/// Adjoint of [`pad_tensor`].
fn unpad_tensor(g: &Tensor, axis: usize, before: usize, n: usize, circular: bool) -> Tensor {
    let (outer, m, inner) = g.axis_layout(axis);
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for j in 0..m {
            let dst = if j >= before && j < before + n {
                Some(j - before)
            } else if circular {
                Some(((j as isize - before as isize).rem_euclid(n as isize)) as usize)
            } else {
                None
            };
            if let Some(d) = dst {
                let src = &g.data()[(o * m + j) * inner..][..inner];
                for (a, b) in out[(o * n + d) * inner..][..inner].iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
    }
    let mut shape = g.shape().to_vec();
    shape[axis] = n;
    Tensor::from_parts(shape, out)
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(())
}

impl<'t> Var<'t> {
    fn unary(self, value: Tensor, grad: impl Fn(&Tensor) -> Tensor + 'static) -> Var<'t> {
        self.tape()
            .record(value, &[self], Box::new(move |g, _| vec![Some(grad(g))]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", a.shape(), b.shape())?;
        Ok(self.tape().record(
            a.zip_map(&b, |x, y| x + y),
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", a.shape(), b.shape())?;
        Ok(self.tape().record(
            a.zip_map(&b, |x, y| x - y),
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|x| -x))]),
        ))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", a.shape(), b.shape())?;
        let value = a.zip_map(&b, |x, y| x * y);
        Ok(self.tape().record(
            value,
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.zip_map(&b, |g, y| g * y)),
                    need[1].then(|| g.zip_map(&a, |g, x| g * x)),
                ]
            }),
        ))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(self, c: &Tensor) -> Result<Var<'t>> {
        let a = self.value();
        same_shape("mul_const", a.shape(), c.shape())?;
        let c = Rc::new(c.clone());
        let value = a.zip_map(&c, |x, y| x * y);
        Ok(self.unary(value, move |g| g.zip_map(&c, |g, y| g * y)))
    }

    pub fn scale(self, a: Real) -> Var<'t> {
        let value = self.value().map(|x| a * x);
        self.unary(value, move |g| g.map(|x| a * x))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: Real) -> Var<'t> {
        let value = self.value().map(|x| x + c);
        self.unary(value, Tensor::clone)
    }

    pub fn square(self) -> Var<'t> {
        let x = self.value();
        let value = x.map(|v| v * v);
        self.unary(value, move |g| g.zip_map(&x, |g, v| 2.0 * g * v))
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(self, slope: Real) -> Var<'t> {
        let x = self.value();
        let value = x.map(|v| if v > 0.0 { v } else { slope * v });
        self.unary(value, move |g| {
            g.zip_map(&x, |g, v| if v > 0.0 { g } else { slope * g })
        })
    }

    /// `ln(max(x, floor))`; the gradient is zero on the clamped side.
    pub fn log_floor(self, floor: Real) -> Var<'t> {
        let x = self.value();
        let value = x.map(|v| v.max(floor).ln());
        self.unary(value, move |g| {
            g.zip_map(&x, |g, v| if v > floor { g / v } else { 0.0 })
        })
    }

    /// `sqrt(re^2 + im^2)`, with the gradient taken as zero at the origin.
    pub fn magnitude(re: Var<'t>, im: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (re.value(), im.value());
        same_shape("magnitude", a.shape(), b.shape())?;
        let mag = Rc::new(a.zip_map(&b, Real::hypot));
        let value = (*mag).clone();
        Ok(re.tape().record(
            value,
            &[re, im],
            Box::new(move |g, need| {
                let ratio = |num: &Tensor| {
                    let mut out = g.zip_map(num, |g, n| g * n);
                    for (o, m) in out.data_mut().iter_mut().zip(mag.data()) {
                        *o = if *m > 0.0 { *o / m } else { 0.0 };
                    }
                    out
                };
                vec![need[0].then(|| ratio(&a)), need[1].then(|| ratio(&b))]
            }),
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary(Tensor::scalar(x.sum()), move |g| Tensor::full(&shape, g.item()))
    }

    pub fn mean(self) -> Var<'t> {
        let x = self.value();
        let n = x.numel() as Real;
        let shape = x.shape().to_vec();
        self.unary(Tensor::scalar(x.sum() / n), move |g| {
            Tensor::full(&shape, g.item() / n)
        })
    }

    /// Mean absolute difference. The subgradient at equality is zero.
    pub fn l1(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("l1", a.shape(), b.shape())?;
        let n = a.numel() as Real;
        let sign = Rc::new(a.zip_map(&b, |x, y| (x - y).signum() * ((x != y) as u8 as Real)));
        let value = a.zip_map(&b, |x, y| (x - y).abs()).sum() / n;
        Ok(self.tape().record(
            Tensor::scalar(value),
            &[self, other],
            Box::new(move |g, need| {
                let s = g.item() / n;
                vec![
                    need[0].then(|| sign.map(|v| v * s)),
                    need[1].then(|| sign.map(|v| -v * s)),
                ]
            }),
        ))
    }

    /// Mean squared difference.
    pub fn mse(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mse", a.shape(), b.shape())?;
        let n = a.numel() as Real;
        let diff = Rc::new(a.zip_map(&b, |x, y| x - y));
        let value = diff.norm_sq() / n;
        Ok(self.tape().record(
            Tensor::scalar(value),
            &[self, other],
            Box::new(move |g, need| {
                let s = 2.0 * g.item() / n;
                vec![
                    need[0].then(|| diff.map(|v| v * s)),
                    need[1].then(|| diff.map(|v| -v * s)),
                ]
            }),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let value = x.reshape(shape)?;
        let old = x.shape().to_vec();
        Ok(self.unary(value, move |g| Tensor::from_parts(old.clone(), g.data().to_vec())))
    }

    /// Copy of the value that blocks gradient flow.
    pub fn detach(self) -> Var<'t> {
        self.tape().constant((*self.value()).clone())
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let shape0 = values[0].shape().to_vec();
        check_axis("concat", &shape0, axis)?;
        for v in &values[1..] {
            if v.rank() != shape0.len() {
                return Err(Error::RankMismatch {
                    op: "concat",
                    expected: shape0.len(),
                    got: v.shape().to_vec(),
                });
            }
            for (ax, (&a, &b)) in shape0.iter().zip(v.shape()).enumerate() {
                if ax != axis && a != b {
                    return Err(Error::AxisMismatch {
                        op: "concat",
                        axis: ax,
                        expected: a,
                        got: b,
                    });
                }
            }
        }
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let value = concat_tensors(&refs, axis);
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(first.tape().record(
            value,
            parts,
            Box::new(move |g, _| split_tensor(g, &sizes, axis).into_iter().map(Some).collect()),
        ))
    }

    pub fn split(self, sizes: &[usize], axis: usize) -> Result<Vec<Var<'t>>> {
        let shape = self.shape();
        check_axis("split", &shape, axis)?;
        let total: usize = sizes.iter().sum();
        if total != shape[axis] {
            return Err(Error::AxisMismatch {
                op: "split",
                axis,
                expected: shape[axis],
                got: total,
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&size| {
                let v = self.slice(axis, start, size);
                start += size;
                v
            })
            .collect()
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("slice", x.shape(), axis)?;
        let n = x.shape()[axis];
        if len == 0 || start + len > n {
            return Err(Error::AxisMismatch {
                op: "slice",
                axis,
                expected: n,
                got: start + len,
            });
        }
        let parts = split_tensor(&x, &[start, len, n - start - len], axis);
        // split_tensor tolerates zero-size chunks; only the middle is kept.
        let value = parts.into_iter().nth(1).unwrap();
        let after = n - start - len;
        Ok(self.unary(value, move |g| pad_tensor(g, axis, start, after, false)))
    }

    /// Zero padding along `axis`.
    pub fn pad(self, axis: usize, before: usize, after: usize) -> Result<Var<'t>> {
        self.pad_impl(axis, before, after, false)
    }

    /// Periodic (wrap-around) padding along `axis`.
    pub fn pad_circular(self, axis: usize, before: usize, after: usize) -> Result<Var<'t>> {
        let n = self.shape().get(axis).copied().unwrap_or(0);
        if before > n || after > n {
            return Err(Error::invalid(format!(
                "circular pad ({before}, {after}) exceeds extent {n}"
            )));
        }
        self.pad_impl(axis, before, after, true)
    }

    fn pad_impl(self, axis: usize, before: usize, after: usize, circular: bool) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("pad", x.shape(), axis)?;
        if before == 0 && after == 0 {
            return Ok(self);
        }
        let n = x.shape()[axis];
        let value = pad_tensor(&x, axis, before, after, circular);
        Ok(self.unary(value, move |g| unpad_tensor(g, axis, before, n, circular)))
    }

    /// Non-overlapping average pooling over the last axis.
    pub fn avg_pool_last(self, factor: usize) -> Result<Var<'t>> {
        if factor == 0 {
            return Err(Error::invalid("pool factor must be positive"));
        }
        if factor == 1 {
            return Ok(self);
        }
        let x = self.value();
        let rank = x.rank();
        let (outer, n, _) = x.axis_layout(rank - 1);
        let m = n / factor;
        if m == 0 {
            return Err(Error::invalid(format!("cannot pool {n} samples by {factor}")));
        }
        let inv = 1.0 / factor as Real;
        let mut out = vec![0.0; outer * m];
        for o in 0..outer {
            for j in 0..m {
                out[o * m + j] = x.data()[o * n + j * factor..][..factor].iter().sum::<Real>() * inv;
            }
        }
        let mut shape = x.shape().to_vec();
        shape[rank - 1] = m;
        let in_shape = x.shape().to_vec();
        Ok(self.unary(Tensor::from_parts(shape, out), move |g| {
            let mut dx = vec![0.0; outer * n];
            for o in 0..outer {
                for j in 0..m {
                    let v = g.data()[o * m + j] * inv;
                    dx[o * n + j * factor..][..factor].iter_mut().for_each(|d| *d = v);
                }
            }
            Tensor::from_parts(in_shape.clone(), dx)
        }))
    }

    /// Applies the constant matrix `m` (`rows x n`) along `axis` (extent `n`).
    pub fn linear_along(self, m: &Tensor, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("linear_along", x.shape(), axis)?;
        super::check_rank("linear_along", m.shape(), 2)?;
        let (rows, n) = (m.shape()[0], m.shape()[1]);
        let (outer, xn, inner) = x.axis_layout(axis);
        if xn != n {
            return Err(Error::AxisMismatch {
                op: "linear_along",
                axis,
                expected: n,
                got: xn,
            });
        }
        let mat = Rc::new(m.clone());
        let mut out = vec![0.0; outer * rows * inner];
        for o in 0..outer {
            super::gemm::gemm(
                super::gemm::Mat::new(mat.data(), rows, n),
                super::gemm::Mat::new(&x.data()[o * n * inner..], n, inner),
                &mut out[o * rows * inner..],
                0.0,
            );
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = rows;
        let in_shape = x.shape().to_vec();
        Ok(self.unary(Tensor::from_parts(shape, out), move |g| {
            let mut dx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                super::gemm::gemm(
                    super::gemm::Mat::new(mat.data(), rows, n).t(),
                    super::gemm::Mat::new(&g.data()[o * rows * inner..], rows, inner),
                    &mut dx[o * n * inner..],
                    0.0,
                );
            }
            Tensor::from_parts(in_shape.clone(), dx)
        }))
    }
}
