//! Convolutions via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, Mat};
use crate::tensor::{check_rank, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }
}

fn out_extent(op: &'static str, axis: usize, n: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if s == 0 {
        return Err(Error::invalid(format!("{op}: stride must be >= 1")));
    }
    if n + 2 * p < k {
        return Err(Error::AxisMismatch {
            op,
            axis,
            expected: k,
            got: n + 2 * p,
        });
    }
    Ok((n + 2 * p - k) / s + 1)
}

/// Unfolds `x` (`channels x h x w`) into `rows x (oh*ow)`.
fn im2col(x: &[Real], g: &Geometry, cols: &mut [Real]) {
    let n_cols = g.cols();
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n_cols..][..n_cols];
                for oh in 0..g.oh {
                    let ih = (oh * g.sh + ki) as isize - g.ph as isize;
                    let out = &mut dst[oh * g.ow..][..g.ow];
                    if ih < 0 || ih as usize >= g.h {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..][..g.w];
                    for (ow, v) in out.iter_mut().enumerate() {
                        let iw = (ow * g.sw + kj) as isize - g.pw as isize;
                        *v = if iw < 0 || iw as usize >= g.w { 0.0 } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into `x`.
fn col2im(cols: &[Real], g: &Geometry, x: &mut [Real]) {
    let n_cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n_cols..][..n_cols];
                for oh in 0..g.oh {
                    let ih = (oh * g.sh + ki) as isize - g.ph as isize;
                    if ih < 0 || ih as usize >= g.h {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..][..g.w];
                    for (ow, v) in src[oh * g.ow..][..g.ow].iter().enumerate() {
                        let iw = (ow * g.sw + kj) as isize - g.pw as isize;
                        if iw >= 0 && (iw as usize) < g.w {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn bias_check(op: &'static str, b: Option<&Tensor>, out_ch: usize) -> Result<()> {
    if let Some(b) = b {
        if b.shape() != [out_ch] {
            return Err(Error::AxisMismatch {
                op,
                axis: 0,
                expected: out_ch,
                got: b.numel(),
            });
        }
    }
    Ok(())
}

/// Sums `g` (`batch x ch x spatial`) over batch and spatial axes.
fn channel_sums(g: &Tensor) -> Tensor {
    let (batch, ch) = (g.shape()[0], g.shape()[1]);
    let spatial = g.numel() / (batch * ch);
    let mut out = vec![0.0; ch];
    for b in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            *o += g.data()[(b * ch + c) * spatial..][..spatial].iter().sum::<Real>();
        }
    }
    Tensor::from_parts(vec![ch], out)
}

/// Grouped 2-D convolution. `x`: `B x C x H x W`; `w`: `O x C/groups x kH x kW`.
pub fn conv2d<'t>(
    x: Var<'t>,
    w: Var<'t>,
    b: Option<Var<'t>>,
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
) -> Result<Var<'t>> {
    const OP: &str = "conv2d";
    let (xv, wv) = (x.value(), w.value());
    check_rank(OP, xv.shape(), 4)?;
    check_rank(OP, wv.shape(), 4)?;
    let [batch, ch, h, wd] = xv.shape().try_into().unwrap();
    let [out_ch, ch_g, kh, kw] = wv.shape().try_into().unwrap();
    if groups == 0 || ch_g * groups != ch {
        return Err(Error::AxisMismatch {
            op: OP,
            axis: 1,
            expected: ch_g * groups.max(1),
            got: ch,
        });
    }
    if out_ch % groups != 0 {
        return Err(Error::invalid(format!("{OP}: {out_ch} outputs not divisible by {groups} groups")));
    }
    let bv = b.map(|b| b.value());
    bias_check(OP, bv.as_deref(), out_ch)?;
    let geo = Geometry {
        channels: ch_g,
        h,
        w: wd,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
        oh: out_extent(OP, 2, h, kh, stride.0, padding.0)?,
        ow: out_extent(OP, 3, wd, kw, stride.1, padding.1)?,
    };
    let out_g = out_ch / groups;
    let (in_plane, out_plane) = (h * wd, geo.cols());
    let mut out = vec![0.0; batch * out_ch * out_plane];
    let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { geo.rows() * geo.cols() }];
    for bi in 0..batch {
        for gi in 0..groups {
            let xg = &xv.data()[(bi * ch + gi * ch_g) * in_plane..][..ch_g * in_plane];
            let cmat = if geo.is_pointwise() {
                xg
            } else {
                im2col(xg, &geo, &mut cols);
                &cols[..]
            };
            gemm(
                Mat::new(&wv.data()[gi * out_g * geo.rows()..], out_g, geo.rows()),
                Mat::new(cmat, geo.rows(), geo.cols()),
                &mut out[(bi * out_ch + gi * out_g) * out_plane..],
                0.0,
            );
        }
        if let Some(bv) = &bv {
            for (o, &bias) in bv.data().iter().enumerate() {
                out[(bi * out_ch + o) * out_plane..][..out_plane]
                    .iter_mut()
                    .for_each(|v| *v += bias);
            }
        }
    }
    let value = Tensor::from_parts(vec![batch, out_ch, geo.oh, geo.ow], out);
    let mut parents = vec![x, w];
    parents.extend(b);
    let has_bias = b.is_some();
    Ok(x.tape().record(
        value,
        &parents,
        Box::new(move |g, need| {
            let mut dx = need[0].then(|| vec![0.0; xv.numel()]);
            let mut dw = need[1].then(|| vec![0.0; wv.numel()]);
            let mut cols = vec![0.0; geo.rows() * geo.cols()];
            for bi in 0..batch {
                for gi in 0..groups {
                    let gy = &g.data()[(bi * out_ch + gi * out_g) * out_plane..][..out_g * out_plane];
                    let wg = Mat::new(&wv.data()[gi * out_g * geo.rows()..], out_g, geo.rows());
                    if let Some(dw) = dw.as_mut() {
                        let xg = &xv.data()[(bi * ch + gi * ch_g) * in_plane..][..ch_g * in_plane];
                        let cmat = if geo.is_pointwise() {
                            xg
                        } else {
                            im2col(xg, &geo, &mut cols);
                            &cols[..]
                        };
                        gemm(
                            Mat::new(gy, out_g, out_plane),
                            Mat::new(cmat, geo.rows(), geo.cols()).t(),
                            &mut dw[gi * out_g * geo.rows()..],
                            1.0,
                        );
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxg = &mut dx[(bi * ch + gi * ch_g) * in_plane..][..ch_g * in_plane];
                        if geo.is_pointwise() {
                            gemm(wg.t(), Mat::new(gy, out_g, out_plane), dxg, 1.0);
                        } else {
                            gemm(wg.t(), Mat::new(gy, out_g, out_plane), &mut cols, 0.0);
                            col2im(&cols, &geo, dxg);
                        }
                    }
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(xv.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
            ];
            if has_bias {
                grads.push(need[2].then(|| channel_sums(g)));
            }
            grads
        }),
    ))
}

/// Transposed 2-D convolution (the adjoint of [`conv2d`] in `x`).
/// `x`: `B x Cin x H x W`; `w`: `Cin x Cout x kH x kW`. Output extent per
/// axis is `(in - 1) * stride - 2 * pad + k`.
pub fn conv_transpose2d<'t>(
    x: Var<'t>,
    w: Var<'t>,
    b: Option<Var<'t>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Var<'t>> {
    const OP: &str = "conv_transpose2d";
    let (xv, wv) = (x.value(), w.value());
    check_rank(OP, xv.shape(), 4)?;
    check_rank(OP, wv.shape(), 4)?;
    let [batch, cin, h, wd] = xv.shape().try_into().unwrap();
    let [wcin, cout, kh, kw] = wv.shape().try_into().unwrap();
    if wcin != cin {
        return Err(Error::AxisMismatch {
            op: OP,
            axis: 1,
            expected: wcin,
            got: cin,
        });
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::invalid(format!("{OP}: stride must be >= 1")));
    }
    let full = |n: usize, s: usize, k: usize, p: usize, axis: usize| -> Result<usize> {
        let raw = (n - 1) * s + k;
        if raw <= 2 * p {
            return Err(Error::AxisMismatch {
                op: OP,
                axis,
                expected: 2 * p + 1,
                got: raw,
            });
        }
        Ok(raw - 2 * p)
    };
    let oh = full(h, stride.0, kh, padding.0, 2)?;
    let ow = full(wd, stride.1, kw, padding.1, 3)?;
    let bv = b.map(|b| b.value());
    bias_check(OP, bv.as_deref(), cout)?;
    // Geometry of the forward convolution this op is the adjoint of.
    let geo = Geometry {
        channels: cout,
        h: oh,
        w: ow,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
        oh: h,
        ow: wd,
    };
    let (in_plane, out_plane) = (h * wd, oh * ow);
    let mut out = vec![0.0; batch * cout * out_plane];
    let mut cols = vec![0.0; geo.rows() * geo.cols()];
    for bi in 0..batch {
        let xb = &xv.data()[bi * cin * in_plane..][..cin * in_plane];
        gemm(Mat::new(wv.data(), cin, geo.rows()).t(), Mat::new(xb, cin, in_plane), &mut cols, 0.0);
        let ob = &mut out[bi * cout * out_plane..][..cout * out_plane];
        col2im(&cols, &geo, ob);
        if let Some(bv) = &bv {
            for (o, &bias) in bv.data().iter().enumerate() {
                ob[o * out_plane..][..out_plane].iter_mut().for_each(|v| *v += bias);
            }
        }
    }
    let value = Tensor::from_parts(vec![batch, cout, oh, ow], out);
    let mut parents = vec![x, w];
    parents.extend(b);
    let has_bias = b.is_some();
    Ok(x.tape().record(
        value,
        &parents,
        Box::new(move |g, need| {
            let mut dx = need[0].then(|| vec![0.0; xv.numel()]);
            let mut dw = need[1].then(|| vec![0.0; wv.numel()]);
            let mut cols = vec![0.0; geo.rows() * geo.cols()];
            for bi in 0..batch {
                im2col(&g.data()[bi * cout * out_plane..][..cout * out_plane], &geo, &mut cols);
                let cmat = Mat::new(&cols, geo.rows(), geo.cols());
                if let Some(dx) = dx.as_mut() {
                    gemm(Mat::new(wv.data(), cin, geo.rows()), cmat, &mut dx[bi * cin * in_plane..], 0.0);
                }
                if let Some(dw) = dw.as_mut() {
                    let xb = &xv.data()[bi * cin * in_plane..][..cin * in_plane];
                    gemm(Mat::new(xb, cin, in_plane), cmat.t(), dw, 1.0);
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(xv.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
            ];
            if has_bias {
                grads.push(need[2].then(|| channel_sums(g)));
            }
            grads
        }),
    ))
}

/// Grouped 1-D convolution. `x`: `B x C x L`; `w`: `O x C/groups x k`.
pub fn conv1d<'t>(
    x: Var<'t>,
    w: Var<'t>,
    b: Option<Var<'t>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var<'t>> {
    let xs = x.shape();
    let ws = w.shape();
    check_rank("conv1d", &xs, 3)?;
    check_rank("conv1d", &ws, 3)?;
    let x4 = x.reshape(&[xs[0], xs[1], 1, xs[2]])?;
    let w4 = w.reshape(&[ws[0], ws[1], 1, ws[2]])?;
    let y = conv2d(x4, w4, b, (1, stride), (0, padding), groups)?;
    let ys = y.shape();
    y.reshape(&[ys[0], ys[1], ys[3]])
}

#[cfg(test)]
pub(crate) fn conv2d_values(x: &Tensor, w: &Tensor, stride: (usize, usize), padding: (usize, usize)) -> Tensor {
    let tape = crate::tensor::Tape::new();
    let y = conv2d(tape.constant(x.clone()), tape.constant(w.clone()), None, stride, padding, 1).unwrap();
    (*y.value()).clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution, independent of im2col.
    fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, s: (usize, usize), p: (usize, usize)) -> Tensor {
        let [bn, c, h, wd] = x.shape().try_into().unwrap();
        let [o, _, kh, kw] = w.shape().try_into().unwrap();
        let oh = (h + 2 * p.0 - kh) / s.0 + 1;
        let ow = (wd + 2 * p.1 - kw) / s.1 + 1;
        let mut out = Tensor::zeros(&[bn, o, oh, ow]);
        for bi in 0..bn {
            for oi in 0..o {
                for y in 0..oh {
                    for z in 0..ow {
                        let mut acc = b.data()[oi];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * s.0 + i) as isize - p.0 as isize;
                                    let iz = (z * s.1 + j) as isize - p.1 as isize;
                                    if iy >= 0 && iz >= 0 && (iy as usize) < h && (iz as usize) < wd {
                                        acc += x.get(&[bi, ci, iy as usize, iz as usize]) * w.get(&[oi, ci, i, j]);
                                    }
                                }
                            }
                        }
                        out.set(&[bi, oi, y, z], acc);
                    }
                }
            }
        }
        out
    }

    fn run_conv(x: &Tensor, w: &Tensor, b: &Tensor, s: (usize, usize), p: (usize, usize)) -> Tensor {
        let tape = Tape::new();
        let y = conv2d(tape.constant(x.clone()), tape.constant(w.clone()), Some(tape.constant(b.clone())), s, p, 1)
            .unwrap();
        (*y.value()).clone()
    }

    #[test]
    fn all_ones_window_sum() {
        let x = Tensor::ones(&[1, 1, 4, 4]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = run_conv(&x, &w, &Tensor::zeros(&[1]), (1, 1), (1, 1));
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.get(&[0, 0, 1, 1]), 9.0);
        assert_eq!(y.get(&[0, 0, 0, 0]), 4.0);
        let y = run_conv(&x, &w, &Tensor::zeros(&[1]), (2, 2), (1, 1));
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(&[2, 3, 8, 8], &mut rng);
        let w = Tensor::randn(&[4, 3, 3, 3], &mut rng);
        let b = Tensor::randn(&[4], &mut rng);
        for (s, p) in [((1, 1), (1, 1)), ((2, 2), (1, 1)), ((1, 2), (0, 1)), ((2, 1), (2, 0))] {
            let got = run_conv(&x, &w, &b, s, p);
            let want = naive_conv2d(&x, &w, &b, s, p);
            assert!(got.max_abs_diff(&want) < 1e-12, "stride {s:?} pad {p:?}");
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        match conv2d(x, w, None, (1, 1), (1, 1), 1) {
            Err(Error::AxisMismatch { axis: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let w = tape.constant(Tensor::zeros(&[1, 2, 7, 3]));
        assert!(matches!(
            conv2d(x, w, None, (1, 1), (1, 1), 1),
            Err(Error::AxisMismatch { axis: 2, .. })
        ));
    }

    #[test]
    fn transposed_shapes_and_identity() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 2, 2], |i| i as Real));
        let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = conv_transpose2d(x, w, None, (2, 2), (0, 0)).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 4, 4]);
        let id = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = conv_transpose2d(x, id, None, (1, 1), (0, 0)).unwrap();
        assert_eq!(*y.value(), *x.value());
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <convT(x), y> == <x, conv(y)> with w reinterpreted as (Cin, Cout, k, k) vs (Cout... )
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (s, p, k) in [(2, 1, 4), (2, 1, 3), (1, 1, 3), (3, 0, 3)] {
            let cin = 3;
            let cout = 2;
            let x = Tensor::randn(&[2, cin, 5, 4], &mut rng);
            let w = Tensor::randn(&[cin, cout, k, k], &mut rng);
            let tape = Tape::new();
            let y = conv_transpose2d(tape.constant(x.clone()), tape.constant(w.clone()), None, (s, s), (p, p))
                .unwrap()
                .value();
            let probe = Tensor::randn(y.shape(), &mut rng);
            // conv2d with weight shape (Cout_conv = cin, Cin_conv = cout): the same buffer.
            let cy = conv2d_values(&probe, &w, (s, s), (p, p));
            assert_eq!(cy.shape(), x.shape());
            let lhs: Real = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
            let rhs: Real = x.data().iter().zip(cy.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "s={s} p={p} k={k}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..5u64 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[2, 4, 5, 6], &mut r);
            let w = Tensor::randn(&[6, 2, 3, 3], &mut r);
            let b = Tensor::randn(&[6], &mut r);
            let probe = Tensor::randn(&[2, 6, 3, 6], &mut rng);
            let err = grad_check_many(
                |_, v| conv2d(v[0], v[1], Some(v[2]), (2, 1), (1, 1), 2)?.mul_const(&probe).map(|y| y.sum()),
                &[x.clone(), w.clone(), b.clone()],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "conv2d {err}");

            let wt = Tensor::randn(&[4, 3, 4, 4], &mut r);
            let probe = Tensor::randn(&[2, 3, 10, 12], &mut rng);
            let err = grad_check_many(
                |_, v| conv_transpose2d(v[0], v[1], Some(v[2]), (2, 2), (1, 1))?.mul_const(&probe).map(|y| y.sum()),
                &[x.clone(), wt, Tensor::randn(&[3], &mut r)],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "conv_transpose2d {err}");

            let x1 = Tensor::randn(&[2, 4, 37], &mut r);
            let w1 = Tensor::randn(&[8, 2, 5], &mut r);
            let err = grad_check_many(
                |_, v| Ok(conv1d(v[0], v[1], Some(v[2]), 3, 2, 2)?.square().mean()),
                &[x1, w1, Tensor::randn(&[8], &mut r)],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "conv1d {err}");
        }
    }
}
