use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{grad_check_params, ParamStore, TimePad};
use crate::tensor::fft::rfft_cat;
use crate::tensor::ops::conv2d;
use crate::tensor::{grad_check, jacobian, BatchNormMode, Tape, Tensor};

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn run<F>(store: &mut ParamStore, mode: BatchNormMode, x: &Tensor, f: F) -> Tensor
where
    F: for<'t, 's> Fn(&mut Ctx<'t, 's>, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let mut ctx = store.ctx(&tape, mode, false);
    let x = tape.constant(x.clone());
    let y = f(&mut ctx, x).unwrap().value();
    (*y).clone()
}

#[test]
fn fourier_unit_shape_chain() {
    let mut b = Builder::new(1);
    let fu = FourierUnit::new(&mut b, "fu", 4).unwrap();
    let mut store = b.finish();
    let x = randn(&[1, 4, 16, 8], 2);
    let tape = Tape::new();
    let spec = rfft_cat(tape.constant(x.clone()), FREQ_AXIS, 1).unwrap();
    assert_eq!(spec.shape(), vec![1, 8, 9, 8]);
    let y = run(&mut store, BatchNormMode::Train, &x, |ctx, x| fu.forward(ctx, x));
    assert_eq!(y.shape(), &[1, 4, 16, 8]);
    for f in [4usize, 8, 16, 64, 512] {
        let x = randn(&[1, 4, f, 3], f as u64);
        let y = run(&mut store, BatchNormMode::Train, &x, |ctx, x| fu.forward(ctx, x));
        assert_eq!(y.shape(), x.shape());
    }
    let odd = randn(&[1, 4, 9, 3], 0);
    let tape = Tape::new();
    let mut ctx = store.ctx(&tape, BatchNormMode::Train, false);
    let err = fu.forward(&mut ctx, tape.constant(odd)).unwrap_err();
    assert!(matches!(err, Error::OddLength { axis: 2, len: 9, .. }));
}

#[test]
fn fourier_unit_with_identity_conv_is_identity() {
    let mut b = Builder::new(1);
    let fu = FourierUnit::new(&mut b, "fu", 3).unwrap();
    let mut store = b.finish();
    *store.get_mut(fu.conv.weight) = Tensor::from_fn(&[6, 6, 1, 1], |i| if i / 6 == i % 6 { 1.0 } else { 0.0 });
    let x = randn(&[2, 3, 16, 5], 3);
    let y = run(&mut store, BatchNormMode::Train, &x, |ctx, x| fu.forward_bypassed(ctx, x));
    assert!(y.max_abs_diff(&x) < 1e-10);
}

#[test]
fn fourier_unit_jacobian_is_dense_in_frequency_and_local_in_time() {
    let mut b = Builder::new(5);
    let fu = FourierUnit::new(&mut b, "fu", 2).unwrap();
    let mut store = b.finish();
    store.mark_stats_tracked();
    let (c, f, t) = (2, 8, 4);
    let x = randn(&[1, c, f, t], 6);
    let store = RefCell::new(store);
    let jac = jacobian(
        |tape, x| {
            let mut s = store.borrow_mut();
            let mut ctx = s.ctx(tape, BatchNormMode::Eval, false);
            fu.forward(&mut ctx, x)
        },
        &x,
    )
    .unwrap();
    let p = frequency_profile(&[jac], c, c, f, t, 1e-12).unwrap();
    assert_eq!(p.time_reach, 0);
    assert_eq!(p.cross_frequency_density, 1.0);
    assert_eq!(p.bandwidth, f - 1);
}

#[test]
fn channel_allocation() {
    assert_eq!(split_channels(32, 0.75), (8, 24));
    assert_eq!(split_channels(64, 0.75), (16, 48));
    assert_eq!(split_channels(5, 0.5), (2, 3));
    assert_eq!(split_channels(7, 0.0), (7, 0));
    assert_eq!(split_channels(7, 1.0), (0, 7));
}

#[test]
fn zero_alpha_is_plain_conv_bn_relu() {
    let mut b = Builder::new(2);
    let layer = Ffc::new(&mut b, "ffc", FfcConfig::new(6, 0.0)).unwrap();
    assert!(layer.lg.is_none() && layer.gl.is_none() && layer.gg.is_none() && layer.bn_global.is_none());
    let mut store = b.finish();
    let x = randn(&[2, 6, 8, 5], 3);
    let y = run(&mut store, BatchNormMode::Train, &x, |ctx, x| layer.forward_cat(ctx, x));
    let w = store.get(layer.ll.as_ref().unwrap().weight).clone();
    let mut plain = ParamStore::new();
    let gamma = plain.add("g", Tensor::ones(&[6])).unwrap();
    let beta = plain.add("b", Tensor::zeros(&[6])).unwrap();
    let stats = plain.add_stats("s", 6).unwrap();
    let tape = Tape::new();
    let mut ctx = plain.ctx(&tape, BatchNormMode::Train, false);
    let c = conv2d(tape.constant(x.clone()), tape.constant(w), None, (1, 1), (1, 1), 1).unwrap();
    let (g, bt) = (ctx.param(gamma), ctx.param(beta));
    let z = c.batch_norm(g, bt, ctx.stats_mut(stats), BatchNormMode::Train).unwrap().relu();
    assert!(z.value().max_abs_diff(&y) < 1e-12);
}

#[test]
fn split_mismatch_is_an_error() {
    let mut b = Builder::new(2);
    let layer = Ffc::new(&mut b, "ffc", FfcConfig::new(8, 0.5)).unwrap();
    let mut store = b.finish();
    let tape = Tape::new();
    let mut ctx = store.ctx(&tape, BatchNormMode::Train, false);
    let x = Branches {
        local: Some(tape.constant(Tensor::zeros(&[1, 3, 4, 4]))),
        global: Some(tape.constant(Tensor::zeros(&[1, 4, 4, 4]))),
    };
    assert!(matches!(layer.forward(&mut ctx, x), Err(Error::AxisMismatch { axis: 1, expected: 4, got: 3, .. })));
}

#[test]
fn circular_time_shift_equivariance() {
    let mut b = Builder::new(9);
    let block = FfcBlock::new(&mut b, "blk", 8, 0.5, GlobalKind::Fourier).unwrap();
    let mut store = b.finish();
    let t = 7;
    let x = randn(&[2, 8, 8, t], 10);
    let shift = 3;
    let shifted = Tensor::from_fn(x.shape(), |i| {
        let (row, tt) = (i / t, i % t);
        x.data()[row * t + (tt + t - shift) % t]
    });
    let fwd = |store: &mut ParamStore, x: &Tensor| {
        let tape = Tape::new();
        let mut ctx = store.ctx(&tape, BatchNormMode::Train, false);
        ctx.time_pad = TimePad::Circular;
        let y = block.forward_cat(&mut ctx, tape.constant(x.clone())).unwrap().value();
        (*y).clone()
    };
    let y = fwd(&mut store, &x);
    let ys = fwd(&mut store, &shifted);
    let expected = Tensor::from_fn(y.shape(), |i| {
        let (row, tt) = (i / t, i % t);
        y.data()[row * t + (tt + t - shift) % t]
    });
    assert!(ys.max_abs_diff(&expected) < 1e-9);
}

#[test]
fn block_with_zeroed_final_convs_is_identity() {
    let mut b = Builder::new(4);
    let block = FfcBlock::new(&mut b, "blk", 8, 0.75, GlobalKind::Fourier).unwrap();
    let mut store = b.finish();
    let last = &block.second;
    let mut ids = vec![];
    for c in [&last.ll, &last.lg, &last.gl].into_iter().flatten() {
        ids.push(c.weight);
    }
    ids.push(last.gg.as_ref().unwrap().expand.weight);
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = Tensor::zeros(&shape);
    }
    let x = randn(&[2, 8, 8, 4], 1);
    let y = run(&mut store, BatchNormMode::Train, &x, |ctx, x| block.forward_cat(ctx, x));
    assert_eq!(y, x);
}

#[test]
fn block_parameter_count_matches_closed_form() {
    // C = 64, alpha = 0.75: C_l = 16, C_g = 48, half-width h = 24.
    let (cl, cg, h) = (16usize, 48usize, 24usize);
    let ffc = 9 * cl * cl + 9 * cl * cg + 9 * cg * cl // ll, lg, gl
        + cg * h + 2 * h // reduce + bn
        + (2 * h) * (2 * h) + 2 * (2 * h) // spectral 1x1 + bn
        + h * cg // expand
        + 2 * cl + 2 * cg; // output bns
    assert_eq!(ffc, 21008);
    let mut b = Builder::new(0);
    FfcBlock::new(&mut b, "blk", 64, 0.75, GlobalKind::Fourier).unwrap();
    assert_eq!(b.finish().count(), 2 * ffc);
}

#[test]
fn fourier_unit_gradients() {
    let mut b = Builder::new(11);
    let fu = FourierUnit::new(&mut b, "fu", 2).unwrap();
    let store = RefCell::new(b.finish());
    for seed in 0..5 {
        let x = randn(&[2, 2, 8, 3], 100 + seed);
        let probe = randn(&[2, 2, 8, 3], 200 + seed);
        let err = grad_check(
            |tape, x| {
                let mut s = store.borrow_mut();
                let mut ctx = s.ctx(tape, BatchNormMode::Train, false);
                Ok(fu.forward(&mut ctx, x)?.mul_const(&probe)?.sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
    let probe = randn(&[2, 2, 8, 3], 7);
    let x = randn(&[2, 2, 8, 3], 8);
    let err = grad_check_params(
        &mut store.borrow_mut(),
        BatchNormMode::Train,
        |ctx| {
            let x = ctx.tape().constant(x.clone());
            fu.forward(ctx, x)?.mul_const(&probe).map(|v| v.sum())
        },
        1e-5,
        usize::MAX,
    )
    .unwrap();
    assert!(err < 1e-6, "params: {err}");
}

#[test]
fn two_block_stack_gradients() {
    let mut b = Builder::new(12);
    let blocks: Vec<FfcBlock> = (0..2)
        .map(|i| FfcBlock::new(&mut b, &format!("b{i}"), 4, 0.5, GlobalKind::Fourier).unwrap())
        .collect();
    let store = RefCell::new(b.finish());
    let probe = randn(&[2, 4, 8, 3], 1);
    let x = randn(&[2, 4, 8, 3], 2);
    let err = grad_check(
        |tape, x| {
            let mut s = store.borrow_mut();
            let mut ctx = s.ctx(tape, BatchNormMode::Train, false);
            let mut h = x;
            for blk in &blocks {
                h = blk.forward_cat(&mut ctx, h)?;
            }
            Ok(h.mul_const(&probe)?.sum())
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "input: {err}");
    let err = grad_check_params(
        &mut store.borrow_mut(),
        BatchNormMode::Train,
        |ctx| {
            let mut h = ctx.tape().constant(x.clone());
            for blk in &blocks {
                h = blk.forward_cat(ctx, h)?;
            }
            Ok(h.mul_const(&probe)?.sum())
        },
        1e-5,
        6,
    )
    .unwrap();
    assert!(err < 1e-6, "params: {err}");
}

fn layer_profile(global: GlobalKind) -> FrequencyProfile {
    let mut b = Builder::new(21);
    let layer = Ffc::new(&mut b, "ffc", FfcConfig::new(8, 0.75).with_global(global)).unwrap();
    let mut store = b.finish();
    store.mark_stats_tracked();
    let (c, f, t) = (8, 16, 6);
    let store = RefCell::new(store);
    let jacs: Vec<Tensor> = (0..4)
        .map(|seed| {
            jacobian(
                |tape, x| {
                    let mut s = store.borrow_mut();
                    let mut ctx = s.ctx(tape, BatchNormMode::Eval, false);
                    layer.forward_cat(&mut ctx, x)
                },
                &randn(&[1, c, f, t], 22 + seed),
            )
            .unwrap()
        })
        .collect();
    frequency_profile(&jacs, c, c, f, t, 1e-12).unwrap()
}

#[test]
fn ffc_layer_couples_all_frequencies_and_ablation_is_banded() {
    let ffc = layer_profile(GlobalKind::Fourier);
    assert!(ffc.cross_frequency_density >= 0.95, "{ffc:?}");
    let abl = layer_profile(GlobalKind::Conv);
    assert!(abl.bandwidth <= 1, "{abl:?}");
    assert!(abl.time_reach <= 1);
}

#[test]
fn same_seed_builds_identical_layers() {
    let outs: Vec<Tensor> = (0..2)
        .map(|_| {
            let mut b = Builder::new(33);
            let blk = FfcBlock::new(&mut b, "blk", 8, 0.75, GlobalKind::Fourier).unwrap();
            let mut store = b.finish();
            run(&mut store, BatchNormMode::Train, &randn(&[1, 8, 16, 4], 1), |ctx, x| blk.forward_cat(ctx, x))
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
}
