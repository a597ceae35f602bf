//! Finite-difference audit of every differentiable operation and of the
//! composite paths built from them.
//!
//! Each check builds a scalar from the operation's output by contracting it
//! with a fixed random tensor, so every output coordinate contributes to the
//! gradient. Inputs are kept away from the kinks of `relu`, `abs` and the
//! log floor, where central differences are meaningless.

use std::cell::RefCell;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ffc::{FfcBlock, FourierUnit, GlobalKind};
use crate::models::{Generator, ModelConfig};
use crate::nn::{grad_check_params, Builder, ParamStore};
use crate::spectral::{istft_var, log_mel_var, stft_var, MelParams, StftParams};
use crate::tensor::fft::{irfft_cat, irfft_var, rfft_cat, rfft_var};
use crate::tensor::ops::{conv1d, conv2d, conv_transpose2d};
use crate::tensor::{grad_check_many, BatchNormMode, ComplexVar, RunningStats, Tensor, Var};
use crate::training::{discriminator_loss, generator_loss, Discriminators, LossWeights, MelLoss};

/// Relative-error threshold for a passing check.
pub const AUDIT_TOL: f64 = 1e-6;
// Small enough that the discriminators' leaky-relu kinks are rarely straddled.
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct AuditEntry {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub seconds: f64,
}

impl AuditEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < AUDIT_TOL
    }
}

type Check = fn() -> Result<f64>;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Gaussian values pushed at least `gap` away from zero.
fn off_zero(shape: &[usize], seed: u64, gap: f64) -> Tensor {
    randn(shape, seed).map(|v| v.signum() * (gap + v.abs()))
}

fn contract<'t>(v: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let w = randn(&v.shape(), seed ^ 0xc0ffee);
    Ok(v.mul_const(&w)?.sum())
}

fn unary<F>(x: Tensor, f: F) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|_, v| contract(f(v[0])?, 1), &[x], EPS)
}

fn binary<F>(a: Tensor, b: Tensor, f: F) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|_, v| contract(f(v[0], v[1])?, 2), &[a, b], EPS)
}

fn batch_norm(mode: BatchNormMode) -> Result<f64> {
    let mut stats = RunningStats::new(3);
    stats.mean = vec![0.3, -0.2, 0.1];
    stats.var = vec![1.5, 0.7, 2.0];
    stats.tracked = 1;
    let stats = RefCell::new(stats);
    let inputs = [randn(&[2, 3, 4, 5], 11), off_zero(&[3], 12, 0.5), randn(&[3], 13)];
    grad_check_many(
        |_, v| {
            let y = v[0].batch_norm(v[1], v[2], &mut stats.borrow_mut(), mode)?;
            contract(y, 3)
        },
        &inputs,
        EPS,
    )
}

fn log_floor() -> Result<f64> {
    // mostly above the floor, with a few entries deep in the clamped region
    let x = Tensor::from_fn(&[4, 6], |i| if i % 7 == 3 { 1e-5 } else { 0.05 + (i as f64 * 0.37).sin().abs() });
    unary(x, |v| Ok(v.log_floor(1e-3)))
}

fn l1_target(shape: &[usize], x: &Tensor) -> Tensor {
    x.zip_map(&off_zero(shape, 99, 0.1), |a, d| a + d)
}

fn tiny_mel() -> (MelParams, StftParams) {
    let mel = MelParams {
        n_mels: 12,
        ..MelParams::default()
    };
    (mel, StftParams::new(64, 16).expect("valid stft"))
}

fn param_and_input<F>(store: ParamStore, x: Tensor, f: F) -> Result<f64>
where
    F: for<'t, 's> Fn(&mut crate::nn::Ctx<'t, 's>, Var<'t>) -> Result<Var<'t>>,
{
    let store = RefCell::new(store);
    let wrt_input = grad_check_many(
        |tape, v| {
            let mut s = store.borrow_mut();
            let mut ctx = s.ctx(tape, BatchNormMode::Train, false);
            contract(f(&mut ctx, v[0])?, 4)
        },
        std::slice::from_ref(&x),
        EPS,
    )?;
    let mut store = store.into_inner();
    let wrt_params = grad_check_params(
        &mut store,
        BatchNormMode::Train,
        |ctx| {
            let xv = ctx.tape().constant(x.clone());
            contract(f(ctx, xv)?, 4)
        },
        EPS,
        usize::MAX,
    )?;
    Ok(wrt_input.max(wrt_params))
}

fn fourier_unit() -> Result<f64> {
    let mut b = Builder::new(21);
    let fu = FourierUnit::new(&mut b, "fu", 4)?;
    param_and_input(b.finish(), randn(&[2, 4, 8, 5], 22), |ctx, x| fu.forward(ctx, x))
}

fn ffc_block(global: GlobalKind) -> Result<f64> {
    let mut b = Builder::new(31);
    let blk = FfcBlock::new(&mut b, "blk", 8, 0.5, global)?;
    param_and_input(b.finish(), randn(&[2, 8, 8, 4], 32), |ctx, x| blk.forward_cat(ctx, x))
}

const WAVE_LEN: usize = 1024;

fn tiny_gan() -> Result<(Generator, Discriminators, MelLoss, Tensor, Tensor)> {
    let (mel, stft) = tiny_mel();
    let gen = Generator::new(ModelConfig::ffc_ae(4, 1, 0.5).with_seed(41), stft)?;
    let disc = Discriminators::new(3, 42)?;
    let noisy = randn(&[1, WAVE_LEN], 43).map(|v| 0.3 * v);
    let clean = randn(&[1, WAVE_LEN], 44).map(|v| 0.3 * v);
    Ok((gen, disc, MelLoss::new(mel, stft)?, noisy, clean))
}

fn generator_loss_check() -> Result<f64> {
    let (mut gen, disc, mel, noisy, clean) = tiny_gan()?;
    let weights = LossWeights::default();
    let net = gen.net.clone();
    let dstore = RefCell::new(disc.store);
    grad_check_params(
        &mut gen.store,
        BatchNormMode::Train,
        |ctx| {
            let tape = ctx.tape();
            let fake = net.forward_wave(ctx, tape.constant(noisy.clone()))?;
            let mut ds = dstore.borrow_mut();
            let mut dctx = ds.ctx(tape, BatchNormMode::Train, false);
            let real = tape.constant(clean.clone());
            Ok(generator_loss(&disc.net, &mut dctx, fake, real, &weights, &mel)?.total)
        },
        EPS,
        4,
    )
}

fn discriminator_loss_check() -> Result<f64> {
    let (_, mut disc, _, noisy, clean) = tiny_gan()?;
    let net = disc.net.clone();
    grad_check_params(
        &mut disc.store,
        BatchNormMode::Train,
        |ctx| {
            let tape = ctx.tape();
            discriminator_loss(&net, ctx, tape.constant(noisy.clone()), tape.constant(clean.clone()))
        },
        EPS,
        4,
    )
}

fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("add", || binary(randn(&[3, 4], 1), randn(&[3, 4], 2), |a, b| a.add(b))),
        ("sub", || binary(randn(&[3, 4], 1), randn(&[3, 4], 2), |a, b| a.sub(b))),
        ("mul", || binary(randn(&[3, 4], 1), randn(&[3, 4], 2), |a, b| a.mul(b))),
        ("mul_const", || unary(randn(&[3, 4], 1), |v| v.mul_const(&randn(&[3, 4], 5)))),
        ("scale", || unary(randn(&[3, 4], 1), |v| Ok(v.scale(-1.7)))),
        ("neg", || unary(randn(&[3, 4], 1), |v| Ok(v.neg()))),
        ("add_scalar", || unary(randn(&[3, 4], 1), |v| Ok(v.add_scalar(0.4)))),
        ("square", || unary(randn(&[3, 4], 1), |v| Ok(v.square()))),
        ("relu", || unary(off_zero(&[3, 4], 1, 0.05), |v| Ok(v.relu()))),
        ("leaky_relu", || unary(off_zero(&[3, 4], 1, 0.05), |v| Ok(v.leaky_relu(0.2)))),
        ("log_floor", log_floor),
        ("magnitude", || binary(randn(&[3, 4], 1), randn(&[3, 4], 2), |a, b| Var::magnitude(a, b))),
        ("sum", || unary(randn(&[3, 4], 1), |v| Ok(v.sum()))),
        ("mean", || unary(randn(&[3, 4], 1), |v| Ok(v.mean()))),
        ("l1", || {
            let x = randn(&[3, 4], 1);
            let t = l1_target(&[3, 4], &x);
            binary(x, t, |a, b| a.l1(b))
        }),
        ("mse", || binary(randn(&[3, 4], 1), randn(&[3, 4], 2), |a, b| a.mse(b))),
        ("reshape", || unary(randn(&[3, 4], 1), |v| v.reshape(&[2, 6]))),
        ("concat", || binary(randn(&[2, 3, 4], 1), randn(&[2, 2, 4], 2), |a, b| Var::concat(&[a, b], 1))),
        ("split", || {
            unary(randn(&[2, 5, 3], 1), |v| {
                let parts = v.split(&[2, 3], 1)?;
                parts[0].sum().scale(0.5).add(contract(parts[1], 6)?)
            })
        }),
        ("slice", || unary(randn(&[2, 7, 3], 1), |v| v.slice(1, 2, 4))),
        ("pad", || unary(randn(&[2, 3, 4], 1), |v| v.pad(2, 1, 2))),
        ("pad_circular", || unary(randn(&[2, 3, 4], 1), |v| v.pad_circular(2, 2, 1))),
        ("avg_pool_last", || unary(randn(&[2, 3, 12], 1), |v| v.avg_pool_last(3))),
        ("linear_along", || unary(randn(&[2, 5, 3], 1), |v| v.linear_along(&randn(&[4, 5], 7), 1))),
        ("batch_norm_train", || batch_norm(BatchNormMode::Train)),
        ("batch_norm_eval", || batch_norm(BatchNormMode::Eval)),
        ("conv2d", || {
            let inputs = [randn(&[2, 4, 7, 6], 1), randn(&[6, 2, 3, 3], 2), randn(&[6], 3)];
            grad_check_many(
                |_, v| contract(conv2d(v[0], v[1], Some(v[2]), (2, 1), (1, 1), 2)?, 8),
                &inputs,
                EPS,
            )
        }),
        ("conv_transpose2d", || {
            let inputs = [randn(&[2, 3, 4, 5], 1), randn(&[3, 2, 4, 3], 2), randn(&[2], 3)];
            grad_check_many(
                |_, v| contract(conv_transpose2d(v[0], v[1], Some(v[2]), (2, 1), (1, 1))?, 8),
                &inputs,
                EPS,
            )
        }),
        ("conv1d", || {
            let inputs = [randn(&[2, 4, 33], 1), randn(&[4, 2, 9], 2), randn(&[4], 3)];
            grad_check_many(
                |_, v| contract(conv1d(v[0], v[1], Some(v[2]), 4, 4, 2)?, 8),
                &inputs,
                EPS,
            )
        }),
        ("rfft_cat", || unary(randn(&[2, 3, 8, 5], 1), |v| rfft_cat(v, 2, 1))),
        ("irfft_cat", || unary(randn(&[2, 6, 5, 5], 1), |v| irfft_cat(v, 2, 1, 8))),
        ("rfft_var", || {
            unary(randn(&[3, 16], 1), |v| {
                let z = rfft_var(v, 1)?;
                contract(z.re, 9)?.add(contract(z.im, 10)?)
            })
        }),
        ("irfft_var", || {
            binary(randn(&[3, 9], 1), randn(&[3, 9], 2), |re, im| {
                irfft_var(ComplexVar { re, im }, 1, 16)
            })
        }),
        ("stft", || unary(randn(&[2, 64], 1), |v| stft_var(v, StftParams::new(16, 4)?))),
        ("istft", || {
            let p = StftParams::new(16, 4).expect("valid stft");
            let shape = [2, 2, p.n_bins(), p.n_frames(64)];
            unary(randn(&shape, 1), move |v| istft_var(v, p, 64))
        }),
        ("log_mel", || {
            let (mel, stft) = tiny_mel();
            unary(randn(&[1, 256], 1), move |v| log_mel_var(v, &mel, stft))
        }),
        ("fourier_unit", fourier_unit),
        ("ffc_block", || ffc_block(GlobalKind::Fourier)),
        ("ffc_block_ablated", || ffc_block(GlobalKind::Conv)),
        ("generator_loss", generator_loss_check),
        ("discriminator_loss", discriminator_loss_check),
    ]
}

/// Names of all checks, in run order.
pub fn audit_names() -> Vec<&'static str> {
    checks().into_iter().map(|(n, _)| n).collect()
}

/// Runs every check whose name contains `filter` (all when `None`).
pub fn run_audit(filter: Option<&str>) -> Result<Vec<AuditEntry>> {
    let mut out = Vec::new();
    for (name, check) in checks() {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let max_rel_err = check()?;
        out.push(AuditEntry {
            name,
            max_rel_err,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("audit {name}: {max_rel_err:.3e}");
    }
    Ok(out)
}
