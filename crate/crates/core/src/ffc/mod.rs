//! Fast Fourier convolution: a local branch of ordinary convolutions and a
//! global branch whose Fourier unit acts pointwise on the spectrum taken
//! along the frequency axis (axis 2), so every output frequency sees every
//! input frequency.

mod probe;

pub use probe::{frequency_profile, FrequencyProfile};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Builder, Conv2d, Ctx};
use crate::tensor::fft::{irfft_cat, rfft_cat};
use crate::tensor::Var;

/// Axis along which the Fourier unit transforms.
pub const FREQ_AXIS: usize = 2;

/// What sits at the core of the global→global path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalKind {
    Fourier,
    /// Ablation: a 3x3 conv-bn-relu in place of the Fourier unit.
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfcConfig {
    pub channels_in: usize,
    pub channels_out: usize,
    pub alpha_in: f64,
    pub alpha_out: f64,
    pub kernel: usize,
    pub global: GlobalKind,
}

/// `(local, global)` channel counts with `global = round(alpha * c)`.
pub fn split_channels(c: usize, alpha: f64) -> (usize, usize) {
    let g = ((alpha * c as f64).round() as usize).min(c);
    (c - g, g)
}

impl FfcConfig {
    pub fn new(channels: usize, alpha: f64) -> Self {
        Self {
            channels_in: channels,
            channels_out: channels,
            alpha_in: alpha,
            alpha_out: alpha,
            kernel: 3,
            global: GlobalKind::Fourier,
        }
    }

    pub fn with_global(mut self, global: GlobalKind) -> Self {
        self.global = global;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_in", self.alpha_in), ("alpha_out", self.alpha_out)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidConfig(format!("{name} = {a} must lie in [0, 1]")));
            }
        }
        if self.channels_in == 0 || self.channels_out == 0 {
            return Err(Error::InvalidConfig("FFC channel counts must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }

    pub fn split_in(&self) -> (usize, usize) {
        split_channels(self.channels_in, self.alpha_in)
    }

    pub fn split_out(&self) -> (usize, usize) {
        split_channels(self.channels_out, self.alpha_out)
    }
}

/// A feature map held as its local and global channel groups. An absent
/// branch has zero channels.
#[derive(Clone, Copy, Debug)]
pub struct Branches<'t> {
    pub local: Option<Var<'t>>,
    pub global: Option<Var<'t>>,
}

impl<'t> Branches<'t> {
    /// Splits `x` (`B x C x F x T`) into the first `c_local` channels and
    /// the remaining global channels.
    pub fn split(x: Var<'t>, c_local: usize) -> Result<Self> {
        let c = x.shape()[1];
        if c_local == 0 {
            return Ok(Self { local: None, global: Some(x) });
        }
        if c_local == c {
            return Ok(Self { local: Some(x), global: None });
        }
        let parts = x.split(&[c_local, c - c_local], 1)?;
        Ok(Self {
            local: Some(parts[0]),
            global: Some(parts[1]),
        })
    }

    pub fn merge(self) -> Result<Var<'t>> {
        match (self.local, self.global) {
            (Some(l), Some(g)) => Var::concat(&[l, g], 1),
            (Some(x), None) | (None, Some(x)) => Ok(x),
            (None, None) => Err(Error::invalid("feature map with no channels")),
        }
    }

    fn add(self, other: Self) -> Result<Self> {
        Ok(Self {
            local: add_opt(self.local, other.local)?,
            global: add_opt(self.global, other.global)?,
        })
    }
}

fn add_opt<'t>(a: Option<Var<'t>>, b: Option<Var<'t>>) -> Result<Option<Var<'t>>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a.add(b)?),
        (a, None) => a,
        (None, b) => b,
    })
}

fn channel_check(op: &'static str, x: Option<Var<'_>>, expected: usize) -> Result<()> {
    let got = x.map_or(0, |v| v.shape()[1]);
    if got != expected {
        return Err(Error::AxisMismatch {
            op,
            axis: 1,
            expected,
            got,
        });
    }
    Ok(())
}

/// Real FFT over frequency, real/imaginary parts stacked as channels,
/// 1x1 conv-bn-relu, inverse FFT. Shape preserving on `B x C x F x T`
/// for even `F`.
#[derive(Clone, Debug)]
pub struct FourierUnit {
    pub channels: usize,
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl FourierUnit {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Self {
                channels,
                conv: Conv2d::same(b, "conv", 2 * channels, 2 * channels, 1, false)?,
                bn: BatchNorm::new(b, "bn", 2 * channels)?,
            })
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        self.run(ctx, x, true)
    }

    /// Test hook: the same transform with batch norm and ReLU skipped.
    pub fn forward_bypassed<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        self.run(ctx, x, false)
    }

    fn run<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>, full: bool) -> Result<Var<'t>> {
        channel_check("fourier_unit", Some(x), self.channels)?;
        let f = x.shape()[FREQ_AXIS];
        if f % 2 != 0 {
            return Err(Error::OddLength {
                op: "fourier_unit",
                axis: FREQ_AXIS,
                len: f,
            });
        }
        let mut z = self.conv.forward(ctx, rfft_cat(x, FREQ_AXIS, 1)?)?;
        if full {
            z = self.bn.forward(ctx, z)?.relu();
        }
        irfft_cat(z, FREQ_AXIS, 1, f)
    }
}

#[derive(Clone, Debug)]
enum GlobalCore {
    Fourier(FourierUnit),
    Conv { conv: Conv2d, bn: BatchNorm },
}

/// The global→global path: 1x1 reduction to half width with bn-relu,
/// the core transform, then a 1x1 expansion.
#[derive(Clone, Debug)]
pub struct GlobalPath {
    pub reduce: Conv2d,
    pub bn: BatchNorm,
    core: GlobalCore,
    pub expand: Conv2d,
}

impl GlobalPath {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, kind: GlobalKind) -> Result<Self> {
        let h = cout.div_ceil(2);
        b.scope(name, |b| {
            let reduce = Conv2d::same(b, "reduce", cin, h, 1, false)?;
            let bn = BatchNorm::new(b, "bn", h)?;
            let core = match kind {
                GlobalKind::Fourier => GlobalCore::Fourier(FourierUnit::new(b, "fu", h)?),
                GlobalKind::Conv => GlobalCore::Conv {
                    conv: Conv2d::same(b, "conv", h, h, 3, false)?,
                    bn: BatchNorm::new(b, "conv_bn", h)?,
                },
            };
            let expand = Conv2d::same(b, "expand", h, cout, 1, false)?;
            Ok(Self { reduce, bn, core, expand })
        })
    }

    pub fn fourier_unit(&self) -> Option<&FourierUnit> {
        match &self.core {
            GlobalCore::Fourier(fu) => Some(fu),
            GlobalCore::Conv { .. } => None,
        }
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.reduce.forward(ctx, x)?;
        let h = self.bn.forward(ctx, h)?.relu();
        let h = match &self.core {
            GlobalCore::Fourier(fu) => fu.forward(ctx, h)?,
            GlobalCore::Conv { conv, bn } => {
                let c = conv.forward(ctx, h)?;
                bn.forward(ctx, c)?.relu()
            }
        };
        self.expand.forward(ctx, h)
    }
}

/// One FFC layer:
/// `y_l = relu(bn(ll(x_l) + gl(x_g)))`, `y_g = relu(bn(lg(x_l) + gg(x_g)))`.
#[derive(Clone, Debug)]
pub struct Ffc {
    pub cfg: FfcConfig,
    pub ll: Option<Conv2d>,
    pub lg: Option<Conv2d>,
    pub gl: Option<Conv2d>,
    pub gg: Option<GlobalPath>,
    pub bn_local: Option<BatchNorm>,
    pub bn_global: Option<BatchNorm>,
}

impl Ffc {
    pub fn new(b: &mut Builder, name: &str, cfg: FfcConfig) -> Result<Self> {
        cfg.validate()?;
        let (l_in, g_in) = cfg.split_in();
        let (l_out, g_out) = cfg.split_out();
        let k = cfg.kernel;
        b.scope(name, |b| {
            let conv = |b: &mut Builder, n: &str, cin: usize, cout: usize| -> Result<Option<Conv2d>> {
                if cin > 0 && cout > 0 {
                    Ok(Some(Conv2d::same(b, n, cin, cout, k, false)?))
                } else {
                    Ok(None)
                }
            };
            let ll = conv(b, "ll", l_in, l_out)?;
            let lg = conv(b, "lg", l_in, g_out)?;
            let gl = conv(b, "gl", g_in, l_out)?;
            let gg = if g_in > 0 && g_out > 0 {
                Some(GlobalPath::new(b, "gg", g_in, g_out, cfg.global)?)
            } else {
                None
            };
            let bn_local = if l_out > 0 { Some(BatchNorm::new(b, "bn_l", l_out)?) } else { None };
            let bn_global = if g_out > 0 { Some(BatchNorm::new(b, "bn_g", g_out)?) } else { None };
            Ok(Self {
                cfg,
                ll,
                lg,
                gl,
                gg,
                bn_local,
                bn_global,
            })
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Branches<'t>) -> Result<Branches<'t>> {
        let (l_in, g_in) = self.cfg.split_in();
        channel_check("ffc local", x.local, l_in)?;
        channel_check("ffc global", x.global, g_in)?;
        let apply = |ctx: &mut Ctx<'t, '_>, c: &Option<Conv2d>, v: Option<Var<'t>>| -> Result<Option<Var<'t>>> {
            match (c, v) {
                (Some(c), Some(v)) => Ok(Some(c.forward(ctx, v)?)),
                _ => Ok(None),
            }
        };
        let ll = apply(ctx, &self.ll, x.local)?;
        let gl = apply(ctx, &self.gl, x.global)?;
        let lg = apply(ctx, &self.lg, x.local)?;
        let gg = match (&self.gg, x.global) {
            (Some(p), Some(v)) => Some(p.forward(ctx, v)?),
            _ => None,
        };
        let finish = |ctx: &mut Ctx<'t, '_>, bn: &Option<BatchNorm>, s: Option<Var<'t>>| -> Result<Option<Var<'t>>> {
            match (bn, s) {
                (Some(bn), Some(s)) => Ok(Some(bn.forward(ctx, s)?.relu())),
                _ => Ok(None),
            }
        };
        Ok(Branches {
            local: finish(ctx, &self.bn_local, add_opt(ll, gl)?)?,
            global: finish(ctx, &self.bn_global, add_opt(lg, gg)?)?,
        })
    }

    /// Forward on a channel-concatenated map (local channels first).
    pub fn forward_cat<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let x = Branches::split(x, self.cfg.split_in().0)?;
        self.forward(ctx, x)?.merge()
    }
}

/// `x + FFC2(FFC1(x))`, with the residual added per branch.
#[derive(Clone, Debug)]
pub struct FfcBlock {
    pub first: Ffc,
    pub second: Ffc,
}

impl FfcBlock {
    pub fn new(b: &mut Builder, name: &str, channels: usize, alpha: f64, global: GlobalKind) -> Result<Self> {
        let cfg = FfcConfig::new(channels, alpha).with_global(global);
        b.scope(name, |b| {
            Ok(Self {
                first: Ffc::new(b, "ffc1", cfg)?,
                second: Ffc::new(b, "ffc2", cfg)?,
            })
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Branches<'t>) -> Result<Branches<'t>> {
        let h = self.first.forward(ctx, x)?;
        let h = self.second.forward(ctx, h)?;
        x.add(h)
    }

    pub fn forward_cat<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let x = Branches::split(x, self.first.cfg.split_in().0)?;
        self.forward(ctx, x)?.merge()
    }
}

#[cfg(test)]
mod tests;
