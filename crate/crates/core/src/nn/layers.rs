use super::{Builder, Ctx, ParamId, StatsId, TimePad};
use crate::error::Result;
use crate::tensor::ops::{conv1d, conv2d, conv_transpose2d};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Conv2d {
    /// Square `k x k` kernel with `k / 2` padding on both axes.
    pub fn same(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Result<Self> {
        Self::new(b, name, cin, cout, (k, k), (1, 1), (k / 2, k / 2), bias)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        bias: bool,
    ) -> Result<Self> {
        b.scope(name, |b| {
            let fan_in = cin * kernel.0 * kernel.1;
            let weight = b.fan_in_uniform("weight", &[cout, cin, kernel.0, kernel.1], fan_in)?;
            let bias = if bias {
                Some(b.fan_in_uniform("bias", &[cout], fan_in)?)
            } else {
                None
            };
            Ok(Self {
                weight,
                bias,
                stride,
                padding,
                groups: 1,
            })
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        let (pf, pt) = self.padding;
        if ctx.time_pad == TimePad::Circular && pt > 0 {
            let x = x.pad_circular(3, pt, pt)?;
            return conv2d(x, w, b, self.stride, (pf, 0), self.groups);
        }
        conv2d(x, w, b, self.stride, self.padding, self.groups)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        bias: bool,
    ) -> Result<Self> {
        b.scope(name, |b| {
            let fan_in = cout * kernel.0 * kernel.1;
            let weight = b.fan_in_uniform("weight", &[cin, cout, kernel.0, kernel.1], fan_in)?;
            let bias = if bias {
                Some(b.fan_in_uniform("bias", &[cout], fan_in)?)
            } else {
                None
            };
            Ok(Self {
                weight,
                bias,
                stride,
                padding,
            })
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        conv_transpose2d(x, w, b, self.stride, self.padding)
    }
}

/// Batch normalization with learned affine parameters.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl BatchNorm {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Self {
                gamma: b.param("gamma", Tensor::ones(&[channels]))?,
                beta: b.param("beta", Tensor::zeros(&[channels]))?,
                stats: b.stats("running", channels)?,
            })
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let mode = ctx.mode;
        x.batch_norm(gamma, beta, ctx.stats_mut(self.stats), mode)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        b.scope(name, |b| {
            let fan_in = cin / groups * kernel;
            Ok(Self {
                weight: b.fan_in_uniform("weight", &[cout, cin / groups, kernel], fan_in)?,
                bias: b.fan_in_uniform("bias", &[cout], fan_in)?,
                stride,
                padding,
                groups,
            })
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        conv1d(x, w, Some(b), self.stride, self.padding, self.groups)
    }
}
