use super::config::{Head, ModelConfig};
use crate::error::{Error, Result};
use crate::ffc::{split_channels, Branches, FfcBlock};
use crate::nn::{BatchNorm, Builder, Conv2d, ConvTranspose2d, Ctx, ParamStore};
use crate::spectral::{istft_var, stft_var, StftParams};
use crate::tensor::{BatchNormMode, Tape, Tensor, Var};

#[derive(Clone, Debug)]
struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBnRelu {
    fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.conv.forward(ctx, x)?;
        Ok(self.bn.forward(ctx, h)?.relu())
    }
}

#[derive(Clone, Debug)]
struct UpBnRelu {
    conv: ConvTranspose2d,
    bn: BatchNorm,
}

impl UpBnRelu {
    fn new(b: &mut Builder, name: &str, cin: usize, cout: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Self {
                conv: ConvTranspose2d::new(b, "conv", cin, cout, (4, 4), (2, 2), (1, 1), false)?,
                bn: BatchNorm::new(b, "bn", cout)?,
            })
        })
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.conv.forward(ctx, x)?;
        Ok(self.bn.forward(ctx, h)?.relu())
    }
}

fn conv_bn_relu(
    b: &mut Builder,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
) -> Result<ConvBnRelu> {
    b.scope(name, |b| {
        Ok(ConvBnRelu {
            conv: Conv2d::new(b, "conv", cin, cout, (k, k), (stride, stride), (k / 2, k / 2), false)?,
            bn: BatchNorm::new(b, "bn", cout)?,
        })
    })
}

/// A stack of residual blocks sharing one channel split.
#[derive(Clone, Debug)]
struct Stage {
    local: usize,
    blocks: Vec<FfcBlock>,
}

impl Stage {
    fn new(b: &mut Builder, cfg: &ModelConfig, width: usize, alpha: f64, n: usize) -> Result<Self> {
        let blocks = (0..n)
            .map(|i| FfcBlock::new(b, &format!("block{i}"), width, alpha, cfg.kind.global()))
            .collect::<Result<_>>()?;
        Ok(Self {
            local: split_channels(width, alpha).0,
            blocks,
        })
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        if self.blocks.is_empty() {
            return Ok(x);
        }
        let mut h = Branches::split(x, self.local)?;
        for blk in &self.blocks {
            h = blk.forward(ctx, h)?;
        }
        h.merge()
    }
}

#[derive(Clone, Debug)]
struct Ae {
    stem: ConvBnRelu,
    down: ConvBnRelu,
    stage: Stage,
    up: UpBnRelu,
}

#[derive(Clone, Debug)]
struct Level {
    down: ConvBnRelu,
    stage: Stage,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    merge: Option<ConvBnRelu>,
    up: UpBnRelu,
}

#[derive(Clone, Debug)]
struct Unet {
    stem: ConvBnRelu,
    levels: Vec<Level>,
    /// Bottom level first.
    decoder: Vec<DecoderLevel>,
}

#[derive(Clone, Debug)]
enum Net {
    Ae(Ae),
    Unet(Unet),
}

/// Channel bookkeeping of one U-Net level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelShape {
    pub level: usize,
    pub alpha: f64,
    /// Width of the level's encoder output (its skip tensor).
    pub width: usize,
    /// Channels entering the level's decoder merge conv (upsampled plus
    /// skip), or `None` at the bottom level where nothing is concatenated.
    pub merged: Option<usize>,
    /// Channels leaving the level's upsampling conv.
    pub up_out: usize,
}

/// Level widths `min(in_ch * 2^i, 8 * in_ch)`.
pub fn unet_levels(cfg: &ModelConfig) -> Vec<LevelShape> {
    let k = cfg.depth;
    let width = |i: usize| (cfg.in_ch << i).min(8 * cfg.in_ch);
    (0..k)
        .map(|i| LevelShape {
            level: i,
            alpha: cfg.alpha[i],
            width: width(i),
            merged: (i + 1 < k).then(|| 2 * width(i)),
            up_out: if i == 0 { cfg.in_ch } else { width(i - 1) },
        })
        .collect()
}

/// Generator topology: layers refer to parameters by id in the companion
/// [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub stft: StftParams,
    body: Net,
    out: Conv2d,
}

/// A spectrogram-to-spectrogram generator with its parameters. The two
/// fields are public so a forward context can borrow the store while the
/// topology is in use.
#[derive(Clone, Debug)]
pub struct Generator {
    pub net: Network,
    pub store: ParamStore,
}

impl Generator {
    pub fn new(config: ModelConfig, stft: StftParams) -> Result<Self> {
        config.validate()?;
        stft.validate()?;
        let mut b = Builder::new(config.seed);
        let io = config.in_channels();
        let c = config.in_ch;
        let body = if config.kind.is_unet() {
            let stem = conv_bn_relu(&mut b, "stem", io, c, 7, 1)?;
            let shapes = unet_levels(&config);
            let mut levels = Vec::new();
            let mut prev = c;
            for s in &shapes {
                levels.push(b.scope(format!("enc{}", s.level), |b| {
                    Ok(Level {
                        down: conv_bn_relu(b, "down", prev, s.width, 3, 2)?,
                        stage: Stage::new(b, &config, s.width, s.alpha, config.n_blocks)?,
                    })
                })?);
                prev = s.width;
            }
            let mut decoder = Vec::new();
            for s in shapes.iter().rev() {
                decoder.push(b.scope(format!("dec{}", s.level), |b| {
                    let merge = match s.merged {
                        Some(m) => Some(conv_bn_relu(b, "merge", m, s.width, 3, 1)?),
                        None => None,
                    };
                    Ok(DecoderLevel {
                        merge,
                        up: UpBnRelu::new(b, "up", s.width, s.up_out)?,
                    })
                })?);
            }
            Net::Unet(Unet { stem, levels, decoder })
        } else {
            let stem = conv_bn_relu(&mut b, "stem", io, c, 7, 1)?;
            let down = conv_bn_relu(&mut b, "down", c, 2 * c, 3, 2)?;
            let stage = b.scope("res", |b| Stage::new(b, &config, 2 * c, config.alpha[0], config.n_blocks))?;
            let up = UpBnRelu::new(&mut b, "up", 2 * c, c)?;
            Net::Ae(Ae { stem, down, stage, up })
        };
        let out = Conv2d::same(&mut b, "out", c, config.out_channels(), 7, true)?;
        let mut store = b.finish();
        // Identity running statistics count as valid estimates, so a fresh
        // model can run in eval mode.
        store.mark_stats_tracked();
        Ok(Self {
            net: Network {
                config,
                stft,
                body,
                out,
            },
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn stft(&self) -> StftParams {
        self.net.stft
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    /// Sets the output convolution's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        for id in [Some(self.net.out.weight), self.net.out.bias].into_iter().flatten() {
            self.store.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Per-parameter table: name, shape, and scalar count.
    pub fn describe(&self) -> Vec<ParamRow> {
        self.store
            .params()
            .iter()
            .map(|p| ParamRow {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                count: p.value.numel(),
            })
            .collect()
    }

    /// One forward pass of [`Network::forward_spec`] on constants.
    pub fn run_spec(&mut self, input: Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let tape = Tape::new();
        let mut ctx = self.store.ctx(&tape, mode, false);
        let y = self.net.forward_spec(&mut ctx, tape.constant(input))?.value();
        Ok((*y).clone())
    }
}

impl Network {
    /// Network body on `B x C_in x F x T` with `F` and `T` multiples of
    /// [`ModelConfig::resolution_multiple`].
    pub fn forward_net<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let m = self.config.resolution_multiple();
        if shape.len() != 4 {
            return Err(Error::RankMismatch {
                op: "generator",
                expected: 4,
                got: shape,
            });
        }
        if shape[1] != self.config.in_channels() {
            return Err(Error::AxisMismatch {
                op: "generator",
                axis: 1,
                expected: self.config.in_channels(),
                got: shape[1],
            });
        }
        for axis in [2, 3] {
            if shape[axis] % m != 0 {
                return Err(Error::invalid(format!(
                    "generator: extent {} on axis {axis} is not a multiple of {m}",
                    shape[axis]
                )));
            }
        }
        let h = match &self.body {
            Net::Ae(ae) => {
                let h = ae.stem.forward(ctx, x)?;
                let h = ae.down.forward(ctx, h)?;
                let h = ae.stage.forward(ctx, h)?;
                ae.up.forward(ctx, h)?
            }
            Net::Unet(u) => {
                let mut h = u.stem.forward(ctx, x)?;
                let mut skips = Vec::with_capacity(u.levels.len());
                for level in &u.levels {
                    h = level.down.forward(ctx, h)?;
                    h = level.stage.forward(ctx, h)?;
                    skips.push(h);
                }
                for (dec, skip) in u.decoder.iter().zip(skips.iter().rev()) {
                    if let Some(merge) = &dec.merge {
                        h = merge.forward(ctx, Var::concat(&[h, *skip], 1)?)?;
                    }
                    h = dec.up.forward(ctx, h)?;
                }
                h
            }
        };
        self.out.forward(ctx, h)
    }

    /// Maps `B x C_in x (n_fft/2 + 1) x T` to `B x 2 x (n_fft/2 + 1) x T`:
    /// the Nyquist row is cropped before the network and restored as zeros,
    /// and time is zero-padded up to the resolution multiple and cropped
    /// after.
    pub fn forward_spec<'t>(&self, ctx: &mut Ctx<'t, '_>, spec: Var<'t>) -> Result<Var<'t>> {
        let shape = spec.shape();
        let bins = self.stft.n_bins();
        if shape.len() != 4 || shape[2] != bins {
            return Err(Error::AxisMismatch {
                op: "generator spectrogram",
                axis: 2,
                expected: bins,
                got: shape.get(2).copied().unwrap_or(0),
            });
        }
        let t = shape[3];
        let m = self.config.resolution_multiple();
        let x = spec.slice(2, 0, bins - 1)?;
        let x = x.pad(3, 0, t.next_multiple_of(m) - t)?;
        let y = self.forward_net(ctx, x)?;
        y.slice(3, 0, t)?.pad(2, 0, 1)
    }

    /// Waveform to waveform (`B x L`) through STFT, the network and iSTFT.
    pub fn forward_wave<'t>(&self, ctx: &mut Ctx<'t, '_>, wave: Var<'t>) -> Result<Var<'t>> {
        if self.config.head != Head::Spectrum {
            return Err(Error::invalid("forward_wave needs a spectrum head"));
        }
        let len = wave.shape()[1];
        let spec = stft_var(wave, self.stft)?;
        let out = self.forward_spec(ctx, spec)?;
        istft_var(out, self.stft, len)
    }

    pub fn unet_levels(&self) -> Option<Vec<LevelShape>> {
        self.config.kind.is_unet().then(|| unet_levels(&self.config))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

/// Renders [`Generator::describe`] rows with a total line.
pub fn describe_table(rows: &[ParamRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}  {:<18}  {:>10}\n", "name", "shape", "params");
    for r in rows {
        let shape = format!("{:?}", r.shape);
        out.push_str(&format!("{:<width$}  {:<18}  {:>10}\n", r.name, shape, r.count));
    }
    let total: usize = rows.iter().map(|r| r.count).sum();
    out.push_str(&format!("{:<width$}  {:<18}  {:>10}\n", "total", "", total));
    out
}
