use crate::error::{Error, Result};
use crate::nn::{Builder, Conv1d, Ctx, ParamStore};
use crate::tensor::Var;

/// Shortest waveform (after pooling) a discriminator accepts: four stride-4
/// layers reduce 256 samples to a single score.
pub const MIN_DISC_LEN: usize = 256;

const SLOPE: f64 = 0.2;

/// (in, out, kernel, stride, groups) per feature layer.
const LAYERS: [(usize, usize, usize, usize, usize); 5] = [
    (1, 16, 15, 1, 1),
    (16, 64, 41, 4, 4),
    (64, 128, 41, 4, 16),
    (128, 256, 41, 4, 32),
    (256, 256, 41, 4, 64),
];

#[derive(Clone, Debug)]
struct Discriminator {
    layers: Vec<Conv1d>,
    out: Conv1d,
    pool: usize,
}

/// Patch scores `B x 1 x L'` and the leaky-relu output of every feature
/// layer, in order.
pub struct DiscOutput<'t> {
    pub score: Var<'t>,
    pub features: Vec<Var<'t>>,
}

/// Topology of `k` identical waveform discriminators; the `i`-th (from 0)
/// sees the input average-pooled by `2^i`.
#[derive(Clone, Debug)]
pub struct DiscNets {
    nets: Vec<Discriminator>,
}

/// Discriminators with their parameters, scoped as `disc{i}.*` in one
/// store.
#[derive(Clone, Debug)]
pub struct Discriminators {
    pub net: DiscNets,
    pub store: ParamStore,
}

impl Discriminators {
    pub fn new(k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("need at least one discriminator"));
        }
        let mut b = Builder::new(seed);
        let mut nets = Vec::with_capacity(k);
        for i in 0..k {
            nets.push(b.scope(format!("disc{i}"), |b| {
                let layers = LAYERS
                    .iter()
                    .enumerate()
                    .map(|(j, &(cin, cout, kernel, stride, groups))| {
                        Conv1d::new(b, &format!("conv{j}"), cin, cout, kernel, stride, kernel / 2, groups)
                    })
                    .collect::<Result<_>>()?;
                Ok(Discriminator {
                    layers,
                    out: Conv1d::new(b, "out", 256, 1, 3, 1, 1, 1)?,
                    pool: 1 << i,
                })
            })?);
        }
        Ok(Self {
            net: DiscNets { nets },
            store: b.finish(),
        })
    }

    pub fn len(&self) -> usize {
        self.net.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net.nets.is_empty()
    }
}

impl DiscNets {
    pub fn feature_layers(&self) -> usize {
        LAYERS.len()
    }

    /// Input length seen by each discriminator.
    pub fn pooled_lengths(&self, len: usize) -> Vec<usize> {
        self.nets.iter().map(|d| len / d.pool).collect()
    }

    /// Runs every discriminator on `wave` (`B x L`).
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, wave: Var<'t>) -> Result<Vec<DiscOutput<'t>>> {
        let shape = wave.shape();
        if shape.len() != 2 {
            return Err(Error::RankMismatch {
                op: "discriminator",
                expected: 2,
                got: shape,
            });
        }
        let x = wave.reshape(&[shape[0], 1, shape[1]])?;
        let mut outs = Vec::with_capacity(self.nets.len());
        for (i, d) in self.nets.iter().enumerate() {
            let len = shape[1] / d.pool;
            if len < MIN_DISC_LEN {
                return Err(Error::invalid(format!(
                    "discriminator {i}: {} samples pool to {len}, below the minimum of {MIN_DISC_LEN}",
                    shape[1]
                )));
            }
            let mut h = x.avg_pool_last(d.pool)?;
            let mut features = Vec::with_capacity(d.layers.len());
            for conv in &d.layers {
                h = conv.forward(ctx, h)?.leaky_relu(SLOPE);
                features.push(h);
            }
            outs.push(DiscOutput {
                score: d.out.forward(ctx, h)?,
                features,
            });
        }
        Ok(outs)
    }
}
