//! Named parameter storage, forward contexts, and the basic layers shared by
//! generators and discriminators.

mod layers;

pub use layers::{BatchNorm, Conv1d, Conv2d, ConvTranspose2d};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Gradients, RunningStats, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedStats {
    pub name: String,
    pub stats: RunningStats,
}

/// Ordered trainable tensors plus batch-norm running statistics, addressed
/// by unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    stats: Vec<NamedStats>,
    index: HashMap<String, usize>,
    stats_index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> Result<StatsId> {
        let name = name.into();
        if self.stats_index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate statistics name {name}")));
        }
        self.stats_index.insert(name.clone(), self.stats.len());
        self.stats.push(NamedStats {
            name,
            stats: RunningStats::new(channels),
        });
        Ok(StatsId(self.stats.len() - 1))
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn stats(&self) -> &[NamedStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [NamedStats] {
        &mut self.stats
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.params[i].value)
    }

    pub fn stats_by_name_mut(&mut self, name: &str) -> Option<&mut RunningStats> {
        let i = *self.stats_index.get(name)?;
        Some(&mut self.stats[i].stats)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Marks every running-statistics buffer as tracked without changing it.
    /// Freshly initialized models then run in eval mode with identity
    /// statistics (mean 0, variance 1).
    pub fn mark_stats_tracked(&mut self) {
        for s in &mut self.stats {
            s.stats.tracked = s.stats.tracked.max(1);
        }
    }

    /// Binds parameters onto `tape` for one forward pass.
    pub fn ctx<'t, 's>(&'s mut self, tape: &'t Tape, mode: BatchNormMode, trainable: bool) -> Ctx<'t, 's> {
        Ctx {
            tape,
            bound: vec![None; self.params.len()],
            params: &self.params,
            stats: &mut self.stats,
            trainable,
            mode,
            time_pad: TimePad::Zero,
        }
    }
}

/// How convolutions pad the time axis (axis 3).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimePad {
    Zero,
    /// Wrap-around padding, which makes stride-1 layers exactly
    /// equivariant to circular time shifts.
    Circular,
}

/// One forward pass over a [`ParamStore`]: parameters are bound lazily as
/// tape leaves (or constants when not trainable) and batch-norm layers
/// update the store's running statistics in train mode.
pub struct Ctx<'t, 's> {
    tape: &'t Tape,
    params: &'s [Param],
    stats: &'s mut [NamedStats],
    bound: Vec<Option<Var<'t>>>,
    trainable: bool,
    pub mode: BatchNormMode,
    pub time_pad: TimePad,
}

impl<'t, 's> Ctx<'t, 's> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn param(&mut self, id: ParamId) -> Var<'t> {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let value = self.params[id.0].value.clone();
        let v = if self.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn stats_mut(&mut self, id: StatsId) -> &mut RunningStats {
        &mut self.stats[id.0].stats
    }

    /// Releases the store, keeping the parameter bindings for gradient
    /// lookup after backward.
    pub fn finish(self) -> Bindings<'t> {
        Bindings { vars: self.bound }
    }
}

/// Parameter variables bound during one forward pass.
pub struct Bindings<'t> {
    vars: Vec<Option<Var<'t>>>,
}

impl<'t> Bindings<'t> {
    /// Gradient per parameter, zero for parameters unused in the pass.
    pub fn grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.params())
            .map(|(v, p)| match v.and_then(|v| grads.get(v)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value.shape()),
            })
            .collect()
    }
}

/// Builds a [`ParamStore`] with hierarchical names and seeded initialization.
pub struct Builder {
    pub store: ParamStore,
    pub rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    /// Runs `f` with `name` pushed onto the name prefix.
    pub fn scope<T>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.prefix.push(name.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn qualified(&self, leaf: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    pub fn param(&mut self, leaf: &str, value: Tensor) -> Result<ParamId> {
        let name = self.qualified(leaf);
        self.store.add(name, value)
    }

    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in_uniform(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Tensor::uniform(shape, bound, &mut self.rng);
        self.param(leaf, value)
    }

    pub fn stats(&mut self, leaf: &str, channels: usize) -> Result<StatsId> {
        let name = self.qualified(leaf);
        self.store.add_stats(name, channels)
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

/// Central finite-difference check of the parameter gradients of a scalar
/// loss built by `f`. At most `max_per_tensor` evenly spaced coordinates of
/// each parameter are probed. Returns the maximum relative error as in
/// [`crate::tensor::grad_check`].
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    mode: BatchNormMode,
    f: F,
    eps: f64,
    max_per_tensor: usize,
) -> Result<f64>
where
    F: for<'t, 's> Fn(&mut Ctx<'t, 's>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let mut ctx = store.ctx(&tape, mode, true);
        let loss = f(&mut ctx)?;
        let binds = ctx.finish();
        let grads = tape.backward(loss)?;
        binds.grads(&grads, store)
    };
    let eval = |store: &mut ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let mut ctx = store.ctx(&tape, mode, false);
        Ok(f(&mut ctx)?.item())
    };
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        let n = grad.numel();
        let step = n.div_ceil(max_per_tensor.max(1)).max(1);
        for j in (0..n).step_by(step) {
            let orig = store.params[p].value.data()[j];
            store.params[p].value.data_mut()[j] = orig + eps;
            let plus = eval(store)?;
            store.params[p].value.data_mut()[j] = orig - eps;
            let minus = eval(store)?;
            store.params[p].value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max((grad.data()[j] - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
