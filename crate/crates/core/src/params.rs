//! Named parameter storage and the per-forward-pass [`Session`] that binds
//! stored parameters to tape variables.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use num_traits::Float;

use crate::error::{bail, Result};
use crate::ops::norm::{BatchNormState, Mode};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    BnGamma,
    BnBeta,
    PreluAlpha,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Weight decay applies to convolution and linear weights only.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::LinearWeight)
    }

    /// BN affine parameters and PReLU slopes.
    pub fn is_norm(self) -> bool {
        matches!(self, ParamKind::BnGamma | ParamKind::BnBeta | ParamKind::PreluAlpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Ordered, uniquely named parameters and buffers of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            bail!(Config, "duplicate parameter name `{name}`");
        }
        self.params.push(Param { name, kind, value });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Element count of trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind.trainable()).map(|p| p.value.len()).sum()
    }

    pub fn count_where(&self, pred: impl Fn(ParamKind) -> bool) -> usize {
        self.params.iter().filter(|p| pred(p.kind)).map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Replaces values by name; every stored name must be present in `values`
    /// with an identical shape.
    pub fn load<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor<T>>) -> Result<()> {
        for p in &mut self.params {
            let Some(v) = lookup(&p.name) else {
                bail!(Data, "checkpoint lacks parameter `{}`", p.name);
            };
            if v.shape() != p.value.shape() {
                bail!(
                    Shape,
                    "parameter `{}` has shape {:?}, checkpoint holds {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                );
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Uniform `±1/√fan_in` draw: Kaiming-uniform with negative slope √5.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
    let bound = 1.0 / Float::sqrt(fan_in.max(1) as f64);
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, data)
}

/// Parameter ids of one batch-norm layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BnIds {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self> {
        let state = BatchNormState::<T>::new(channels);
        Ok(Self {
            gamma: store.push(format!("{prefix}.gamma"), ParamKind::BnGamma, Tensor::full(&[channels], T::one())?)?,
            beta: store.push(format!("{prefix}.beta"), ParamKind::BnBeta, Tensor::zeros(&[channels])?)?,
            running_mean: store.push(
                format!("{prefix}.running_mean"),
                ParamKind::RunningMean,
                Tensor::new(&[channels], state.running_mean)?,
            )?,
            running_var: store.push(
                format!("{prefix}.running_var"),
                ParamKind::RunningVar,
                Tensor::new(&[channels], state.running_var)?,
            )?,
        })
    }
}

/// Shape recorded for a named layer during a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub name: String,
    pub shape: Vec<usize>,
}

enum StoreRef<'s, T> {
    Shared(&'s ParamStore<T>),
    Exclusive(&'s mut ParamStore<T>),
}

impl<T> StoreRef<'_, T> {
    fn get(&self) -> &ParamStore<T> {
        match self {
            StoreRef::Shared(s) => s,
            StoreRef::Exclusive(s) => s,
        }
    }
}

/// One forward pass: owns the tape, lazily binds parameters as leaves and
/// writes batch-norm running statistics back to the store in train mode.
pub struct Session<'s, T> {
    pub graph: Graph<T>,
    store: StoreRef<'s, T>,
    vars: Vec<Option<Var>>,
    mode: Mode,
    track: bool,
    trace: Option<Vec<TraceRow>>,
}

impl<'s, T: Scalar> Session<'s, T> {
    /// Parameters receive gradients in [`Mode::Train`].
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        Self::with_tracking(store, mode, mode == Mode::Train)
    }

    pub fn with_tracking(store: &'s mut ParamStore<T>, mode: Mode, track: bool) -> Self {
        let n = store.len();
        Self {
            graph: Graph::new(),
            store: StoreRef::Exclusive(store),
            vars: vec![None; n],
            mode,
            track,
            trace: None,
        }
    }

    /// Inference pass over a shared store: running statistics are read, never
    /// written, and no parameter is tracked.
    pub fn infer(store: &'s ParamStore<T>) -> Self {
        Self {
            graph: Graph::new(),
            vars: vec![None; store.len()],
            store: StoreRef::Shared(store),
            mode: Mode::Infer,
            track: false,
            trace: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub(crate) fn record(&mut self, name: &str, v: Var) {
        if let Some(t) = &mut self.trace {
            t.push(TraceRow {
                name: name.into(),
                shape: self.graph.shape(v).to_vec(),
            });
        }
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.graph.constant(value)
    }

    /// Tape variable bound to a stored parameter (registered on first use).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let p = self.store.get().get(id);
        let v = self.graph.leaf(p.value.clone(), self.track && p.kind.trainable());
        self.vars[id.0] = Some(v);
        v
    }

    pub fn param_value(&self, id: ParamId) -> &Tensor<T> {
        &self.store.get().get(id).value
    }

    pub fn batch_norm(&mut self, x: Var, ids: &BnIds) -> Result<Var> {
        let gamma = self.param(ids.gamma);
        let beta = self.param(ids.beta);
        let store = self.store.get();
        let mut state = BatchNormState::new(store.get(ids.gamma).value.len());
        state.running_mean = store.get(ids.running_mean).value.data().to_vec();
        state.running_var = store.get(ids.running_var).value.data().to_vec();
        let out = self.graph.batch_norm(x, gamma, beta, &mut state, self.mode)?;
        if let (Mode::Train, StoreRef::Exclusive(store)) = (self.mode, &mut self.store) {
            store
                .get_mut(ids.running_mean)
                .value
                .data_mut()
                .copy_from_slice(&state.running_mean);
            store
                .get_mut(ids.running_var)
                .value
                .data_mut()
                .copy_from_slice(&state.running_var);
        }
        Ok(out)
    }

    /// Tape variable of a parameter if this pass has bound it.
    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }

    /// Gradients of every trainable parameter bound during this pass, in
    /// store order. Parameters the loss does not reach get zeros.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                self.graph
                    .requires_grad(v)
                    .then(|| (ParamId(i), grads.wrt(&self.graph, v)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.push("a.weight", ParamKind::ConvWeight, Tensor::zeros(&[1]).unwrap()).unwrap();
        assert!(s.push("a.weight", ParamKind::Bias, Tensor::zeros(&[1]).unwrap()).is_err());
    }

    #[test]
    fn kaiming_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = kaiming_uniform(&mut rng, &[16, 4, 3, 3], 36).unwrap();
        let bound = 1.0 / 6.0;
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        assert!(t.max_abs() > 0.9 * bound);
    }

    #[test]
    fn running_stats_written_back_in_train_mode_only() {
        let mut store = ParamStore::<f64>::new();
        let ids = BnIds::register(&mut store, "bn", 2).unwrap();
        let x = Tensor::new(&[1, 2, 1, 2], vec![1.0, 3.0, 5.0, 9.0]).unwrap();
        {
            let mut s = Session::new(&mut store, Mode::Infer);
            let xv = s.input(x.clone());
            s.batch_norm(xv, &ids).unwrap();
        }
        assert_eq!(store.get(ids.running_mean).value.data(), &[0.0, 0.0]);
        {
            let mut s = Session::new(&mut store, Mode::Train);
            let xv = s.input(x);
            s.batch_norm(xv, &ids).unwrap();
        }
        let m = store.get(ids.running_mean).value.data();
        assert!((m[0] - 0.2).abs() < 1e-12 && (m[1] - 0.7).abs() < 1e-12);
    }
}
