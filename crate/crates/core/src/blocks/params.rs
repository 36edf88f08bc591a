use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, SeededRng, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameters in registration order. Frozen entries are bound as
/// constants and excluded from trainable counts.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Scalar = f32> {
    names: Vec<String>,
    values: Vec<Tensor<E>>,
    frozen: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), frozen: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>, frozen: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("parameter {name} registered twice")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.frozen.push(frozen);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<E> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| !self.frozen[id.0]).collect()
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<E>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                "param_set",
                format!("{}: {:?} -> {:?}", self.names[id.0], self.values[id.0].shape(), value.shape()),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn trainable_numel(&self) -> usize {
        self.trainable_ids().iter().map(|&id| self.values[id.0].numel()).sum()
    }

    /// Same names and flags at another precision.
    pub fn cast<F: Scalar>(&self) -> ParamStore<F> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|t| t.cast()).collect(),
            frozen: self.frozen.clone(),
            index: self.index.clone(),
        }
    }

    /// Sets every trainable value to `f(name, shape)`.
    pub fn fill_trainable(&mut self, mut f: impl FnMut(&str, &[usize]) -> Option<Tensor<E>>) {
        for i in 0..self.names.len() {
            if self.frozen[i] {
                continue;
            }
            if let Some(t) = f(&self.names[i], self.values[i].shape()) {
                self.values[i] = t;
            }
        }
    }
}

/// Registers parameters with their initial values.
pub struct Builder<'a, E: Scalar> {
    pub store: &'a mut ParamStore<E>,
    pub rng: &'a mut SeededRng,
    pub frozen: bool,
}

impl<'a, E: Scalar> Builder<'a, E> {
    pub fn new(store: &'a mut ParamStore<E>, rng: &'a mut SeededRng) -> Self {
        Self { store, rng, frozen: false }
    }

    pub fn add(&mut self, name: &str, value: Tensor<E>) -> Result<ParamId> {
        self.store.add(name, value, self.frozen)
    }

    /// Normal(0, std) resampled outside two standard deviations.
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let t = Tensor::from_fn(shape, |_| loop {
            let v: f64 = normal.sample(self.rng);
            if v.abs() <= 2.0 * std {
                break E::of(v);
            }
        });
        self.add(name, t)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let t = Tensor::rand_uniform(shape, -bound, bound, self.rng);
        self.add(name, t)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, E::of(v)))
    }
}

/// Parameters bound to a tape for one forward pass.
pub struct Ctx<'t, E: Scalar> {
    pub tape: &'t Tape<E>,
    vars: Vec<Var<'t, E>>,
}

impl<'t, E: Scalar> Ctx<'t, E> {
    /// Trainable parameters become gradient-tracked leaves when `train` is set.
    pub fn bind(tape: &'t Tape<E>, store: &ParamStore<E>, train: bool) -> Self {
        let vars = store
            .ids()
            .map(|id| {
                let v = store.get(id).clone();
                if train && !store.is_frozen(id) {
                    tape.param(v)
                } else {
                    tape.constant(v)
                }
            })
            .collect();
        Self { tape, vars }
    }

    /// Binds trainable parameters to the given variables, in
    /// [`ParamStore::trainable_ids`] order; frozen ones become constants.
    pub fn with_trainable(tape: &'t Tape<E>, store: &ParamStore<E>, trainable: &[Var<'t, E>]) -> Result<Self> {
        let mut given = trainable.iter();
        let mut vars = Vec::with_capacity(store.len());
        for id in store.ids() {
            if store.is_frozen(id) {
                vars.push(tape.constant(store.get(id).clone()));
                continue;
            }
            let v = given.next().ok_or_else(|| {
                Error::Contract(format!("{} trainable variables given, store has more", trainable.len()))
            })?;
            if v.shape() != store.get(id).shape() {
                return Err(Error::shape(
                    "bind",
                    format!("{} is {:?}, variable is {:?}", store.name(id), store.get(id).shape(), v.shape()),
                ));
            }
            vars.push(v.clone());
        }
        if given.next().is_some() {
            return Err(Error::Contract("more trainable variables than parameters".into()));
        }
        Ok(Self { tape, vars })
    }

    pub fn p(&self, id: ParamId) -> &Var<'t, E> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, E>] {
        &self.vars
    }
}
