use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub m: Tensor<F>,
    pub v: Tensor<F>,
}

impl<F: Real> Parameter<F> {
    fn new(name: String, kind: ParamKind, shape: &[usize]) -> Self {
        Parameter {
            name,
            kind,
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }
}

/// Ordered collection of parameters owned by one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, shape: &[usize]) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Parameter::new(name, kind, shape));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    pub fn accumulate(&mut self, grads: Gradients<F>) {
        for (id, g) in grads.entries {
            self.params[id.0].grad.add_assign(&g);
        }
    }

    /// Joint L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sum_sq()).sum::<f64>().sqrt()
    }

    /// Snapshot of every parameter value, in store order.
    pub fn values(&self) -> Vec<Tensor<F>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }
}

/// Gradients produced by one reverse pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients<F> {
    pub(crate) entries: Vec<(ParamId, Tensor<F>)>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.entries.iter().map(|(i, t)| (*i, t))
    }

    /// Dense per-parameter view matching the store layout; absent entries are zero.
    pub fn to_dense(&self, store: &ParamStore<F>) -> Vec<Tensor<F>> {
        let mut out: Vec<Tensor<F>> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        for (id, g) in &self.entries {
            out[id.0].add_assign(g);
        }
        out
    }
}

/// Draw every weight i.i.d. from N(0, sigma^2); zero every bias.
pub fn init_parameters<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, sigma: f64, rng: &mut R) -> Result<()> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("sigma: {e}")))?;
    for p in store.iter_mut() {
        match p.kind {
            ParamKind::Weight => {
                for v in p.value.data_mut() {
                    *v = F::lit(normal.sample(rng));
                }
            }
            ParamKind::Bias => p.value.fill(F::zero()),
        }
        p.grad.fill(F::zero());
        p.m.fill(F::zero());
        p.v.fill(F::zero());
    }
    Ok(())
}
