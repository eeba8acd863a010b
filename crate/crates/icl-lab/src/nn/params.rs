//! Named parameter storage shared by all models.
//!
//! Models hold [`ParamId`] handles; each forward pass binds parameters into
//! the graph with [`ParamStore::var`] (memoized per graph, so fan-out
//! accumulates into a single gradient) and [`ParamStore::harvest_grads`]
//! pulls gradients back out after `backward`.

use crate::rng::Rng;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct Param<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
    /// Set once a backward pass has deposited a gradient; cleared by
    /// `zero_grads`. Lets the optimizer reject half-wired models.
    pub grad_present: bool,
}

pub struct ParamStore<S: Scalar = f32> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<S>, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            trainable,
            grad_present: false,
        });
        ParamId(self.params.len() - 1)
    }

    /// Gaussian init with variance 1/fan_in, the convention for all weight
    /// matrices and kernels here.
    pub fn register_fan_in(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let std = 1.0 / (fan_in as f64).sqrt();
        self.register(name, Tensor::randn(shape, std, rng), true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    /// Bind a parameter into the graph (memoized per graph per parameter).
    pub fn var(&self, g: &mut Graph<S>, id: ParamId) -> Var {
        let p = &self.params[id.0];
        g.leaf_keyed(id.0, &p.value, p.trainable)
    }

    /// Accumulate gradients of all bound parameters out of a swept graph.
    pub fn harvest_grads(&mut self, g: &Graph<S>) {
        for (key, grad) in g.keyed_grads() {
            if let Some(grad) = grad {
                let p = &mut self.params[key];
                debug_assert_eq!(grad.shape(), p.value.shape());
                for (gv, dv) in p.grad.data_mut().iter_mut().zip(grad.data()) {
                    *gv += *dv;
                }
                p.grad_present = true;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(S::ZERO);
            p.grad_present = false;
        }
    }

    /// Freeze every parameter (used for target networks that must never
    /// receive gradients).
    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_accumulate_through_shared_use() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("w", Tensor::new(&[2], vec![1.0, 2.0]), true);
        let mut g = Graph::new();
        let w1 = store.var(&mut g, id);
        let w2 = store.var(&mut g, id);
        let prod = g.mul(w1, w2); // w^2 through the same node
        let loss = g.sum_all(prod);
        g.backward(loss);
        store.harvest_grads(&g);
        assert_eq!(store.get(id).grad.data(), &[2.0, 4.0]);
        assert!(store.get(id).grad_present);
        store.zero_grads();
        assert!(!store.get(id).grad_present);
        assert_eq!(store.get(id).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("frozen", Tensor::new(&[1], vec![3.0]), false);
        let mut g = Graph::new();
        let w = store.var(&mut g, id);
        let sq = g.mul(w, w);
        g.backward(sq);
        store.harvest_grads(&g);
        assert!(!store.get(id).grad_present);
    }
}
