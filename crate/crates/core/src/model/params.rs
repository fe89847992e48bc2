use mpcgen_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Named learnable tensors, in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Copies every tensor into a fresh graph leaf.
    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }
}

/// Registers parameters with deterministic initialization.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: Vec::new(),
        }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    /// Xavier uniform for a `[fan_in, fan_out]` matrix.
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> usize {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = Tensor::from_fn(&[fan_in, fan_out], |_| self.rng.random_range(-a..a));
        let n = self.full_name(name);
        self.store.push(n, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> usize {
        let dist = Normal::new(0.0, std).expect("std is positive");
        let t = Tensor::from_fn(shape, |_| dist.sample(self.rng));
        let n = self.full_name(name);
        self.store.push(n, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> usize {
        let n = self.full_name(name);
        self.store.push(n, Tensor::full(shape, value))
    }
}
