//! Named parameter storage and the Adam optimizer.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn new(i: usize) -> Self {
        ParamId(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) {
        assert_eq!(t.shape(), self.tensors[id.0].shape(), "parameter shape changed");
        self.tensors[id.0] = t.with_requires_grad(true);
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Bit-level fingerprint of the selected parameters.
    pub fn fingerprint(&self, select: impl Fn(ParamId) -> bool) -> u64 {
        let mut h = DefaultHasher::new();
        for id in self.ids().filter(|&id| select(id)) {
            self.names[id.0].hash(&mut h);
            for v in self.tensors[id.0].data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update. Parameters absent from `grads` keep
    /// their values bit-for-bit.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        if lr == 0.0 {
            return;
        }
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        for (id, g) in grads {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let mut data = store.tensors[id.0].data().to_vec();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
            let shape = store.tensors[id.0].shape().to_vec();
            store.tensors[id.0] = Tensor::from_raw(shape, data).with_requires_grad(true);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        use super::super::graph::Graph;
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::new([2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &store);
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::with_params(&store, |_| true);
                let v = g.param(x);
                let sq = g.mul(v, v).unwrap();
                let l = g.sum(sq);
                g.backward(l).unwrap();
                g.param_grads()
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.get(x).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::new([2], vec![0.1, 0.2]).unwrap());
        let before = store.clone();
        let mut opt = Adam::new(AdamConfig::with_lr(0.0), &store);
        opt.step(&mut store, &[(x, Tensor::ones([2]))]);
        assert_eq!(store, before);
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::ones([2]));
        let b = store.add("b", Tensor::ones([2]));
        let fa = store.fingerprint(|id| id == a);
        store.set(b, Tensor::zeros([2]));
        assert_eq!(fa, store.fingerprint(|id| id == a));
        store.set(a, Tensor::zeros([2]));
        assert_ne!(fa, store.fingerprint(|id| id == a));
    }
}
