//! Parameter storage, the two basic layers, and Adam.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Graph, Var};
use crate::tensor::{ConvGeom, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    value: Rc<Tensor>,
    pub frozen: bool,
}

impl ParamEntry {
    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

/// Flat, ordered parameter registry. Names are dotted paths (`sam.block1.conv.w`).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(ParamEntry {
            name,
            value: Rc::new(value),
            frozen: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub(crate) fn value_rc(&self, id: ParamId) -> Rc<Tensor> {
        self.entries[id.0].value.clone()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    /// Mutable access to a parameter value (copy-on-write if a graph still holds it).
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.get(id).shape(),
            value.shape(),
            "shape change for {}",
            self.entries[id.0].name
        );
        self.entries[id.0].value = Rc::new(value);
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Fully connected map over the last axis: `[..., in] → [..., out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (3.0 / in_dim as f64).sqrt();
        let weight = ps.add(format!("{name}.w"), uniform(rng, &[in_dim, out_dim], bound));
        let bias = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[out_dim])));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        let y = g.matmul(x, g.param(self.weight));
        match self.bias {
            Some(b) => g.add(y, g.param(b)),
            None => y,
        }
    }

    /// Sets weight to the identity (requires `in_dim == out_dim`) and bias to zero.
    pub fn set_identity(&self, ps: &mut ParamStore) {
        assert_eq!(self.in_dim, self.out_dim);
        let n = self.in_dim;
        ps.set(
            self.weight,
            Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 }),
        );
        if let Some(b) = self.bias {
            ps.set(b, Tensor::zeros(&[n]));
        }
    }

    pub fn set_zero(&self, ps: &mut ParamStore) {
        ps.set(self.weight, Tensor::zeros(&[self.in_dim, self.out_dim]));
        if let Some(b) = self.bias {
            ps.set(b, Tensor::zeros(&[self.out_dim]));
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let bound = (3.0 / fan_in as f64).sqrt();
        let weight = ps.add(
            format!("{name}.w"),
            uniform(rng, &[out_ch, in_ch, kernel, kernel], bound),
        );
        let bias = ps.add(format!("{name}.b"), Tensor::zeros(&[out_ch]));
        Conv2d {
            weight,
            bias,
            geom: ConvGeom {
                kernel,
                stride,
                pad,
            },
            in_ch,
            out_ch,
        }
    }

    /// 3×3, stride 1, same padding.
    pub fn same3(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::new(ps, name, in_ch, out_ch, 3, 1, 1, rng)
    }

    pub fn pointwise(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::new(ps, name, in_ch, out_ch, 1, 1, 0, rng)
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        g.conv2d(x, g.param(self.weight), Some(g.param(self.bias)), self.geom)
    }

    pub fn set_zero(&self, ps: &mut ParamStore) {
        let s = ps.get(self.weight).shape().to_vec();
        ps.set(self.weight, Tensor::zeros(&s));
        ps.set(self.bias, Tensor::zeros(&[self.out_ch]));
    }
}

/// Adam with bias correction. Frozen parameters are skipped entirely.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, ps: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let n = ps.len();
        self.m.resize(n, None);
        self.v.resize(n, None);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for id in ps.ids().collect::<Vec<_>>() {
            if ps.entry(id).frozen {
                continue;
            }
            let Some(g) = grads.param(id) else { continue };
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let p = ps.get_mut(id);
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_minimizes_quadratic_and_respects_frozen() {
        let mut ps = ParamStore::new();
        let a = ps.add("a", Tensor::from_vec(&[2], vec![3.0, -2.0]));
        let b = ps.add("frozen.b", Tensor::from_vec(&[1], vec![5.0]));
        ps.set_frozen_prefix("frozen", true);
        let mut opt = Adam::new(0.1);
        for _ in 0..300 {
            let grads = {
                let g = Graph::with_params(&ps);
                let l = g.add(g.sum(g.square(g.param(a))), g.sum(g.square(g.param(b))));
                g.backward(l)
            };
            opt.step(&mut ps, &grads);
        }
        assert!(ps.get(a).data().iter().all(|v| v.abs() < 1e-2));
        assert_eq!(ps.get(b).data(), &[5.0]);
    }

    #[test]
    fn linear_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        let l = Linear::new(&mut ps, "l", 3, 3, true, &mut rng);
        l.set_identity(&mut ps);
        let g = Graph::with_params(&ps);
        let x = Tensor::from_fn(&[2, 3], |i| i as f64);
        let y = l.forward(&g, g.constant(x.clone()));
        assert_eq!(*g.value(y), x);
    }
}
