//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in execution
//! order, so the tape is already topologically sorted and [`Graph::backward`]
//! walks it once in reverse.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{self, ConvGeom, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-sample row indices used by gather/scatter; `idx[b]` lists rows of batch item `b`.
pub type RowIndex = Rc<Vec<Vec<usize>>>;

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    SumAxes(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    MatMul(Var, Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    GatherRows(Var, RowIndex),
    ScatterRows(Var, Var, RowIndex),
    Conv2d(Var, Var, Option<Var>, ConvGeom),
    Resize(Var),
    AvgPool(Var, usize),
    SoftmaxLast(Var),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Parameters are read from the [`ParamStore`] it borrows.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: RefCell<Vec<Node>>,
    param_vars: RefCell<HashMap<ParamId, Var>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph without parameters; only constants and inputs can be leaves.
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Graph {
            params: Some(params),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn push_op(&self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        self.push(value, op, rg)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.borrow().get(&id) {
            return *v;
        }
        let store = self
            .params
            .expect("Graph::param called on a graph built without a ParamStore");
        let value = store.value_rc(id);
        let v = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value,
                op: Op::Param(id),
                requires_grad: true,
            });
            Var(nodes.len() - 1)
        };
        self.param_vars.borrow_mut().insert(id, v);
        v
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out = tensor::broadcast_binary(&self.value(a), &self.value(b), f);
        self.push_op(out, op, &[a, b])
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        self.push_op(out, op, &[x])
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// `c - x`
    pub fn rsub_scalar(&self, c: f64, x: Var) -> Var {
        let n = self.neg(x);
        self.add_scalar(n, c)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `x * sigmoid(x)`
    pub fn silu(&self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&self, x: Var) -> Var {
        self.mul(x, x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_op(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sums over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, x: Var, axes: &[usize]) -> Var {
        let xv = self.value(x);
        let mut shape = xv.shape().to_vec();
        for &a in axes {
            shape[a] = 1;
        }
        let out = tensor::reduce_to_shape(&xv, &shape);
        self.push_op(out, Op::SumAxes(x), &[x])
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).reshape(shape);
        self.push_op(out, Op::Reshape(x), &[x])
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Var {
        let out = tensor::permute(&self.value(x), perm);
        self.push_op(out, Op::Permute(x, perm.to_vec()), &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self, x: Var) -> Var {
        let nd = self.shape(x).len();
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(x, &perm)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = tensor::matmul(&self.value(a), &self.value(b));
        self.push_op(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn concat(&self, items: &[Var], axis: usize) -> Var {
        let vals: Vec<Rc<Tensor>> = items.iter().map(|&v| self.value(v)).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|t| t.as_ref()).collect();
        let out = tensor::concat(&refs, axis);
        self.push_op(out, Op::Concat(items.to_vec(), axis), items)
    }

    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let out = tensor::narrow(&self.value(x), axis, start, len);
        self.push_op(out, Op::Narrow(x, axis, start), &[x])
    }

    /// `x: [b, n, ...]` → `[b, k, ...]` picking `idx[b]` rows of each batch item.
    /// Also accepts `[b, n]`.
    pub fn gather_rows(&self, x: Var, idx: RowIndex) -> Var {
        let xv = self.value(x);
        let shape = xv.shape();
        let (b, n) = (shape[0], shape[1]);
        let inner = tensor::numel(&shape[2..]);
        assert_eq!(idx.len(), b, "gather_rows batch mismatch");
        let k = idx[0].len();
        let mut data = Vec::with_capacity(b * k * inner);
        for (bi, rows) in idx.iter().enumerate() {
            assert_eq!(rows.len(), k, "gather_rows ragged index");
            for &r in rows {
                assert!(r < n, "gather_rows index {r} out of range {n}");
                let off = (bi * n + r) * inner;
                data.extend_from_slice(&xv.data()[off..off + inner]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[1] = k;
        let out = Tensor::from_vec(&out_shape, data);
        self.push_op(out, Op::GatherRows(x, idx), &[x])
    }

    /// Copy of `base` with rows `idx[b]` replaced by the rows of `src`.
    pub fn scatter_rows(&self, base: Var, src: Var, idx: RowIndex) -> Var {
        let bv = self.value(base);
        let sv = self.value(src);
        let shape = bv.shape();
        let (b, n) = (shape[0], shape[1]);
        let inner = tensor::numel(&shape[2..]);
        let k = sv.shape()[1];
        assert_eq!(sv.shape()[0], b, "scatter_rows batch mismatch");
        let mut out = (*bv).clone();
        for (bi, rows) in idx.iter().enumerate() {
            assert_eq!(rows.len(), k, "scatter_rows index length mismatch");
            for (j, &r) in rows.iter().enumerate() {
                assert!(r < n);
                let dst = (bi * n + r) * inner;
                let s = (bi * k + j) * inner;
                out.data_mut()[dst..dst + inner].copy_from_slice(&sv.data()[s..s + inner]);
            }
        }
        self.push_op(out, Op::ScatterRows(base, src, idx), &[base, src])
    }

    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, geom: ConvGeom) -> Var {
        let bv = bias.map(|b| self.value(b));
        let out = tensor::conv2d(&self.value(x), &self.value(w), bv.as_deref(), geom);
        let mut parents = vec![x, w];
        parents.extend(bias);
        self.push_op(out, Op::Conv2d(x, w, bias, geom), &parents)
    }

    /// Bilinear resize of the spatial axes (half-pixel centers).
    pub fn resize(&self, x: Var, oh: usize, ow: usize) -> Var {
        let out = tensor::resize_bilinear(&self.value(x), oh, ow);
        self.push_op(out, Op::Resize(x), &[x])
    }

    /// `times` successive 2× bilinear upsamplings.
    pub fn upsample2x(&self, x: Var, times: usize) -> Var {
        let mut y = x;
        for _ in 0..times {
            let s = self.shape(y);
            y = self.resize(y, s[2] * 2, s[3] * 2);
        }
        y
    }

    pub fn avg_pool(&self, x: Var, k: usize) -> Var {
        if k == 1 {
            return x;
        }
        let out = tensor::avg_pool(&self.value(x), k);
        self.push_op(out, Op::AvgPool(x, k), &[x])
    }

    pub fn softmax_last(&self, x: Var) -> Var {
        let out = tensor::softmax_last(&self.value(x));
        self.push_op(out, Op::SoftmaxLast(x), &[x])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.0].value.numel(),
            1,
            "backward() needs a scalar loss"
        );
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let val = |v: Var| nodes[v.0].value.as_ref();
            let needs = |v: Var| nodes[v.0].requires_grad;
            let mut acc = |v: Var, g: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(i, gy);
                }
                Op::Param(id) => {
                    out.params.insert(*id, gy);
                }
                Op::Add(a, b) => {
                    acc(*a, tensor::reduce_to_shape(&gy, val(*a).shape()));
                    acc(*b, tensor::reduce_to_shape(&gy, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    acc(*a, tensor::reduce_to_shape(&gy, val(*a).shape()));
                    acc(*b, tensor::reduce_to_shape(&gy.map(|v| -v), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let g = tensor::broadcast_binary(&gy, val(*b), |g, y| g * y);
                        acc(*a, tensor::reduce_to_shape(&g, val(*a).shape()));
                    }
                    if needs(*b) {
                        let g = tensor::broadcast_binary(&gy, val(*a), |g, x| g * x);
                        acc(*b, tensor::reduce_to_shape(&g, val(*b).shape()));
                    }
                }
                Op::Div(a, b) => {
                    if needs(*a) {
                        let g = tensor::broadcast_binary(&gy, val(*b), |g, y| g / y);
                        acc(*a, tensor::reduce_to_shape(&g, val(*a).shape()));
                    }
                    if needs(*b) {
                        // d(a/b)/db = -(a/b)/b = -out/b
                        let q = tensor::broadcast_binary(&node.value, val(*b), |o, y| -o / y);
                        let g = q.zip_map(&gy, |q, g| q * g);
                        acc(*b, tensor::reduce_to_shape(&g, val(*b).shape()));
                    }
                }
                Op::Scale(x, c) => acc(*x, gy.map(|g| g * c)),
                Op::AddScalar(x) => acc(*x, gy),
                Op::Relu(x) => acc(*x, gy.zip_map(val(*x), |g, v| if v > 0.0 { g } else { 0.0 })),
                Op::Silu(x) => acc(
                    *x,
                    gy.zip_map(val(*x), |g, v| {
                        let s = sigmoid(v);
                        g * (s + v * s * (1.0 - s))
                    }),
                ),
                Op::Sigmoid(x) => acc(*x, gy.zip_map(&node.value, |g, s| g * s * (1.0 - s))),
                Op::Tanh(x) => acc(*x, gy.zip_map(&node.value, |g, t| g * (1.0 - t * t))),
                Op::Exp(x) => acc(*x, gy.zip_map(&node.value, |g, e| g * e)),
                Op::Ln(x) => acc(*x, gy.zip_map(val(*x), |g, v| g / v)),
                Op::Sqrt(x) => acc(*x, gy.zip_map(&node.value, |g, s| g * 0.5 / s)),
                Op::Clamp(x, lo, hi) => acc(
                    *x,
                    gy.zip_map(val(*x), |g, v| if v >= *lo && v <= *hi { g } else { 0.0 }),
                ),
                Op::SumAll(x) => acc(*x, Tensor::full(val(*x).shape(), gy.item())),
                Op::SumAxes(x) => {
                    let full = Tensor::zeros(val(*x).shape());
                    acc(*x, tensor::broadcast_binary(&full, &gy, |_, g| g));
                }
                Op::Reshape(x) => acc(*x, gy.into_reshaped(val(*x).shape())),
                Op::Permute(x, perm) => {
                    acc(*x, tensor::permute(&gy, &tensor::inverse_permutation(perm)))
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = tensor::matmul_backward(val(*a), val(*b), &gy);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Concat(items, axis) => {
                    let mut start = 0;
                    for &it in items {
                        let len = val(it).shape()[*axis];
                        if needs(it) {
                            acc(it, tensor::narrow(&gy, *axis, start, len));
                        }
                        start += len;
                    }
                }
                Op::Narrow(x, axis, start) => {
                    acc(*x, tensor::narrow_backward(&gy, val(*x).shape(), *axis, *start))
                }
                Op::GatherRows(x, idx) => {
                    let shape = val(*x).shape();
                    let (n, inner) = (shape[1], tensor::numel(&shape[2..]));
                    let k = gy.shape()[1];
                    let mut g = Tensor::zeros(shape);
                    for (bi, rows) in idx.iter().enumerate() {
                        for (j, &r) in rows.iter().enumerate() {
                            let dst = (bi * n + r) * inner;
                            let src = (bi * k + j) * inner;
                            for t in 0..inner {
                                g.data_mut()[dst + t] += gy.data()[src + t];
                            }
                        }
                    }
                    acc(*x, g);
                }
                Op::ScatterRows(base, src, idx) => {
                    let shape = val(*base).shape();
                    let (n, inner) = (shape[1], tensor::numel(&shape[2..]));
                    let k = val(*src).shape()[1];
                    if needs(*src) {
                        let mut gs = Tensor::zeros(val(*src).shape());
                        for (bi, rows) in idx.iter().enumerate() {
                            for (j, &r) in rows.iter().enumerate() {
                                let s = (bi * n + r) * inner;
                                let d = (bi * k + j) * inner;
                                gs.data_mut()[d..d + inner]
                                    .copy_from_slice(&gy.data()[s..s + inner]);
                            }
                        }
                        acc(*src, gs);
                    }
                    if needs(*base) {
                        let mut gb = gy.clone();
                        for (bi, rows) in idx.iter().enumerate() {
                            for &r in rows {
                                let s = (bi * n + r) * inner;
                                gb.data_mut()[s..s + inner].fill(0.0);
                            }
                        }
                        acc(*base, gb);
                    }
                }
                Op::Conv2d(x, w, b, geom) => {
                    let (gx, gw, gb) =
                        tensor::conv2d_backward(val(*x), val(*w), &gy, *geom, needs(*x));
                    if let Some(gx) = gx {
                        acc(*x, gx);
                    }
                    acc(*w, gw);
                    if let Some(b) = b {
                        acc(*b, gb);
                    }
                }
                Op::Resize(x) => {
                    let s = val(*x).shape();
                    acc(*x, tensor::resize_bilinear_backward(&gy, s[2], s[3]));
                }
                Op::AvgPool(x, k) => acc(*x, tensor::avg_pool_backward(&gy, *k)),
                Op::SoftmaxLast(x) => {
                    let y = node.value.as_ref();
                    let n = *y.shape().last().unwrap();
                    let mut g = gy.clone();
                    for (grow, yrow) in g.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for (gv, yv) in grow.iter_mut().zip(yrow) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    acc(*x, g);
                }
            }
        }
        out
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gradients collected by [`Graph::backward`].
#[derive(Default)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of an [`Graph::input`] leaf; `None` if it did not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(sum(w ⊙ f(x)))/dx for a single-input builder.
    fn check(shape: &[usize], build: impl Fn(&Graph, Var) -> Var) {
        let x0 = Tensor::from_fn(shape, |i| ((i as f64 * 1.37).sin() * 0.9) + 0.05);
        let weights = |n: usize| Tensor::from_fn(&[n], |i| ((i as f64) * 0.71).cos());
        let eval = |x: &Tensor| -> f64 {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            let y = build(&g, xv);
            let yv = g.value(y);
            let w = weights(yv.numel());
            yv.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let g = Graph::new();
        let xv = g.input(x0.clone());
        let y = build(&g, xv);
        let n = g.value(y).numel();
        let w = g.constant(weights(n).reshape(&g.shape(y)));
        let loss = g.sum(g.mul(y, w));
        let grads = g.backward(loss);
        let analytic = grads.wrt(xv).unwrap().clone();
        let h = 1e-6;
        for i in 0..x0.numel() {
            let mut p = x0.clone();
            p.data_mut()[i] += h;
            let mut m = x0.clone();
            m.data_mut()[i] -= h;
            let num = (eval(&p) - eval(&m)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-5, "elem {i}: analytic {a} vs numeric {num}");
        }
    }

    #[test]
    fn unary_ops_grad() {
        check(&[2, 3], |g, x| g.sigmoid(x));
        check(&[2, 3], |g, x| g.tanh(x));
        check(&[2, 3], |g, x| g.silu(x));
        check(&[2, 3], |g, x| g.exp(x));
        check(&[2, 3], |g, x| g.ln(g.add_scalar(g.square(x), 0.5)));
        check(&[2, 3], |g, x| g.sqrt(g.add_scalar(g.square(x), 0.5)));
        check(&[2, 3], |g, x| g.softmax_last(x));
    }

    #[test]
    fn broadcast_binary_grad() {
        check(&[2, 3, 4], |g, x| {
            let b = g.narrow(x, 0, 0, 1); // [1,3,4]
            let c = g.narrow(x, 2, 1, 1); // [2,3,1]
            let t = g.mul(x, b);
            let u = g.div(t, g.add_scalar(g.square(c), 1.0));
            g.sub(u, c)
        });
    }

    #[test]
    fn structural_ops_grad() {
        check(&[2, 3, 4], |g, x| g.permute(x, &[2, 0, 1]));
        check(&[2, 3, 4], |g, x| g.sum_axes(x, &[0, 2]));
        check(&[2, 3, 4], |g, x| {
            let a = g.narrow(x, 1, 0, 2);
            let b = g.narrow(x, 1, 1, 2);
            g.concat(&[b, a, b], 1)
        });
        check(&[2, 3, 4], |g, x| {
            let w = g.narrow(x, 0, 0, 1);
            let w = g.reshape(w, &[3, 4]);
            let wt = g.transpose_last(w);
            g.matmul(x, wt)
        });
        check(&[2, 3, 4], |g, x| {
            let y = g.transpose_last(x);
            g.matmul(x, y)
        });
        check(&[2, 4, 3], |g, x| {
            let idx: RowIndex = Rc::new(vec![vec![3, 0], vec![1, 2]]);
            let picked = g.gather_rows(x, idx.clone());
            let sq = g.square(picked);
            g.scatter_rows(x, sq, idx)
        });
    }

    #[test]
    fn spatial_ops_grad() {
        check(&[1, 2, 3, 3], |g, x| g.resize(x, 6, 5));
        check(&[1, 2, 4, 4], |g, x| g.avg_pool(x, 2));
        check(&[2, 2, 5, 5], |g, x| {
            let w = g.narrow(g.narrow(x, 0, 0, 1), 2, 0, 3);
            let w = g.narrow(w, 3, 0, 3); // [1,2,3,3]
            let w = g.concat(&[w, g.scale(w, -0.5), w], 0); // [3,2,3,3]
            let b = g.reshape(g.narrow(g.narrow(g.narrow(x, 0, 1, 1), 1, 0, 1), 2, 0, 1), &[5]);
            let b = g.narrow(b, 0, 0, 3);
            g.conv2d(
                x,
                w,
                Some(b),
                ConvGeom {
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
            )
        });
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::new();
        let c = g.constant(Tensor::ones(&[2]));
        let x = g.input(Tensor::ones(&[2]));
        let l = g.sum(g.mul(c, x));
        let grads = g.backward(l);
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0]);
    }
}
