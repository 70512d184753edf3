use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamStore};

/// Standard multi-head self-attention over `[b, n, d]` with no positional
/// encoding, so it is equivariant to node permutations.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "embedding dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(ps, &format!("{name}.q"), dim, dim, true, rng),
            key: Linear::new(ps, &format!("{name}.k"), dim, dim, true, rng),
            value: Linear::new(ps, &format!("{name}.v"), dim, dim, true, rng),
            output: Linear::new(ps, &format!("{name}.o"), dim, dim, true, rng),
            heads,
            dim,
        })
    }

    fn split_heads(&self, g: &Graph, x: Var, b: usize, n: usize) -> Var {
        let dh = self.dim / self.heads;
        let r = g.reshape(x, &[b, n, self.heads, dh]);
        let p = g.permute(r, &[0, 2, 1, 3]);
        g.reshape(p, &[b * self.heads, n, dh])
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        let s = g.shape(x);
        let (b, n) = (s[0], s[1]);
        let dh = self.dim / self.heads;
        let q = self.split_heads(g, self.query.forward(g, x), b, n);
        let k = self.split_heads(g, self.key.forward(g, x), b, n);
        let v = self.split_heads(g, self.value.forward(g, x), b, n);
        let logits = g.scale(g.matmul(q, g.transpose_last(k)), 1.0 / (dh as f64).sqrt());
        let att = g.softmax_last(logits);
        let ctx = g.matmul(att, v);
        let ctx = g.reshape(ctx, &[b, self.heads, n, dh]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[b, n, self.dim]);
        self.output.forward(g, ctx)
    }

    /// Zeroes the output projection so the block contributes exactly nothing.
    pub fn zero_output(&self, ps: &mut ParamStore) {
        self.output.set_zero(ps);
    }
}
