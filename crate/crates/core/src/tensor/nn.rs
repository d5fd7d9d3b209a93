//! Parameterised layers built on [`Graph`] operations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::graph::{AttentionLayout, Graph, Var};
use crate::tensor::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Standard deviation of embedding-table initialisation.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        g.layer_norm(x, gain, shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub classes: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, classes: usize, dim: usize, rng: &mut R) -> Self {
        let table = store.add_normal(format!("{name}.table"), &[classes, dim], EMBEDDING_INIT_STD, rng);
        Self { table, classes, dim }
    }

    pub fn forward(&self, g: &mut Graph, codes: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.embedding(t, codes)
    }
}

/// Projected multi-head attention. Self-attention passes the same tensor
/// as queries and keys/values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            heads,
        })
    }

    /// `queries` holds `batch × q_len` rows, `context` `batch × k_len` rows;
    /// `key_len` limits how many leading context rows each batch row sees
    /// (all of them when `None`).
    pub fn forward(
        &self,
        g: &mut Graph,
        queries: Var,
        context: Var,
        batch: usize,
        key_len: Option<&[usize]>,
    ) -> Result<Var> {
        let q_len = g.value(queries).rows() / batch.max(1);
        let k_len = g.value(context).rows() / batch.max(1);
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, context)?;
        let v = self.value.forward(g, context)?;
        let layout = AttentionLayout {
            batch,
            q_len,
            k_len,
            heads: self.heads,
            key_len: key_len.map_or_else(|| vec![k_len; batch], <[usize]>::to_vec),
        };
        let a = g.attention(q, k, v, layout)?;
        self.output.forward(g, a)
    }
}

/// Two linear maps with a ReLU between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), dim, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h)?;
        self.outer.forward(g, h)
    }
}

/// Sinusoidal features of an integer timestep: `sin(t·ωᵢ)` for the first
/// half and `cos(t·ωᵢ)` for the second, with `ωᵢ = 10000^(−2i/d)`.
pub fn sinusoidal_timestep(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "timestep embedding width must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let arg = t as f64 * omega;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Ok(out)
}
