//! Conditional encoder-decoder transformer that predicts numeric noise and
//! clean-class logits for every feature.
//!
//! Each row becomes `K + 1` tokens: one per feature in schema order, then
//! the target. The encoder attends only over conditioning tokens (features
//! whose effective mask is clear, plus the target); the decoder runs over
//! all tokens and cross-attends to the encoder output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, FeatureSlot, TableSchema};
use crate::error::{Error, Result};
use crate::tensor::{
    sinusoidal_timestep, Embedding, FeedForward, Graph, LayerNorm, Linear, MultiHeadAttention, ParamStore, Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            feedforward_dim: 256,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("latent_dim", self.latent_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("heads", self.heads),
            ("feedforward_dim", self.feedforward_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.latent_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "latent_dim {} is not divisible by {} heads",
                self.latent_dim, self.heads
            )));
        }
        if !self.latent_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("latent_dim {} must be even", self.latent_dim)));
        }
        Ok(())
    }
}

/// Target values fed as the last token.
#[derive(Debug, Clone, Copy)]
pub enum TargetInput<'a> {
    Real(&'a [f64]),
    Codes(&'a [usize]),
}

/// One batch of network inputs. Feature cells already hold the state the
/// network should see: the noisy value where `eff` is set, the clean value
/// otherwise.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub batch: usize,
    /// `batch × K_num`, row-major.
    pub numeric: &'a [f64],
    /// `batch × K_cat`, row-major.
    pub codes: &'a [usize],
    /// Effective mask, `batch × K`.
    pub eff: &'a [bool],
    pub target: TargetInput<'a>,
    /// Diffusion step per row, in `1..=T`.
    pub t: &'a [usize],
}

/// Graph handles of the network outputs.
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    /// Predicted noise, `batch × K_num`; `None` without numeric features.
    pub eps_hat: Option<Var>,
    /// Unnormalised clean-class logits per categorical feature, `batch × Cl_i`.
    pub logits: Vec<Var>,
}

/// Plain values of a [`DenoiserOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub eps_hat: Vec<f64>,
    pub logits: Vec<Tensor>,
}

impl DenoiserOutput {
    pub fn values(&self, g: &Graph) -> Prediction {
        Prediction {
            eps_hat: self.eps_hat.map_or_else(Vec::new, |v| g.value(v).data().to_vec()),
            logits: self.logits.iter().map(|v| g.value(*v).clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum TokenEmbed {
    Numeric(Linear),
    Categorical(Embedding),
}

#[derive(Debug, Clone, Copy)]
struct EncoderBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

#[derive(Debug, Clone, Copy)]
struct DecoderBlock {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

#[derive(Debug, Clone, Copy)]
struct HeadBlock {
    linear: Linear,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
struct Head {
    blocks: [HeadBlock; 2],
    out: Linear,
}

/// Parameter layout of the network; values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    features: Vec<FeatureSlot>,
    k_num: usize,
    k_cat: usize,
    target_kind: ColumnKind,
    feature_embed: Vec<TokenEmbed>,
    target_embed: TokenEmbed,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    time: Linear,
    heads: Vec<Head>,
}

fn norm(store: &mut ParamStore, name: &str, d: usize) -> LayerNorm {
    LayerNorm::new(store, name, d)
}

impl Denoiser {
    /// Registers every parameter in `store` in a fixed order.
    pub fn new<R: Rng>(schema: &TableSchema, config: DenoiserConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let features = schema.features();
        let embed = |store: &mut ParamStore, rng: &mut R, name: &str, kind: ColumnKind, classes: usize| match kind {
            ColumnKind::Numerical => TokenEmbed::Numeric(Linear::new(store, name, 1, d, rng)),
            ColumnKind::Categorical => TokenEmbed::Categorical(Embedding::new(store, name, classes, d, rng)),
        };
        let feature_embed = features
            .iter()
            .map(|f| embed(store, rng, &format!("embed.{}", schema.columns[f.column].name), f.kind, f.classes))
            .collect();
        let target = schema.target();
        let target_embed = embed(store, rng, "embed.target", target.kind, target.classes());

        let mut encoder = Vec::new();
        for l in 0..config.encoder_layers {
            let p = format!("encoder.{l}");
            encoder.push(EncoderBlock {
                attn: MultiHeadAttention::new(store, &format!("{p}.attn"), d, config.heads, rng)?,
                norm1: norm(store, &format!("{p}.norm1"), d),
                ff: FeedForward::new(store, &format!("{p}.ff"), d, config.feedforward_dim, rng),
                norm2: norm(store, &format!("{p}.norm2"), d),
            });
        }
        let mut decoder = Vec::new();
        for l in 0..config.decoder_layers {
            let p = format!("decoder.{l}");
            decoder.push(DecoderBlock {
                self_attn: MultiHeadAttention::new(store, &format!("{p}.self_attn"), d, config.heads, rng)?,
                norm1: norm(store, &format!("{p}.norm1"), d),
                cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross_attn"), d, config.heads, rng)?,
                norm2: norm(store, &format!("{p}.norm2"), d),
                ff: FeedForward::new(store, &format!("{p}.ff"), d, config.feedforward_dim, rng),
                norm3: norm(store, &format!("{p}.norm3"), d),
            });
        }
        let time = Linear::new(store, "time", d, d, rng);
        let heads = features
            .iter()
            .map(|f| {
                let p = format!("head.{}", schema.columns[f.column].name);
                let block = |store: &mut ParamStore, rng: &mut R, i: usize| HeadBlock {
                    linear: Linear::new(store, &format!("{p}.{i}.linear"), d, d, rng),
                    norm: norm(store, &format!("{p}.{i}.norm"), d),
                };
                let blocks = [block(store, rng, 0), block(store, rng, 1)];
                let width = if f.kind == ColumnKind::Numerical { 1 } else { f.classes };
                Head {
                    blocks,
                    out: Linear::new(store, &format!("{p}.out"), d, width, rng),
                }
            })
            .collect();
        Ok(Self {
            config,
            k_num: schema.n_numeric(),
            k_cat: schema.n_categorical(),
            features,
            target_kind: target.kind,
            feature_embed,
            target_embed,
            encoder,
            decoder,
            time,
            heads,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Tokens per row, `K + 1`.
    pub fn tokens_per_row(&self) -> usize {
        self.features.len() + 1
    }

    fn check(&self, input: &DenoiserInput<'_>) -> Result<()> {
        let b = input.batch;
        let k = self.features.len();
        let target_ok = match (input.target, self.target_kind) {
            (TargetInput::Real(v), ColumnKind::Numerical) => v.len() == b,
            (TargetInput::Codes(v), ColumnKind::Categorical) => v.len() == b,
            _ => false,
        };
        if b == 0
            || input.numeric.len() != b * self.k_num
            || input.codes.len() != b * self.k_cat
            || input.eff.len() != b * k
            || input.t.len() != b
            || !target_ok
        {
            return Err(Error::SchemaMismatch(format!(
                "denoiser input does not match the schema (batch {b}, {} numeric, {} categorical features)",
                self.k_num, self.k_cat
            )));
        }
        Ok(())
    }

    fn embed_one(g: &mut Graph, embed: TokenEmbed, reals: Option<Vec<f64>>, codes: Option<Vec<usize>>) -> Result<Var> {
        match embed {
            TokenEmbed::Numeric(l) => {
                let v = reals.expect("numeric column values");
                let n = v.len();
                let x = g.input(Tensor::new(vec![n, 1], v)?);
                let h = l.forward(g, x)?;
                g.relu(h)
            }
            TokenEmbed::Categorical(e) => e.forward(g, &codes.expect("categorical column codes")),
        }
    }

    /// Token tensor with rows ordered `row · (K+1) + token`.
    pub fn embed(&self, g: &mut Graph, input: &DenoiserInput<'_>) -> Result<Var> {
        self.check(input)?;
        let b = input.batch;
        let mut parts = Vec::with_capacity(self.tokens_per_row());
        for (f, embed) in self.features.iter().zip(&self.feature_embed) {
            let v = match f.kind {
                ColumnKind::Numerical => {
                    let col = (0..b).map(|r| input.numeric[r * self.k_num + f.block]).collect();
                    Self::embed_one(g, *embed, Some(col), None)?
                }
                ColumnKind::Categorical => {
                    let col = (0..b).map(|r| input.codes[r * self.k_cat + f.block]).collect();
                    Self::embed_one(g, *embed, None, Some(col))?
                }
            };
            parts.push(v);
        }
        let y = match input.target {
            TargetInput::Real(v) => Self::embed_one(g, self.target_embed, Some(v.to_vec()), None)?,
            TargetInput::Codes(c) => Self::embed_one(g, self.target_embed, None, Some(c.to_vec()))?,
        };
        parts.push(y);
        g.interleave(&parts)
    }

    /// Encoder output over the conditioning tokens of each row, padded to
    /// the longest conditioning set. Returns the context, the per-row
    /// number of real tokens, and the padded length.
    pub fn encode(&self, g: &mut Graph, tokens: Var, input: &DenoiserInput<'_>) -> Result<(Var, Vec<usize>, usize)> {
        let b = input.batch;
        let k = self.features.len();
        let l = k + 1;
        let sets: Vec<Vec<usize>> = (0..b)
            .map(|r| {
                let mut s: Vec<usize> = (0..k).filter(|j| !input.eff[r * k + j]).collect();
                s.push(k);
                s
            })
            .collect();
        let l_c = sets.iter().map(Vec::len).max().unwrap_or(1);
        let key_len: Vec<usize> = sets.iter().map(Vec::len).collect();
        let mut index = Vec::with_capacity(b * l_c);
        for (r, s) in sets.iter().enumerate() {
            index.extend(s.iter().map(|j| Some(r * l + j)));
            index.extend(std::iter::repeat_n(None, l_c - s.len()));
        }
        let mut h = g.gather_rows(tokens, index)?;
        for block in &self.encoder {
            let a = block.attn.forward(g, h, h, b, Some(&key_len))?;
            let s = g.add(h, a)?;
            h = block.norm1.forward(g, s)?;
            let f = block.ff.forward(g, h)?;
            let s = g.add(h, f)?;
            h = block.norm2.forward(g, s)?;
        }
        Ok((h, key_len, l_c))
    }

    pub fn decode(&self, g: &mut Graph, tokens: Var, context: Var, key_len: &[usize], batch: usize) -> Result<Var> {
        let mut h = tokens;
        for block in &self.decoder {
            let a = block.self_attn.forward(g, h, h, batch, None)?;
            let s = g.add(h, a)?;
            h = block.norm1.forward(g, s)?;
            let c = block.cross_attn.forward(g, h, context, batch, Some(key_len))?;
            let s = g.add(h, c)?;
            h = block.norm2.forward(g, s)?;
            let f = block.ff.forward(g, h)?;
            let s = g.add(h, f)?;
            h = block.norm3.forward(g, s)?;
        }
        Ok(h)
    }

    /// Adds `mish(linear(sinusoid(t)))` to every token of each row.
    pub fn inject_timestep(&self, g: &mut Graph, h: Var, t: &[usize]) -> Result<Var> {
        let d = self.config.latent_dim;
        let mut feats = Vec::with_capacity(t.len() * d);
        for &step in t {
            feats.extend(sinusoidal_timestep(step, d)?);
        }
        let x = g.input(Tensor::new(vec![t.len(), d], feats)?);
        let e = self.time.forward(g, x)?;
        let e = g.mish(e)?;
        g.broadcast_add(h, e, self.tokens_per_row())
    }

    pub fn heads(&self, g: &mut Graph, h: Var, batch: usize) -> Result<DenoiserOutput> {
        let l = self.tokens_per_row();
        let mut eps = Vec::with_capacity(self.k_num);
        let mut logits = Vec::with_capacity(self.k_cat);
        for (j, (f, head)) in self.features.iter().zip(&self.heads).enumerate() {
            let mut x = g.gather_rows(h, (0..batch).map(|r| Some(r * l + j)).collect())?;
            for block in &head.blocks {
                let y = block.linear.forward(g, x)?;
                let y = block.norm.forward(g, y)?;
                x = g.relu(y)?;
            }
            let out = head.out.forward(g, x)?;
            match f.kind {
                ColumnKind::Numerical => eps.push(out),
                ColumnKind::Categorical => logits.push(out),
            }
        }
        let eps_hat = if eps.is_empty() {
            None
        } else {
            Some(g.concat_cols(&eps)?)
        };
        Ok(DenoiserOutput { eps_hat, logits })
    }

    /// Full network pass.
    pub fn forward(&self, g: &mut Graph, input: &DenoiserInput<'_>) -> Result<DenoiserOutput> {
        let tokens = self.embed(g, input)?;
        let (ctx, key_len, _) = self.encode(g, tokens, input)?;
        let h = self.decode(g, tokens, ctx, &key_len, input.batch)?;
        let h = self.inject_timestep(g, h, input.t)?;
        self.heads(g, h, input.batch)
    }

    /// Forward pass without keeping the graph.
    pub fn predict(&self, store: &ParamStore, input: &DenoiserInput<'_>) -> Result<Prediction> {
        let mut g = Graph::new(store);
        let out = self.forward(&mut g, input)?;
        Ok(out.values(&g))
    }

    /// Zeroes every cross-attention output projection, cutting the encoder
    /// context off from the decoder.
    pub fn disable_cross_attention(&self, store: &mut ParamStore) {
        for block in &self.decoder {
            for id in [block.cross_attn.output.weight, block.cross_attn.output.bias] {
                store.get_mut(id).value.data_mut().fill(0.0);
            }
        }
    }

    /// Names of parameters that belong to the encoder stack.
    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("encoder.")
    }
}
