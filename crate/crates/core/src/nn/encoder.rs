use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, KeyValues};
use super::params::{prefixed, NamedTensor, Parameters};
use super::{LayerNorm, LayerNormCache, Linear, Matrix, MultiHeadAttention};
use crate::error::{Error, Result};

/// Widths of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_h: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub blocks: usize,
}

impl AttentionConfig {
    /// The full-size model: 8 heads of width 256, feed-forward width 512, 3 blocks.
    pub fn paper() -> AttentionConfig {
        AttentionConfig { d_h: 256, heads: 8, d_ff: 512, blocks: 3 }
    }

    /// A small profile that trains in minutes on one CPU core.
    pub fn desk() -> AttentionConfig {
        AttentionConfig { d_h: 64, heads: 4, d_ff: 128, blocks: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || self.heads == 0 || self.d_ff == 0 || self.blocks == 0 {
            return Err(Error::Config(format!("attention widths must be positive: {self:?}")));
        }
        if self.d_h % self.heads != 0 {
            return Err(Error::Config(format!("d_h = {} is not divisible by {} heads", self.d_h, self.heads)));
        }
        Ok(())
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig::paper()
    }
}

/// `linear -> ReLU -> linear`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Clone, Debug)]
pub struct FeedForwardCache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

impl FeedForward {
    pub fn init<R: Rng + ?Sized>(width: usize, hidden: usize, rng: &mut R) -> FeedForward {
        FeedForward { inner: Linear::init(width, hidden, rng), outer: Linear::init(hidden, width, rng) }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FeedForwardCache)> {
        let pre = self.inner.forward(x)?;
        let mut hidden = pre.clone();
        hidden.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let y = self.outer.forward(&hidden)?;
        Ok((y, FeedForwardCache { input: x.clone(), pre, hidden }))
    }

    pub fn backward(&self, cache: &FeedForwardCache, dy: &Matrix, grads: &mut FeedForward) -> Result<Matrix> {
        let mut dh = self.outer.backward(&cache.hidden, dy, &mut grads.outer)?;
        for (g, &p) in dh.data_mut().iter_mut().zip(cache.pre.data()) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        self.inner.backward(&cache.input, &dh, &mut grads.inner)
    }
}

impl Parameters for FeedForward {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        prefixed("inner", self.inner.tensors()).chain(prefixed("outer", self.outer.tensors())).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.inner.tensors_mut();
        out.extend(self.outer.tensors_mut());
        out
    }
}

/// Post-norm encoder block:
/// `h1 = LayerNorm(h + SelfAttention(h))`, `out = LayerNorm(h1 + FeedForward(h1))`.
///
/// There is no positional encoding, so the block is equivariant under row
/// permutations.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub feed_forward: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct EncoderBlockCache {
    input: Matrix,
    attention: AttentionCache,
    kv: KeyValues,
    norm1: LayerNormCache,
    feed_forward: FeedForwardCache,
    norm2: LayerNormCache,
}

impl EncoderBlock {
    pub fn init<R: Rng + ?Sized>(config: &AttentionConfig, rng: &mut R) -> Result<EncoderBlock> {
        config.validate()?;
        Ok(EncoderBlock {
            attention: MultiHeadAttention::init(config.d_h, config.heads, rng)?,
            norm1: LayerNorm::new(config.d_h),
            feed_forward: FeedForward::init(config.d_h, config.d_ff, rng),
            norm2: LayerNorm::new(config.d_h),
        })
    }

    pub fn forward(&self, h: &Matrix) -> Result<(Matrix, EncoderBlockCache)> {
        let (a, attention, kv) = self.attention.forward(h, h)?;
        let (h1, norm1) = self.norm1.forward(&h.add(&a)?)?;
        let (f, feed_forward) = self.feed_forward.forward(&h1)?;
        let (out, norm2) = self.norm2.forward(&h1.add(&f)?)?;
        Ok((out, EncoderBlockCache { input: h.clone(), attention, kv, norm1, feed_forward, norm2 }))
    }

    pub fn backward(&self, cache: &EncoderBlockCache, dout: &Matrix, grads: &mut EncoderBlock) -> Result<Matrix> {
        let dsum2 = self.norm2.backward(&cache.norm2, dout, &mut grads.norm2)?;
        let mut dh1 = self.feed_forward.backward(&cache.feed_forward, &dsum2, &mut grads.feed_forward)?;
        dh1.add_assign(&dsum2)?;
        let dsum1 = self.norm1.backward(&cache.norm1, &dh1, &mut grads.norm1)?;
        let (dq, dm) = self.attention.backward(&cache.input, &cache.attention, &cache.kv, &dsum1, &mut grads.attention)?;
        let mut dh = dsum1;
        dh.add_assign(&dq)?;
        dh.add_assign(&dm)?;
        Ok(dh)
    }
}

impl Parameters for EncoderBlock {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        prefixed("attention", self.attention.tensors())
            .chain(prefixed("norm1", self.norm1.tensors()))
            .chain(prefixed("feed_forward", self.feed_forward.tensors()))
            .chain(prefixed("norm2", self.norm2.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.attention.tensors_mut();
        out.extend(self.norm1.tensors_mut());
        out.extend(self.feed_forward.tensors_mut());
        out.extend(self.norm2.tensors_mut());
        out
    }
}
