//! Building blocks shared by the model variants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    adaptive_gate, canonical_mha, gap, lssa_attend, AttentionParams, GateParams, MhaParams,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{uniform, xavier, Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

pub const LN_EPS: f64 = 1e-6;

/// Forward-pass context: dropout is active only with an RNG attached.
pub struct Ctx<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
    rate: f64,
}

impl<'a> Ctx<'a> {
    pub fn eval() -> Self {
        Self { rng: None, rate: 0.0 }
    }

    pub fn train(rng: &'a mut ChaCha8Rng, rate: f64) -> Self {
        Self { rng: Some(rng), rate }
    }

    /// Inverted dropout.
    pub fn dropout<T: Real>(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let rate = self.rate;
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let keep = T::of(1.0 / (1.0 - rate));
                let n = g.value(x).len();
                let mask: Vec<T> = (0..n)
                    .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                    .collect();
                let mask = g.constant(Tensor::new(g.shape(x).to_vec(), mask)?);
                g.mul(x, mask)
            }
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: store.add(format!("{name}.w"), xavier(rng, &[fan_in, fan_out], fan_in, fan_out)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        g.add_bias(y, p[self.b])
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[d], T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gain], p[self.bias], LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d: usize, ff: usize) -> Self {
        Self {
            inner: Linear::new(store, rng, &format!("{name}.ff1"), d, ff),
            outer: Linear::new(store, rng, &format!("{name}.ff2"), ff, d),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, p, x)?;
        let h = g.relu(h);
        self.outer.forward(g, p, h)
    }
}

/// Token embedding table scaled by `sqrt(d)` on lookup.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub d: usize,
}

impl Embedding {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, vocab: usize, d: usize) -> Self {
        let bound = (3.0 / d as f64).sqrt();
        Self {
            table: store.add(format!("{name}.table"), uniform(rng, &[vocab, d], bound)),
            d,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, ids: &[usize]) -> Result<Var> {
        let x = g.gather_rows(p[self.table], ids)?;
        Ok(g.scale(x, T::of((self.d as f64).sqrt())))
    }
}

/// Sinusoidal positional encoding, `len x d`.
pub fn positional_encoding<T: Real>(len: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * d];
    for pos in 0..len {
        for i in 0..d {
            let expo = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(expo);
            data[pos * d + i] = T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![len, d], data).expect("length matches shape")
}

pub fn add_positional<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let (len, d) = match g.shape(x) {
        &[a, b] => (a, b),
        s => return Err(Error::invalid("positional_encoding", format!("expected a matrix, got {s:?}"))),
    };
    let pe = g.constant(positional_encoding(len, d));
    g.add(x, pe)
}

/// Kernel-3 same-padded 1-D convolution along time followed by ReLU.
/// `w` is `3d x d_out`, rows ordered by tap `(t-1, t, t+1)`.
pub fn temporal_conv<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (m, d) = match g.shape(x) {
        &[m, d] if m > 0 => (m, d),
        s => return Err(Error::invalid("temporal_conv", format!("need a non-empty matrix, got {s:?}"))),
    };
    if g.shape(w).first() != Some(&(3 * d)) {
        return Err(Error::shape("temporal_conv", &[m, 3 * d], g.shape(w)));
    }
    let prev = g.shift_rows(x, 1)?;
    let next = g.shift_rows(x, -1)?;
    let taps = g.concat_cols(&[prev, x, next])?;
    let y = g.matmul(taps, w)?;
    let y = g.add_bias(y, b)?;
    Ok(g.relu(y))
}

/// One ADAT encoder block: split along time, convolution on the first
/// half, gated LSSA/GAP on the second, concatenate, layer norm.
#[derive(Clone, Debug)]
pub struct AdatBlock {
    pub conv: Linear,
    pub lssa: AttentionParams,
    pub gate: GateParams,
    pub norm: LayerNorm,
}

/// Per-block diagnostics exposed for tests and analysis.
#[derive(Clone, Copy, Debug)]
pub struct AdatTrace {
    pub conv_out: Var,
    pub gated_out: Var,
    pub gate_distribution: Var,
}

impl AdatBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        stack_depth: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Linear::new(store, rng, &format!("{name}.conv"), 3 * d, d),
            lssa: AttentionParams::new(store, rng, &format!("{name}.lssa"), d, heads, stack_depth)?,
            gate: GateParams::new(store, rng, &format!("{name}.gate"), d),
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
        })
    }

    /// Rows in the convolution half for a length-`m` sequence.
    pub fn split_point(m: usize) -> usize {
        m.div_ceil(2)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<(Var, AdatTrace)> {
        let m = g.shape(x)[0];
        if m < 2 {
            return Err(Error::invalid("encode", format!("ADAT needs at least 2 frames, got {m}")));
        }
        let m1 = Self::split_point(m);
        let x1 = g.slice_rows(x, 0, m1)?;
        let x2 = g.slice_rows(x, m1, m - m1)?;
        let conv_out = temporal_conv(g, x1, p[self.conv.w], p[self.conv.b])?;
        let sparse = lssa_attend(g, x2, self.lssa.vars(p), self.lssa.heads, self.lssa.stack_depth)?;
        let pooled = gap(g, sparse.values)?;
        let pooled = g.broadcast_rows(pooled, m - m1)?;
        let gated = adaptive_gate(g, sparse.out, pooled, p[self.gate.w_g], p[self.gate.b_g])?;
        let joined = g.concat_rows(&[conv_out, gated.out])?;
        let out = self.norm.forward(g, p, joined)?;
        Ok((
            out,
            AdatTrace {
                conv_out,
                gated_out: gated.out,
                gate_distribution: gated.distribution,
            },
        ))
    }
}

/// Post-norm transformer encoder layer; `causal` turns it into a
/// decoder-only block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MhaParams,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        ff: usize,
    ) -> Result<Self> {
        Ok(Self {
            attn: MhaParams::new(store, rng, &format!("{name}.attn"), d, heads)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            ff: FeedForward::new(store, rng, name, d, ff),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, causal: bool, ctx: &mut Ctx) -> Result<Var> {
        let a = canonical_mha(g, x, x, x, self.attn.vars(p), self.attn.heads, causal)?;
        let a = ctx.dropout(g, a)?;
        let h = g.add(x, a)?;
        let h = self.norm1.forward(g, p, h)?;
        let f = self.ff.forward(g, p, h)?;
        let f = ctx.dropout(g, f)?;
        let o = g.add(h, f)?;
        self.norm2.forward(g, p, o)
    }
}

/// Post-norm decoder layer: causal self-attention, cross-attention over
/// memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MhaParams,
    pub norm1: LayerNorm,
    pub cross: MhaParams,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        ff: usize,
    ) -> Result<Self> {
        Ok(Self {
            self_attn: MhaParams::new(store, rng, &format!("{name}.self"), d, heads)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            cross: MhaParams::new(store, rng, &format!("{name}.cross"), d, heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            ff: FeedForward::new(store, rng, name, d, ff),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, memory: Var, ctx: &mut Ctx) -> Result<Var> {
        let a = canonical_mha(g, x, x, x, self.self_attn.vars(p), self.self_attn.heads, true)?;
        let a = ctx.dropout(g, a)?;
        let h = g.add(x, a)?;
        let h = self.norm1.forward(g, p, h)?;
        let c = canonical_mha(g, h, memory, memory, self.cross.vars(p), self.cross.heads, false)?;
        let c = ctx.dropout(g, c)?;
        let h2 = g.add(h, c)?;
        let h2 = self.norm2.forward(g, p, h2)?;
        let f = self.ff.forward(g, p, h2)?;
        let f = ctx.dropout(g, f)?;
        let o = g.add(h2, f)?;
        self.norm3.forward(g, p, o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_first_rows() {
        let pe = positional_encoding::<f64>(2, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.at(&[1, 0]) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(&[1, 3]) - (0.01f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn split_point_takes_ceiling() {
        assert_eq!(AdatBlock::split_point(10), 5);
        assert_eq!(AdatBlock::split_point(11), 6);
        assert_eq!(AdatBlock::split_point(2), 1);
    }
}
