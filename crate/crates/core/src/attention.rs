//! LogSparse self-attention, canonical multi-head attention, global average
//! pooling and the adaptive gate that mixes the sparse and pooled branches.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier, Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Positions that query position `position` attends to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSet {
    pub position: usize,
    /// Sorted ascending, unique, all `<= position`, always contains `position`.
    pub attended: Vec<usize>,
}

/// `{p - 2^e : e = floor(log2 p) .. 0} ∪ {p}`, or `{0}` for `p = 0`.
pub fn lssa_indices(p: usize, len: usize) -> Result<IndexSet> {
    if p >= len {
        return Err(Error::invalid(
            "lssa_indices",
            format!("position {p} outside sequence of length {len}"),
        ));
    }
    let mut attended = Vec::new();
    if p > 0 {
        let top = p.ilog2();
        for e in (0..=top).rev() {
            attended.push(p - (1usize << e));
        }
    }
    attended.push(p);
    attended.dedup();
    Ok(IndexSet {
        position: p,
        attended,
    })
}

/// Index sets for every position of a length-`len` sequence.
pub fn lssa_index_sets(len: usize) -> Vec<Vec<usize>> {
    (0..len)
        .map(|p| lssa_indices(p, len).expect("p < len").attended)
        .collect()
}

/// Total attended (query, key) pairs, by enumeration.
pub fn lssa_pair_total(len: usize) -> u64 {
    (0..len)
        .map(|p| lssa_indices(p, len).expect("p < len").attended.len() as u64)
        .sum()
}

/// Projection handles for one attention layer. `w_o` is absent for LSSA,
/// which re-concatenates heads without an output projection.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Option<Var>,
}

/// Stored LSSA weights plus the head/stack configuration.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub heads: usize,
    pub stack_depth: usize,
}

impl AttentionParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d_model: usize,
        heads: usize,
        stack_depth: usize,
    ) -> Result<Self> {
        check_heads(d_model, heads)?;
        if stack_depth == 0 {
            return Err(Error::invalid("lssa", "stack depth must be at least 1"));
        }
        let mut mk = |n: &str| store.add(format!("{prefix}.{n}"), xavier(rng, &[d_model, d_model], d_model, d_model));
        Ok(Self {
            w_q: mk("w_q"),
            w_k: mk("w_k"),
            w_v: mk("w_v"),
            heads,
            stack_depth,
        })
    }

    pub fn vars(&self, p: &Bound) -> AttentionVars {
        AttentionVars {
            w_q: p[self.w_q],
            w_k: p[self.w_k],
            w_v: p[self.w_v],
            w_o: None,
        }
    }
}

fn check_heads(d_model: usize, heads: usize) -> Result<()> {
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::invalid(
            "attention",
            format!("d_model {d_model} not divisible by {heads} heads"),
        ));
    }
    Ok(())
}

/// Output of [`lssa_attend`]: the attended sequence, the value matrix of the
/// first layer (consumed by [`gap`]) and the per-layer sparse attention
/// nodes, whose weights can be read back with `Graph::attention_weights`.
#[derive(Clone, Debug)]
pub struct LssaOutput {
    pub out: Var,
    pub values: Var,
    pub attention_nodes: Vec<Var>,
}

/// Logit divisor `sqrt(d_model / 2)`.
pub fn lssa_scale(d_model: usize) -> f64 {
    1.0 / (d_model as f64 / 2.0).sqrt()
}

/// Stacked LogSparse self-attention. Each layer projects to Q, K, V, splits
/// heads, attends within [`lssa_indices`] and re-concatenates heads; the
/// layer is applied `stack_depth` times with shared weights.
pub fn lssa_attend<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    w: AttentionVars,
    heads: usize,
    stack_depth: usize,
) -> Result<LssaOutput> {
    let (m, d) = match g.shape(x) {
        &[m, d] => (m, d),
        s => return Err(Error::invalid("lssa_attend", format!("expected a matrix, got {s:?}"))),
    };
    if m == 0 {
        return Err(Error::invalid("lssa_attend", "empty sequence"));
    }
    check_heads(d, heads)?;
    if stack_depth == 0 {
        return Err(Error::invalid("lssa_attend", "stack depth must be at least 1"));
    }
    let sets = Rc::new(lssa_index_sets(m));
    let scale = T::of(lssa_scale(d));
    let dh = d / heads;
    let mut cur = x;
    let mut values = None;
    let mut attention_nodes = Vec::with_capacity(stack_depth * heads);
    for _ in 0..stack_depth {
        let q = g.matmul(cur, w.w_q)?;
        let k = g.matmul(cur, w.w_k)?;
        let v = g.matmul(cur, w.w_v)?;
        values.get_or_insert(v);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let o = g.sparse_attention(qh, kh, vh, Rc::clone(&sets), scale)?;
            attention_nodes.push(o);
            outs.push(o);
        }
        cur = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    }
    Ok(LssaOutput {
        out: cur,
        values: values.expect("stack depth >= 1"),
        attention_nodes,
    })
}

/// Weights for a canonical multi-head attention layer.
#[derive(Clone, Debug)]
pub struct MhaParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
}

impl MhaParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        check_heads(d_model, heads)?;
        let mut mk = |n: &str| store.add(format!("{prefix}.{n}"), xavier(rng, &[d_model, d_model], d_model, d_model));
        Ok(Self {
            w_q: mk("w_q"),
            w_k: mk("w_k"),
            w_v: mk("w_v"),
            w_o: mk("w_o"),
            heads,
        })
    }

    pub fn vars(&self, p: &Bound) -> AttentionVars {
        AttentionVars {
            w_q: p[self.w_q],
            w_k: p[self.w_k],
            w_v: p[self.w_v],
            w_o: Some(p[self.w_o]),
        }
    }
}

/// Standard scaled dot-product multi-head attention (scale `1/sqrt(d_h)`).
/// With `causal`, query `i` only sees keys `j <= i`.
pub fn canonical_mha<T: Real>(
    g: &mut Graph<T>,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    w: AttentionVars,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    let (lq, d) = match g.shape(q_in) {
        &[a, b] => (a, b),
        s => return Err(Error::invalid("canonical_mha", format!("expected a matrix, got {s:?}"))),
    };
    let lk = g.shape(k_in)[0];
    if g.shape(k_in) != g.shape(v_in) || g.shape(k_in).get(1) != Some(&d) {
        return Err(Error::shape("canonical_mha", g.shape(k_in), g.shape(v_in)));
    }
    if causal && lq != lk {
        return Err(Error::invalid(
            "canonical_mha",
            format!("causal attention needs equal lengths, got {lq} and {lk}"),
        ));
    }
    if lq == 0 || lk == 0 {
        return Err(Error::invalid("canonical_mha", "empty sequence"));
    }
    check_heads(d, heads)?;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let q = g.matmul(q_in, w.w_q)?;
    let k = g.matmul(k_in, w.w_k)?;
    let v = g.matmul(v_in, w.w_v)?;
    let keep: Option<Vec<bool>> =
        causal.then(|| (0..lq * lk).map(|idx| idx % lk <= idx / lk).collect());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let logits = g.scale(logits, scale);
        let weights = match &keep {
            Some(mask) => g.masked_softmax(logits, mask)?,
            None => g.softmax(logits, 1)?,
        };
        outs.push(g.matmul(weights, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    match w.w_o {
        Some(w_o) => g.matmul(cat, w_o),
        None => Ok(cat),
    }
}

/// Global average pooling over the sequence axis: one value per channel.
pub fn gap<T: Real>(g: &mut Graph<T>, v: Var) -> Result<Var> {
    match g.shape(v) {
        &[m, _] if m > 0 => g.mean_rows(v),
        s => Err(Error::invalid("gap", format!("need a non-empty matrix, got {s:?}"))),
    }
}

#[derive(Clone, Debug)]
pub struct GateParams {
    /// `d_model x 2`
    pub w_g: ParamId,
    /// `2`
    pub b_g: ParamId,
}

impl GateParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, d_model: usize) -> Self {
        Self {
            w_g: store.add(format!("{prefix}.w_g"), xavier(rng, &[d_model, 2], d_model, 2)),
            b_g: store.add(format!("{prefix}.b_g"), Tensor::zeros(&[2])),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GateOutput {
    pub out: Var,
    /// `m x 2` softmax over the (sparse, pooled) branches; column 0 is `g`.
    pub distribution: Var,
}

/// Per position: `[g, 1-g] = softmax(lssa_p · W_g + b_g)` and
/// `out_p = g · lssa_p + (1 - g) · gap_p`.
pub fn adaptive_gate<T: Real>(
    g: &mut Graph<T>,
    lssa_out: Var,
    gap_out: Var,
    w_g: Var,
    b_g: Var,
) -> Result<GateOutput> {
    if g.shape(lssa_out) != g.shape(gap_out) {
        return Err(Error::shape("adaptive_gate", g.shape(lssa_out), g.shape(gap_out)));
    }
    let logits = g.matmul(lssa_out, w_g)?;
    let logits = g.add_bias(logits, b_g)?;
    let distribution = g.softmax(logits, 1)?;
    let gate = g.slice_cols(distribution, 0, 1)?;
    // gap + g * (lssa - gap) keeps the mix inside the operand interval.
    let diff = g.sub(lssa_out, gap_out)?;
    let scaled = g.mul_col(diff, gate)?;
    let out = g.add(gap_out, scaled)?;
    Ok(GateOutput { out, distribution })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_set_examples() {
        assert_eq!(lssa_indices(0, 1).unwrap().attended, vec![0]);
        assert_eq!(lssa_indices(8, 9).unwrap().attended, vec![0, 4, 6, 7, 8]);
        assert_eq!(lssa_indices(5, 6).unwrap().attended, vec![1, 3, 4, 5]);
        assert_eq!(lssa_indices(1, 2).unwrap().attended, vec![0, 1]);
        assert!(lssa_indices(4, 4).is_err());
    }

    #[test]
    fn scale_for_d8_is_half() {
        assert_eq!(lssa_scale(8), 0.5);
    }
}
