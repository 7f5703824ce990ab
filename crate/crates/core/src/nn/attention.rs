use std::sync::Arc;

use super::{Ctx, Init, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Inputs of one attention call.
///
/// `padding_mask[k]` excludes key `k`; `scale` carries one factor per key
/// (ones over source columns, copying scores over mt columns).
#[derive(Clone, Copy)]
pub struct AttentionInputs<'t, 'm, F: Real> {
    pub queries: Var<'t, F>,
    pub keys: Var<'t, F>,
    pub values: Var<'t, F>,
    pub padding_mask: Option<&'m [bool]>,
    pub causal: bool,
    pub scale: Option<Var<'t, F>>,
}

impl<'t, 'm, F: Real> AttentionInputs<'t, 'm, F> {
    pub fn new(queries: Var<'t, F>, keys: Var<'t, F>, values: Var<'t, F>) -> Self {
        AttentionInputs {
            queries,
            keys,
            values,
            padding_mask: None,
            causal: false,
            scale: None,
        }
    }

    pub fn causal(mut self, on: bool) -> Self {
        self.causal = on;
        self
    }

    pub fn scaled(mut self, scale: Option<Var<'t, F>>) -> Self {
        self.scale = scale;
        self
    }

    pub fn padded(mut self, mask: Option<&'m [bool]>) -> Self {
        self.padding_mask = mask;
        self
    }
}

pub struct AttentionOutput<'t, F: Real> {
    pub out: Var<'t, F>,
    /// `[L_q, L_k]` weights, one matrix per head.
    pub weights: Vec<Var<'t, F>>,
}

/// Row-major `[lq, lk]` exclusion mask combining causality and padding.
/// Returns `None` when nothing is excluded.
pub fn causal_mask(lq: usize, lk: usize, causal: bool, padding: Option<&[bool]>) -> Option<Arc<[bool]>> {
    if !causal && padding.is_none_or(|p| !p.iter().any(|&x| x)) {
        return None;
    }
    let offset = lk.saturating_sub(lq);
    let mut m = vec![false; lq * lk];
    for r in 0..lq {
        for c in 0..lk {
            let future = causal && c > r + offset;
            let pad = padding.is_some_and(|p| p[c]);
            m[r * lk + c] = future || pad;
        }
    }
    Some(m.into())
}

fn check(inputs: &AttentionInputs<'_, '_, impl Real>) -> Result<(usize, usize, usize)> {
    let q = inputs.queries.shape();
    let k = inputs.keys.shape();
    let v = inputs.values.shape();
    if q.len() != 2 || k.len() != 2 || v.len() != 2 {
        return Err(Error::shape("attention expects matrices"));
    }
    if q[1] != k[1] || k[0] != v[0] {
        return Err(Error::shape(format!(
            "attention shapes q {q:?}, k {k:?}, v {v:?}"
        )));
    }
    if let Some(p) = inputs.padding_mask {
        if p.len() != k[0] {
            return Err(Error::shape(format!(
                "padding mask has {} entries for {} keys",
                p.len(),
                k[0]
            )));
        }
    }
    if let Some(s) = inputs.scale {
        if s.value().len() != k[0] {
            return Err(Error::shape(format!(
                "scale vector has {} entries for {} keys",
                s.value().len(),
                k[0]
            )));
        }
    }
    Ok((q[0], k[0], q[1]))
}

/// Single-head attention. Returns the attended values and the weights.
pub fn scaled_dot_attention<'t, F: Real>(
    inputs: AttentionInputs<'t, '_, F>,
) -> Result<(Var<'t, F>, Var<'t, F>)> {
    let (lq, lk, d) = check(&inputs)?;
    let energy = inputs
        .queries
        .matmul_nt(inputs.keys)?
        .scale(1.0 / (d as f64).sqrt());
    let mask = causal_mask(lq, lk, inputs.causal, inputs.padding_mask);
    let weights = energy.softmax_masked(mask, inputs.scale)?;
    Ok((weights.matmul(inputs.values)?, weights))
}

/// Multi-head attention with query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(init, &format!("{name}.q"), d, d, true),
            k: Linear::new(init, &format!("{name}.k"), d, d, true),
            v: Linear::new(init, &format!("{name}.v"), d, d, true),
            o: Linear::new(init, &format!("{name}.o"), d, d, true),
            heads,
        })
    }

    /// `inputs` carries the unprojected query and memory rows; `keys` and
    /// `values` are normally the same memory.
    pub fn forward<'t, F: Real>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        inputs: AttentionInputs<'t, '_, F>,
    ) -> Result<AttentionOutput<'t, F>> {
        let q = self.q.forward(ctx, inputs.queries)?;
        let k = self.k.forward(ctx, inputs.keys)?;
        let v = self.v.forward(ctx, inputs.values)?;
        let d = q.shape()[1];
        if d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {} heads",
                self.heads
            )));
        }
        let dh = d / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let head = AttentionInputs {
                queries: q.slice_cols(h * dh, dh)?,
                keys: k.slice_cols(h * dh, dh)?,
                values: v.slice_cols(h * dh, dh)?,
                ..inputs
            };
            let (o, w) = scaled_dot_attention(head)?;
            outs.push(ctx.dropout(o)?);
            weights.push(w);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            Var::concat_cols(&outs)?
        };
        Ok(AttentionOutput {
            out: self.o.forward(ctx, joined)?,
            weights,
        })
    }
}
