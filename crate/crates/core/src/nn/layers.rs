use super::{AttentionInputs, Ctx, Init, LayerNorm, Linear, MultiHeadAttention};
use crate::error::Result;
use crate::tensor::{Real, Var};

/// Position-wise `relu(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: &str, d: usize, filter: usize) -> Self {
        FeedForward {
            inner: Linear::new(init, &format!("{name}.inner"), d, filter, true),
            outer: Linear::new(init, &format!("{name}.outer"), filter, d, true),
        }
    }

    pub fn forward<'t, F: Real>(&self, ctx: &Ctx<'t, '_, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let h = ctx.dropout(self.inner.forward(ctx, x)?.relu())?;
        self.outer.forward(ctx, h)
    }
}

/// Pre-norm self-attention block followed by a feed-forward block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: &str, d: usize, heads: usize, filter: usize) -> Result<Self> {
        Ok(EncoderLayer {
            attn_norm: LayerNorm::new(init, &format!("{name}.attn_norm"), d),
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), d, heads)?,
            ffn_norm: LayerNorm::new(init, &format!("{name}.ffn_norm"), d),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, filter),
        })
    }

    /// Returns the new residual stream and the per-head self-attention weights.
    pub fn forward<'t, F: Real>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        x: Var<'t, F>,
        scale: Option<Var<'t, F>>,
    ) -> Result<(Var<'t, F>, Vec<Var<'t, F>>)> {
        let n = self.attn_norm.forward(ctx, x)?;
        let a = self
            .attn
            .forward(ctx, AttentionInputs::new(n, n, n).scaled(scale))?;
        let x = x.add(ctx.dropout(a.out)?)?;
        let f = self.ffn.forward(ctx, self.ffn_norm.forward(ctx, x)?)?;
        Ok((x.add(ctx.dropout(f)?)?, a.weights))
    }
}

/// A memory the decoder attends to, with its optional key scaling.
#[derive(Clone, Copy)]
pub struct MemoryRef<'t, F: Real> {
    pub states: Var<'t, F>,
    pub scale: Option<Var<'t, F>>,
}

#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
}

/// Causal self-attention, one cross-attention per memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross: Vec<CrossBlock>,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        name: &str,
        d: usize,
        heads: usize,
        filter: usize,
        memories: usize,
    ) -> Result<Self> {
        let self_norm = LayerNorm::new(init, &format!("{name}.self_norm"), d);
        let self_attn = MultiHeadAttention::new(init, &format!("{name}.self_attn"), d, heads)?;
        let cross = (0..memories)
            .map(|m| {
                Ok(CrossBlock {
                    norm: LayerNorm::new(init, &format!("{name}.cross{m}_norm"), d),
                    attn: MultiHeadAttention::new(init, &format!("{name}.cross{m}"), d, heads)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DecoderLayer {
            self_norm,
            self_attn,
            cross,
            ffn_norm: LayerNorm::new(init, &format!("{name}.ffn_norm"), d),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, filter),
        })
    }

    /// Returns the new stream and, per memory, the per-head cross-attention weights.
    pub fn forward<'t, F: Real>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        y: Var<'t, F>,
        memories: &[MemoryRef<'t, F>],
    ) -> Result<(Var<'t, F>, Vec<Vec<Var<'t, F>>>)> {
        let n = self.self_norm.forward(ctx, y)?;
        let a = self
            .self_attn
            .forward(ctx, AttentionInputs::new(n, n, n).causal(true))?;
        let mut y = y.add(ctx.dropout(a.out)?)?;
        let mut maps = Vec::with_capacity(self.cross.len());
        for (block, mem) in self.cross.iter().zip(memories) {
            let n = block.norm.forward(ctx, y)?;
            let c = block.attn.forward(
                ctx,
                AttentionInputs::new(n, mem.states, mem.states).scaled(mem.scale),
            )?;
            y = y.add(ctx.dropout(c.out)?)?;
            maps.push(c.weights);
        }
        let f = self.ffn.forward(ctx, self.ffn_norm.forward(ctx, y)?)?;
        Ok((y.add(ctx.dropout(f)?)?, maps))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl EncoderStack {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        name: &str,
        layers: usize,
        d: usize,
        heads: usize,
        filter: usize,
    ) -> Result<Self> {
        Ok(EncoderStack {
            layers: (0..layers)
                .map(|i| EncoderLayer::new(init, &format!("{name}.{i}"), d, heads, filter))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(init, &format!("{name}.norm"), d),
        })
    }

    /// Runs every layer with the same key scaling.
    pub fn forward<'t, F: Real>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        x: Var<'t, F>,
        scale: Option<Var<'t, F>>,
    ) -> Result<(Var<'t, F>, Vec<Vec<Var<'t, F>>>)> {
        let mut x = ctx.dropout(x)?;
        let mut maps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, w) = layer.forward(ctx, x, scale)?;
            x = next;
            maps.push(w);
        }
        Ok((self.norm.forward(ctx, x)?, maps))
    }
}

#[derive(Clone, Debug)]
pub struct DecoderStack {
    pub layers: Vec<DecoderLayer>,
    pub norm: LayerNorm,
}

impl DecoderStack {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        name: &str,
        layers: usize,
        d: usize,
        heads: usize,
        filter: usize,
        memories: usize,
    ) -> Result<Self> {
        Ok(DecoderStack {
            layers: (0..layers)
                .map(|i| DecoderLayer::new(init, &format!("{name}.{i}"), d, heads, filter, memories))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(init, &format!("{name}.norm"), d),
        })
    }

    /// Output states plus `maps[layer][memory][head]` cross-attention weights.
    pub fn forward<'t, F: Real>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        y: Var<'t, F>,
        memories: &[MemoryRef<'t, F>],
    ) -> Result<(Var<'t, F>, Vec<Vec<Vec<Var<'t, F>>>>)> {
        let mut y = ctx.dropout(y)?;
        let mut maps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, w) = layer.forward(ctx, y, memories)?;
            y = next;
            maps.push(w);
        }
        Ok((self.norm.forward(ctx, y)?, maps))
    }
}
