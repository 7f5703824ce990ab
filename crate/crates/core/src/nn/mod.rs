//! Transformer building blocks.
//!
//! Every block only stores [`ParamId`]s; values are read from the
//! [`ParamStore`] carried by a [`Ctx`] at forward time, so the same block can
//! run against different stores (for example a perturbed copy in gradient
//! checks).

mod attention;
mod embedding;
mod layers;

use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use attention::{
    causal_mask, scaled_dot_attention, AttentionInputs, AttentionOutput, MultiHeadAttention,
};
pub use embedding::{EmbeddingSet, LANG_MT, LANG_SRC};
pub use layers::{DecoderLayer, DecoderStack, EncoderLayer, EncoderStack, FeedForward, MemoryRef};

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Forward-pass context: the tape being recorded, the parameter values and
/// an optional dropout source.
pub struct Ctx<'t, 's, F: Real> {
    pub tape: &'t Tape<F>,
    pub params: &'s ParamStore<F>,
    dropout: Option<(f64, RefCell<ChaCha8Rng>)>,
}

impl<'t, 's, F: Real> Ctx<'t, 's, F> {
    pub fn new(tape: &'t Tape<F>, params: &'s ParamStore<F>) -> Self {
        Ctx {
            tape,
            params,
            dropout: None,
        }
    }

    /// Enables inverted dropout with the given rate, drawing masks from `rng`.
    pub fn with_dropout(mut self, rate: f64, rng: ChaCha8Rng) -> Self {
        if rate > 0.0 {
            self.dropout = Some((rate, RefCell::new(rng)));
        }
        self
    }

    pub fn p(&self, id: ParamId) -> Var<'t, F> {
        self.tape.param(self.params, id)
    }

    pub fn dropout(&self, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let Some((rate, rng)) = &self.dropout else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - rate);
        let shape = x.shape();
        let n = shape.iter().product();
        let mut rng = rng.borrow_mut();
        let mask: Vec<F> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < *rate {
                    F::zero()
                } else {
                    F::of(keep)
                }
            })
            .collect();
        x.mul(self.tape.constant(Tensor::new(&shape, mask)?))
    }
}

/// Parameter initialisation helpers shared by every block.
pub struct Init<'a, F: Real> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<F: Real> Init<'_, F> {
    /// Glorot-uniform matrix.
    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| F::of(self.rng.random_range(-bound..bound)))
            .collect();
        self.store
            .add(name, Tensor::new(&[rows, cols], data).expect("sized"))
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::of(dist.sample(self.rng))).collect();
        self.store.add(name, Tensor::new(shape, data).expect("sized"))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, F::of(value)))
    }
}

/// Affine map `x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let weight = init.xavier(&format!("{name}.w"), input, output);
        let bias = bias.then(|| init.constant(&format!("{name}.b"), &[output], 0.0));
        Linear { weight, bias }
    }

    pub fn forward<'t, F: Real>(&self, ctx: &Ctx<'t, '_, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let y = x.matmul(ctx.p(self.weight))?;
        match self.bias {
            Some(b) => y.add(ctx.p(b)),
            None => Ok(y),
        }
    }
}

/// Layer normalisation parameters.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl LayerNorm {
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: init.constant(&format!("{name}.gain"), &[d], 1.0),
            bias: init.constant(&format!("{name}.bias"), &[d], 0.0),
        }
    }

    pub fn forward<'t, F: Real>(&self, ctx: &Ctx<'t, '_, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        x.layer_norm(ctx.p(self.gain), ctx.p(self.bias), LAYER_NORM_EPS)
    }
}

#[cfg(test)]
mod tests;
