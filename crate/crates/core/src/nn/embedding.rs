use super::{Ctx, Init};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, Real, Var};

pub const LANG_SRC: usize = 0;
pub const LANG_MT: usize = 1;

/// Token, position and language tables shared by every input stream.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    pub token: ParamId,
    pub pos: ParamId,
    pub lang: ParamId,
    pub vocab: usize,
    pub max_len: usize,
    pub d: usize,
}

impl EmbeddingSet {
    pub fn new<F: Real>(init: &mut Init<'_, F>, vocab: usize, max_len: usize, d: usize) -> Self {
        let std = (d as f64).powf(-0.5);
        EmbeddingSet {
            token: init.normal("emb.token", &[vocab, d], std),
            pos: init.normal("emb.pos", &[max_len, d], std),
            lang: init.normal("emb.lang", &[2, d], std),
            vocab,
            max_len,
            d,
        }
    }

    /// Rows `E_token[tok_i] + E_pos[i] (+ E_lang[lang])`.
    pub fn embed<'t, F: Real>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        tokens: &[usize],
        lang: Option<usize>,
    ) -> Result<Var<'t, F>> {
        if tokens.is_empty() {
            return Err(Error::contract("cannot embed an empty sequence"));
        }
        if tokens.len() > self.max_len {
            return Err(Error::Length {
                len: tokens.len(),
                max: self.max_len,
            });
        }
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = ctx.p(self.token).gather_rows(tokens)?;
        let x = tok.add(ctx.p(self.pos).gather_rows(&positions)?)?;
        match lang {
            Some(l) => x.add(ctx.p(self.lang).gather_rows(&[l])?.reshape(&[self.d])?),
            None => Ok(x),
        }
    }
}
