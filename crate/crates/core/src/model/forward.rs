use super::{ApeModel, Encoders};
use crate::data::{Example, BOS};
use crate::error::{Error, Result};
use crate::nn::{Ctx, MemoryRef, LANG_MT, LANG_SRC};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Encoder output on a tape.
#[derive(Clone)]
pub struct Encoded<'t, F: Real> {
    /// Copying scores as fed to the scaling masks (after detaching or overriding).
    pub s: Option<Var<'t, F>>,
    /// `[H_inter]` in interactive mode, `[H_src, H_mt]` otherwise.
    pub states: Vec<Var<'t, F>>,
    /// Memories in the order the decoder attends to them.
    pub memories: Vec<MemoryRef<'t, F>>,
    /// mt rows of the encoder output, used by the copy head.
    pub h_mt: Var<'t, F>,
    pub copy_scale: Option<Var<'t, F>>,
    pub src_len: usize,
    pub mt: Vec<usize>,
    /// Self-attention weights of the encoder that sees mt, per layer and head.
    pub attention: Vec<Vec<Var<'t, F>>>,
}

/// Decoder output for every position of a prefix.
pub struct Decoded<'t, F: Real> {
    pub h: Var<'t, F>,
    pub p_gen: Var<'t, F>,
    pub p_copy: Option<Var<'t, F>>,
    /// `[T, 1]` copy gate.
    pub gamma: Option<Var<'t, F>>,
    /// Final `[T, V]` distribution.
    pub p: Var<'t, F>,
    /// `[layer][memory][head]` cross-attention weights.
    pub cross_attention: Vec<Vec<Vec<Var<'t, F>>>>,
}

/// A teacher-forced pass over one example.
pub struct Forward<'t, F: Real> {
    /// Predictor output before any detaching; trained by the prediction loss.
    pub s: Option<Var<'t, F>>,
    pub h_pred: Option<Var<'t, F>>,
    pub enc: Encoded<'t, F>,
    pub dec: Decoded<'t, F>,
    /// `[K]` copy mass `sum_j gamma_j P_copy_j` over the pe steps (the
    /// end-of-sequence step is excluded).
    pub copy_mass: Option<Var<'t, F>>,
    pub targets: Vec<usize>,
}

impl<F: Real> ApeModel<F> {
    fn check_lengths(&self, seqs: &[&[usize]]) -> Result<()> {
        for s in seqs {
            if s.len() > self.config.max_len {
                return Err(Error::Length {
                    len: s.len(),
                    max: self.config.max_len,
                });
            }
            if let Some(&bad) = s.iter().find(|&&t| t >= self.config.vocab) {
                return Err(Error::Index {
                    index: bad,
                    size: self.config.vocab,
                });
            }
        }
        Ok(())
    }

    /// Copying scores `s = sigmoid(H_pred[mt rows] W_s)` and the predictor states.
    pub fn predictor_forward<'t>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        src: &[usize],
        mt: &[usize],
    ) -> Result<(Var<'t, F>, Var<'t, F>)> {
        let pred = self
            .net
            .predictor
            .as_ref()
            .ok_or_else(|| Error::config("the predictor is disabled"))?;
        if src.is_empty() || mt.is_empty() {
            return Err(Error::contract("the predictor needs non-empty src and mt"));
        }
        self.check_lengths(&[src, mt])?;
        let emb = &self.net.emb;
        let x = Var::concat_rows(&[emb.embed(ctx, src, Some(LANG_SRC))?, emb.embed(ctx, mt, Some(LANG_MT))?])?;
        let (h, _) = pred.stack.forward(ctx, x, None)?;
        let s = h
            .slice_rows(src.len(), mt.len())?
            .matmul(ctx.p(pred.w_s))?
            .sigmoid()
            .reshape(&[mt.len()])?;
        Ok((s, h))
    }

    /// Encodes src and mt; `s` scales attention to the mt positions.
    pub fn encode<'t>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        src: &[usize],
        mt: &[usize],
        s: Option<Var<'t, F>>,
    ) -> Result<Encoded<'t, F>> {
        let c = &self.config;
        if s.is_some() && !c.predictor {
            return Err(Error::config("copying scores given but the predictor is disabled"));
        }
        if src.is_empty() || mt.is_empty() {
            return Err(Error::contract("cannot encode an empty src or mt"));
        }
        self.check_lengths(&[src, mt])?;
        if let Some(v) = s {
            if v.shape() != [mt.len()] {
                return Err(Error::shape(format!("{:?} scores for {} mt tokens", v.shape(), mt.len())));
            }
        }
        let emb = &self.net.emb;
        let (i, k) = (src.len(), mt.len());
        let enc = match &self.net.encoders {
            Encoders::Interactive(stack) => {
                let full = match s {
                    Some(s) => {
                        let ones = ctx.tape.constant(Tensor::full(&[i], F::one()));
                        Some(Var::concat_rows(&[ones, s])?)
                    }
                    None => None,
                };
                let x = Var::concat_rows(&[emb.embed(ctx, src, Some(LANG_SRC))?, emb.embed(ctx, mt, Some(LANG_MT))?])?;
                let (h, attention) = stack.forward(ctx, x, full.filter(|_| c.mask_encoder))?;
                Encoded {
                    s,
                    states: vec![h],
                    memories: vec![MemoryRef {
                        states: h,
                        scale: full.filter(|_| c.mask_decoder),
                    }],
                    h_mt: h.slice_rows(i, k)?,
                    copy_scale: s.filter(|_| c.mask_copynet),
                    src_len: i,
                    mt: mt.to_vec(),
                    attention,
                }
            }
            Encoders::Separate { src: es, mt: em } => {
                let (hs, _) = es.forward(ctx, emb.embed(ctx, src, None)?, None)?;
                let (hm, attention) = em.forward(ctx, emb.embed(ctx, mt, None)?, s.filter(|_| c.mask_encoder))?;
                let src_mem = MemoryRef { states: hs, scale: None };
                let mt_mem = MemoryRef {
                    states: hm,
                    scale: s.filter(|_| c.mask_decoder),
                };
                Encoded {
                    s,
                    states: vec![hs, hm],
                    memories: if c.src_first {
                        vec![src_mem, mt_mem]
                    } else {
                        vec![mt_mem, src_mem]
                    },
                    h_mt: hm,
                    copy_scale: s.filter(|_| c.mask_copynet),
                    src_len: i,
                    mt: mt.to_vec(),
                    attention,
                }
            }
        };
        Ok(enc)
    }

    /// Runs the decoder over `input` (starting with BOS) and forms the output
    /// distribution at every position.
    pub fn decode<'t>(&self, ctx: &Ctx<'t, '_, F>, enc: &Encoded<'t, F>, input: &[usize]) -> Result<Decoded<'t, F>> {
        if input.first() != Some(&BOS) {
            return Err(Error::contract("decoder input must start with BOS"));
        }
        if enc.mt.is_empty() {
            return Err(Error::contract("empty memory"));
        }
        self.check_lengths(&[input])?;
        let d = self.config.d;
        let y = self.net.emb.embed(ctx, input, None)?;
        let (h, cross_attention) = self.net.decoder.forward(ctx, y, &enc.memories)?;
        let p_gen = h.matmul_nt(ctx.p(self.net.emb.token))?.softmax()?;
        let Some(head) = &self.net.copy else {
            return Ok(Decoded {
                h,
                p_gen,
                p_copy: None,
                gamma: None,
                p: p_gen,
                cross_attention,
            });
        };
        let q = h.matmul(ctx.p(head.w_q))?;
        let k = enc.h_mt.matmul(ctx.p(head.w_k))?;
        let g = q.matmul_nt(k)?.scale(1.0 / (d as f64).sqrt());
        let p_copy = g.softmax_masked(None, enc.copy_scale)?;
        let context = p_copy.matmul(enc.h_mt)?;
        let gamma = h
            .matmul(ctx.p(head.w_h))?
            .add(context.matmul(ctx.p(head.w_c))?)?
            .add(ctx.p(head.bias))?
            .sigmoid();
        let v = self.config.vocab;
        let mut onehot = Tensor::zeros(&[enc.mt.len(), v]);
        for (pos, &tok) in enc.mt.iter().enumerate() {
            onehot.data_mut()[pos * v + tok] = F::one();
        }
        let copy_tok = p_copy.matmul(ctx.tape.constant(onehot))?;
        let p = copy_tok
            .mul_rows(gamma)?
            .add(p_gen.mul_rows(gamma.affine(-1.0, 1.0))?)?;
        Ok(Decoded {
            h,
            p_gen,
            p_copy: Some(p_copy),
            gamma: Some(gamma),
            p,
            cross_attention,
        })
    }

    /// Teacher-forced pass with the predictor's own scores.
    pub fn forward_teacher_forced<'t>(&self, ctx: &Ctx<'t, '_, F>, ex: &Example) -> Result<Forward<'t, F>> {
        self.forward_with_scores(ctx, ex, None)
    }

    /// Teacher-forced pass; `frozen` replaces the predictor's scores in the
    /// scaling masks (the predictor still runs).
    pub fn forward_with_scores<'t>(
        &self,
        ctx: &Ctx<'t, '_, F>,
        ex: &Example,
        frozen: Option<&[f64]>,
    ) -> Result<Forward<'t, F>> {
        if ex.labels.len() != ex.mt.len() {
            return Err(Error::contract(format!(
                "{} labels for {} mt tokens",
                ex.labels.len(),
                ex.mt.len()
            )));
        }
        let (s, h_pred) = if self.config.predictor {
            let (s, h) = self.predictor_forward(ctx, &ex.src, &ex.mt)?;
            (Some(s), Some(h))
        } else {
            (None, None)
        };
        let scale = match (frozen, s) {
            (Some(values), _) => {
                if !self.config.predictor {
                    return Err(Error::config("copying scores given but the predictor is disabled"));
                }
                Some(ctx.tape.constant(Tensor::from_f64(&[values.len()], values)?))
            }
            (None, Some(s)) if !self.config.joint_training => Some(ctx.tape.detach(s)),
            (None, s) => s,
        };
        let enc = self.encode(ctx, &ex.src, &ex.mt, scale)?;
        let dec = self.decode(ctx, &enc, &ex.decoder_input())?;
        let j = ex.pe.len();
        let copy_mass = match (dec.gamma, dec.p_copy) {
            (Some(_), Some(_)) if j == 0 => Some(ctx.tape.constant(Tensor::zeros(&[ex.mt.len()]))),
            (Some(g), Some(p)) => Some(
                g.slice_rows(0, j)?
                    .matmul_tn(p.slice_rows(0, j)?)?
                    .reshape(&[ex.mt.len()])?,
            ),
            _ => None,
        };
        Ok(Forward {
            s,
            h_pred,
            enc,
            dec,
            copy_mass,
            targets: ex.targets(),
        })
    }
}

/// Encoder results detached from any tape, for step-wise decoding.
#[derive(Clone, Debug)]
pub struct EncodedValues<F> {
    pub s: Option<Tensor<F>>,
    pub memories: Vec<(Tensor<F>, Option<Tensor<F>>)>,
    pub h_mt: Tensor<F>,
    pub copy_scale: Option<Tensor<F>>,
    pub src_len: usize,
    pub mt: Vec<usize>,
}

impl<F: Real> EncodedValues<F> {
    pub fn capture(enc: &Encoded<'_, F>) -> Self {
        let val = |v: Var<'_, F>| (*v.value()).clone();
        EncodedValues {
            s: enc.s.map(val),
            memories: enc.memories.iter().map(|m| (val(m.states), m.scale.map(val))).collect(),
            h_mt: val(enc.h_mt),
            copy_scale: enc.copy_scale.map(val),
            src_len: enc.src_len,
            mt: enc.mt.clone(),
        }
    }

    /// Re-enters the values on a tape as constants.
    pub fn lift<'t>(&self, tape: &'t Tape<F>) -> Encoded<'t, F> {
        let c = |t: &Tensor<F>| tape.constant(t.clone());
        let memories: Vec<MemoryRef<'t, F>> = self
            .memories
            .iter()
            .map(|(s, sc)| MemoryRef {
                states: c(s),
                scale: sc.as_ref().map(c),
            })
            .collect();
        Encoded {
            s: self.s.as_ref().map(c),
            states: memories.iter().map(|m| m.states).collect(),
            memories,
            h_mt: c(&self.h_mt),
            copy_scale: self.copy_scale.as_ref().map(c),
            src_len: self.src_len,
            mt: self.mt.clone(),
            attention: Vec::new(),
        }
    }
}

/// Output distribution for the next token.
#[derive(Clone, Debug)]
pub struct StepOutput<F> {
    pub probs: Vec<F>,
    pub gamma: Option<F>,
    pub p_copy: Option<Vec<F>>,
}

impl<F: Real> ApeModel<F> {
    /// Runs the predictor (when enabled) and encoders once for decoding.
    pub fn encode_values(&self, src: &[usize], mt: &[usize]) -> Result<EncodedValues<F>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let s = if self.config.predictor {
            Some(self.predictor_forward(&ctx, src, mt)?.0)
        } else {
            None
        };
        Ok(EncodedValues::capture(&self.encode(&ctx, src, mt, s)?))
    }

    /// Distribution of the token following `prefix` (which starts with BOS).
    pub fn decode_step(&self, enc: &EncodedValues<F>, prefix: &[usize]) -> Result<StepOutput<F>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let lifted = enc.lift(&tape);
        let dec = self.decode(&ctx, &lifted, prefix)?;
        let last = prefix.len() - 1;
        let row = |v: Var<'_, F>| v.value().row(last).to_vec();
        Ok(StepOutput {
            probs: row(dec.p),
            gamma: dec.gamma.map(|g| g.value().data()[last]),
            p_copy: dec.p_copy.map(row),
        })
    }
}

/// Plain values of a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub s: Option<Vec<f64>>,
    pub h_pred: Option<Tensor<f64>>,
    pub states: Vec<Tensor<f64>>,
    pub h_pe: Tensor<f64>,
    /// One gate value per decoder step.
    pub gamma: Option<Vec<f64>>,
    pub p_copy: Option<Tensor<f64>>,
    pub p_gen: Tensor<f64>,
    pub p: Tensor<f64>,
    pub cross_attention: Vec<Vec<Vec<Tensor<f64>>>>,
    pub src_len: usize,
    /// Number of pe tokens; the decoder rows are one longer.
    pub pe_len: usize,
}

impl ForwardTrace {
    pub fn capture<F: Real>(f: &Forward<'_, F>) -> Self {
        let t = |v: Var<'_, F>| v.value().cast::<f64>();
        ForwardTrace {
            s: f.s.map(|v| v.value().to_f64()),
            h_pred: f.h_pred.map(t),
            states: f.enc.states.iter().map(|&v| t(v)).collect(),
            h_pe: t(f.dec.h),
            gamma: f.dec.gamma.map(|v| v.value().to_f64()),
            p_copy: f.dec.p_copy.map(t),
            p_gen: t(f.dec.p_gen),
            p: t(f.dec.p),
            cross_attention: f
                .dec
                .cross_attention
                .iter()
                .map(|l| l.iter().map(|m| m.iter().map(|&h| t(h)).collect()).collect())
                .collect(),
            src_len: f.enc.src_len,
            pe_len: f.targets.len() - 1,
        }
    }
}

/// `c_k = sum_j gamma_j P_copy_j(k)` over the pe steps; empty when the copy head is off.
pub fn copy_mass(trace: &ForwardTrace) -> Vec<f64> {
    let (Some(gamma), Some(p)) = (&trace.gamma, &trace.p_copy) else {
        return Vec::new();
    };
    let k = p.cols();
    let mut c = vec![0.0; k];
    for (j, &g) in gamma.iter().enumerate().take(trace.pe_len) {
        for (ck, &pk) in c.iter_mut().zip(p.row(j)) {
            *ck += g * pk;
        }
    }
    c
}
