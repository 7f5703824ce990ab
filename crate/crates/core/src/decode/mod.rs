//! Beam search over the interpolated copy/generate distribution.

use std::cmp::Ordering;

use crate::config::parse_value;
use crate::data::{Triplet, Vocab, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{ApeModel, EncodedValues};
use crate::tensor::Real;

/// Beam width, length-penalty exponent and optional length cap.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    pub alpha_lp: f64,
    /// `None` means `1.5 (I + K) + 5`.
    pub max_len: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 4,
            alpha_lp: 1.0,
            max_len: None,
        }
    }
}

impl DecodeConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "beam" => {
                self.beam = parse_value(key, v)?;
                if self.beam == 0 {
                    return Err(Error::config("decode.beam must be at least 1"));
                }
            }
            "alpha_lp" => self.alpha_lp = parse_value(key, v)?,
            "max_len" => {
                self.max_len = if v == "auto" {
                    None
                } else {
                    Some(parse_value(key, v)?)
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("beam", self.beam.to_string()),
            ("alpha_lp", self.alpha_lp.to_string()),
            (
                "max_len",
                self.max_len.map_or_else(|| "auto".to_string(), |m| m.to_string()),
            ),
        ]
    }

    pub fn resolved_max_len(&self, src_len: usize, mt_len: usize) -> usize {
        self.max_len
            .unwrap_or_else(|| (1.5 * (src_len + mt_len) as f64).floor() as usize + 5)
    }
}

/// `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// Next-token log-probabilities given the tokens generated so far.
pub trait StepScorer {
    fn vocab(&self) -> usize;
    /// `prefix` excludes the start symbol.
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    /// `log_prob / length_penalty(tokens.len())`.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamOutput {
    pub best: Hypothesis,
    /// No hypothesis finished within the length cap; `best` is a partial one.
    pub truncated: bool,
}

fn better(a: &Hypothesis, b: &Hypothesis) -> bool {
    match a.score.total_cmp(&b.score) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.tokens < b.tokens,
    }
}

fn hypothesis(tokens: Vec<usize>, log_prob: f64, alpha: f64) -> Hypothesis {
    let finished = tokens.last() == Some(&EOS);
    let score = log_prob / length_penalty(tokens.len().max(1), alpha);
    Hypothesis {
        tokens,
        log_prob,
        finished,
        score,
    }
}

/// Keeps the `beam` best non-final expansions per step.
///
/// The end-of-sequence completion of every live hypothesis is scored as a
/// finished candidate. Expansions are ranked by cumulative log-probability,
/// then token id, then hypothesis index. The search stops once no live
/// hypothesis can beat the best finished one.
pub fn beam_search<S: StepScorer + ?Sized>(
    scorer: &S,
    beam: usize,
    alpha: f64,
    max_len: usize,
) -> Result<BeamOutput> {
    if beam == 0 {
        return Err(Error::contract("beam must be at least 1"));
    }
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let vocab = scorer.vocab();
    let mut alive = vec![(Vec::<usize>::new(), 0.0f64)];
    let mut best_finished: Option<Hypothesis> = None;
    for t in 1..=max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * vocab);
        for (h, (tokens, lp)) in alive.iter().enumerate() {
            let step = scorer.log_probs(tokens)?;
            if step.len() != vocab {
                return Err(Error::shape(format!(
                    "scorer returned {} log-probabilities for a vocabulary of {vocab}",
                    step.len()
                )));
            }
            for (tok, &s) in step.iter().enumerate() {
                if s != f64::NEG_INFINITY {
                    cands.push((lp + s, tok, h));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(beam);
        for &(lp, tok, h) in &cands {
            if tok != EOS && next.len() == beam {
                continue;
            }
            let mut tokens = alive[h].0.clone();
            tokens.push(tok);
            if tok == EOS {
                let hyp = hypothesis(tokens, lp, alpha);
                if best_finished.as_ref().is_none_or(|b| better(&hyp, b)) {
                    best_finished = Some(hyp);
                }
            } else {
                next.push((tokens, lp));
            }
        }
        if t == max_len || next.is_empty() {
            alive = next;
            break;
        }
        alive = next;
        if let Some(b) = &best_finished {
            let lp_max = length_penalty(t + 1, alpha).max(length_penalty(max_len, alpha));
            let bound = alive.iter().map(|(_, lp)| lp / lp_max).fold(f64::NEG_INFINITY, f64::max);
            if b.score > bound {
                alive.clear();
                break;
            }
        }
    }
    if let Some(best) = best_finished {
        return Ok(BeamOutput {
            best,
            truncated: false,
        });
    }
    let best = alive
        .into_iter()
        .map(|(tokens, lp)| hypothesis(tokens, lp, alpha))
        .reduce(|a, b| if better(&b, &a) { b } else { a })
        .ok_or_else(|| Error::Numeric("every continuation has zero probability".into()))?;
    Ok(BeamOutput {
        best,
        truncated: true,
    })
}

/// Repeated argmax until EOS or the length cap.
pub fn greedy<S: StepScorer + ?Sized>(scorer: &S, max_len: usize) -> Result<Vec<usize>> {
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let step = scorer.log_probs(&tokens)?;
        let mut best = 0;
        for (i, &s) in step.iter().enumerate() {
            if s > step[best] {
                best = i;
            }
        }
        tokens.push(best);
        if best == EOS {
            break;
        }
    }
    Ok(tokens)
}

/// Scores continuations with a trained network for one (src, mt) input.
///
/// Padding and the start symbol are never produced; the remaining
/// probabilities are renormalised.
pub struct ModelScorer<'m, F: Real> {
    model: &'m ApeModel<F>,
    enc: EncodedValues<F>,
}

impl<'m, F: Real> ModelScorer<'m, F> {
    pub fn new(model: &'m ApeModel<F>, src: &[usize], mt: &[usize]) -> Result<Self> {
        Ok(ModelScorer {
            model,
            enc: model.encode_values(src, mt)?,
        })
    }

    pub fn encoded(&self) -> &EncodedValues<F> {
        &self.enc
    }
}

impl<F: Real> StepScorer for ModelScorer<'_, F> {
    fn vocab(&self) -> usize {
        self.model.config.vocab
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS);
        input.extend_from_slice(prefix);
        let out = self.model.decode_step(&self.enc, &input)?;
        let mut p: Vec<f64> = out.probs.iter().map(|x| x.as_f64()).collect();
        p[PAD] = 0.0;
        p[BOS] = 0.0;
        let z: f64 = p.iter().sum();
        if !(z > 0.0) {
            return Err(Error::Numeric("output distribution has no mass".into()));
        }
        Ok(p.into_iter().map(|x| (x / z).ln()).collect())
    }
}

/// Beam-decodes one input; the result excludes the trailing EOS.
pub fn decode_one<F: Real>(
    model: &ApeModel<F>,
    src: &[usize],
    mt: &[usize],
    cfg: &DecodeConfig,
) -> Result<BeamOutput> {
    let scorer = ModelScorer::new(model, src, mt)?;
    let max_len = cfg.resolved_max_len(src.len(), mt.len());
    beam_search(&scorer, cfg.beam, cfg.alpha_lp, max_len)
}

/// Token ids of a hypothesis without the end symbol.
pub fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.split_last() {
        Some((&EOS, rest)) => rest,
        _ => tokens,
    }
}

/// Decodes many inputs on up to `threads` worker threads, preserving order.
pub fn decode_all<F: Real>(
    model: &ApeModel<F>,
    inputs: &[(Vec<usize>, Vec<usize>)],
    cfg: &DecodeConfig,
    threads: usize,
) -> Result<Vec<BeamOutput>> {
    let threads = threads.clamp(1, inputs.len().max(1));
    let chunk = inputs.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<BeamOutput>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(src, mt)| decode_one(model, src, mt, cfg))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("decoder thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Beam-decodes every triplet's (src, mt) and returns surface tokens.
pub fn translate<F: Real>(
    model: &ApeModel<F>,
    vocab: &Vocab,
    corpus: &[Triplet],
    cfg: &DecodeConfig,
    threads: usize,
) -> Result<Vec<Vec<String>>> {
    let inputs: Vec<_> = corpus.iter().map(|t| (vocab.encode(&t.src), vocab.encode(&t.mt))).collect();
    Ok(decode_all(model, &inputs, cfg, threads)?
        .iter()
        .map(|out| vocab.decode(strip_eos(&out.best.tokens)))
        .collect())
}

/// Predictor copying scores for every triplet.
pub fn predict_scores<F: Real>(model: &ApeModel<F>, vocab: &Vocab, corpus: &[Triplet]) -> Result<Vec<Vec<f64>>> {
    corpus
        .iter()
        .map(|t| {
            let enc = model.encode_values(&vocab.encode(&t.src), &vocab.encode(&t.mt))?;
            enc.s
                .map(|s| s.to_f64())
                .ok_or_else(|| Error::config("the model has no predictor"))
        })
        .collect()
}
