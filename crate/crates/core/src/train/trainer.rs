use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_ape_sum, loss_copy_sum, loss_pred_sum, ActiveTerms, LossWeights};
use super::optim::{clip_grad_norm, lr_schedule, Adam};
use super::TrainConfig;
use crate::config::{KeyValues, Settings};
use crate::data::{batch_iter, build_vocab, encode_corpus, Batch, Example, Triplet, Vocab};
use crate::error::{Error, Result};
use crate::labeling::label;
use crate::model::{ApeModel, Checkpoint, Forward};
use crate::nn::Ctx;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Batch-level denominators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Normalizers {
    /// Decoder targets, including the EOS step.
    pub gold_tokens: usize,
    pub mt_tokens: usize,
}

impl Normalizers {
    pub fn of<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut n = Normalizers {
            gold_tokens: 0,
            mt_tokens: 0,
        };
        for e in examples {
            n.gold_tokens += e.pe.len() + 1;
            n.mt_tokens += e.mt.len();
        }
        n
    }
}

/// One example's share of each batch loss.
pub struct ExampleLosses<'t, F: Real> {
    pub ape: Var<'t, F>,
    pub copy: Option<Var<'t, F>>,
    pub pred: Option<Var<'t, F>>,
}

pub fn active_terms(model: &ApeModel<impl Real>) -> ActiveTerms {
    let c = &model.config;
    ActiveTerms {
        copy: c.copynet && c.joint_training,
        pred: c.predictor,
    }
}

pub fn example_losses<'t, F: Real>(
    model: &ApeModel<F>,
    fwd: &Forward<'t, F>,
    ex: &Example,
    norms: Normalizers,
    cfg: &TrainConfig,
) -> Result<ExampleLosses<'t, F>> {
    let active = active_terms(model);
    let ape = loss_ape_sum(fwd.dec.p, &fwd.targets)?.scale(1.0 / norms.gold_tokens as f64);
    let copy = match fwd.copy_mass {
        Some(c) if active.copy => Some(loss_copy_sum(c, &ex.labels)?.scale(1.0 / norms.mt_tokens as f64)),
        _ => None,
    };
    let pred = match fwd.s {
        Some(s) if active.pred => {
            Some(loss_pred_sum(s, &ex.labels, cfg.pred_eps)?.scale(1.0 / norms.mt_tokens as f64))
        }
        _ => None,
    };
    Ok(ExampleLosses { ape, copy, pred })
}

impl<'t, F: Real> ExampleLosses<'t, F> {
    /// `(1 - alpha) (ape + lambda copy) + alpha pred` on the tape.
    pub fn combine(&self, w: LossWeights) -> Result<Var<'t, F>> {
        let mut inner = self.ape;
        if let Some(c) = self.copy {
            inner = inner.add(c.scale(w.lambda))?;
        }
        let mut total = inner.scale(1.0 - w.alpha);
        if let Some(p) = self.pred {
            total = total.add(p.scale(w.alpha))?;
        }
        Ok(total)
    }
}

/// Logged values of one optimisation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub l_ape: f64,
    pub l_copy: f64,
    pub l_pred: f64,
    pub l_all: f64,
    pub pred_acc: Option<f64>,
    pub token_acc: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Teacher-forced accuracies over a set of examples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accuracy {
    pub token_correct: usize,
    pub tokens: usize,
    pub pred_correct: usize,
    pub scored: usize,
}

impl Accuracy {
    fn add<F: Real>(&mut self, fwd: &Forward<'_, F>, ex: &Example) {
        let p = fwd.dec.p.value();
        for (t, &target) in fwd.targets.iter().enumerate() {
            self.token_correct += usize::from(argmax(p.row(t)) == target);
        }
        self.tokens += fwd.targets.len();
        if let Some(s) = fwd.s {
            for (&sk, &l) in s.value().data().iter().zip(&ex.labels) {
                self.pred_correct += usize::from((sk.as_f64() >= 0.5) == (l == 1));
            }
            self.scored += ex.labels.len();
        }
    }

    pub fn token_acc(&self) -> f64 {
        100.0 * self.token_correct as f64 / self.tokens.max(1) as f64
    }

    pub fn pred_acc(&self) -> Option<f64> {
        (self.scored > 0).then(|| 100.0 * self.pred_correct as f64 / self.scored as f64)
    }
}

/// Teacher-forced token and prediction accuracy, without dropout.
pub fn accuracy<F: Real>(model: &ApeModel<F>, examples: &[Example]) -> Result<Accuracy> {
    let mut acc = Accuracy::default();
    for ex in examples {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &model.params);
        let fwd = model.forward_teacher_forced(&ctx, ex)?;
        acc.add(&fwd, ex);
    }
    Ok(acc)
}

const DROPOUT_SALT: u64 = 0x5eed_d20f;

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(epoch + 1)
}

/// Owns the model, optimiser and batch schedule of one training run.
pub struct Trainer {
    pub settings: Settings,
    pub model: ApeModel<f32>,
    pub vocab: Vocab,
    pub examples: Vec<Example>,
    pub adam: Adam<f32>,
    epoch: u64,
    cursor: usize,
    batches: Vec<Batch>,
}

fn prepare(settings: &Settings, corpus: &[Triplet], vocab: &Vocab) -> Result<Vec<Example>> {
    let labelled: Vec<Triplet> = corpus
        .iter()
        .map(|t| {
            let mut t = t.clone();
            if t.labels.is_none() {
                t.labels = Some(label(&t.mt, &t.pe, settings.train.label_mode).labels);
            }
            t
        })
        .collect();
    encode_corpus(&labelled, vocab)
}

impl Trainer {
    /// Starts a fresh run; builds the vocabulary from the corpus when none is given.
    pub fn new(settings: &Settings, corpus: &[Triplet], vocab: Option<Vocab>) -> Result<Self> {
        settings.train.validate()?;
        let vocab = match vocab {
            Some(v) => v,
            None => build_vocab(corpus, 1)?,
        };
        let mut settings = settings.clone();
        if settings.model.vocab != 0 && settings.model.vocab != vocab.len() {
            return Err(Error::config(format!(
                "model.vocab = {} but the vocabulary has {} entries",
                settings.model.vocab,
                vocab.len()
            )));
        }
        settings.model.vocab = vocab.len();
        let examples = prepare(&settings, corpus, &vocab)?;
        let model = ApeModel::new(settings.model.clone(), settings.seed)?;
        let t = &settings.train;
        let adam = Adam::new(&model.params, t.beta1, t.beta2, t.adam_eps);
        let batches = batch_iter(&examples, t.batch_tokens, epoch_seed(settings.seed, 0))?;
        Ok(Trainer {
            settings,
            model,
            vocab,
            examples,
            adam,
            epoch: 0,
            cursor: 0,
            batches,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    fn next_batch(&mut self) -> Result<Batch> {
        if self.cursor >= self.batches.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.batches = batch_iter(
                &self.examples,
                self.settings.train.batch_tokens,
                epoch_seed(self.settings.seed, self.epoch),
            )?;
        }
        self.cursor += 1;
        Ok(self.batches[self.cursor - 1].clone())
    }

    /// One forward/backward pass over the next batch followed by an update.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let batch = self.next_batch()?;
        let step = self.adam.step + 1;
        let cfg = self.settings.train.clone();
        let norms = Normalizers::of(batch.examples.iter().map(|&i| &self.examples[i]));
        let active = active_terms(&self.model);
        self.model.params.zero_grads();
        let (mut l_ape, mut l_copy, mut l_pred) = (0.0, 0.0, 0.0);
        let mut acc = Accuracy::default();
        for (slot, &i) in batch.examples.iter().enumerate() {
            let ex = &self.examples[i];
            let tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(self.settings.seed ^ DROPOUT_SALT);
            rng.set_stream(step << 24 | slot as u64);
            let ctx = Ctx::new(&tape, &self.model.params).with_dropout(self.model.config.dropout, rng);
            let fwd = self.model.forward_teacher_forced(&ctx, ex)?;
            let losses = example_losses(&self.model, &fwd, ex, norms, &cfg)?;
            l_ape += losses.ape.value().item().as_f64();
            l_copy += losses.copy.map_or(0.0, |v| v.value().item().as_f64());
            l_pred += losses.pred.map_or(0.0, |v| v.value().item().as_f64());
            acc.add(&fwd, ex);
            let total = losses.combine(cfg.weights)?;
            let grads = tape.backward(total)?;
            self.model.params.accumulate(&grads);
        }
        let grad_norm = clip_grad_norm(&mut self.model.params, cfg.clip);
        let lr = cfg.lr_scale * lr_schedule(step, self.model.config.d, cfg.warmup)?;
        self.adam.step(&mut self.model.params, lr)?;
        Ok(StepMetrics {
            step,
            l_ape,
            l_copy,
            l_pred,
            l_all: super::loss::loss_all(l_ape, l_copy, l_pred, cfg.weights, active),
            pred_acc: acc.pred_acc(),
            token_acc: acc.token_acc(),
            lr,
            grad_norm,
        })
    }

    /// Runs `steps` updates, logging every `log_every` steps as JSON lines and
    /// checkpointing every `checkpoint_every` steps (and at the end).
    pub fn run(
        &mut self,
        steps: u64,
        mut log: Option<&mut dyn Write>,
        checkpoint: Option<&Path>,
    ) -> Result<Vec<StepMetrics>> {
        let mut out = Vec::with_capacity(steps as usize);
        let cfg = self.settings.train.clone();
        for _ in 0..steps {
            let m = self.step()?;
            let last = out.len() as u64 + 1 == steps;
            if let Some(w) = log.as_deref_mut() {
                if cfg.log_every > 0 && (m.step % cfg.log_every == 0 || last) {
                    let line = serde_json::to_string(&m).map_err(|e| Error::Numeric(e.to_string()))?;
                    writeln!(w, "{line}").map_err(|e| Error::io("<metrics log>", e))?;
                }
            }
            if let Some(path) = checkpoint {
                if (cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0) || last {
                    crate::model::write_checkpoint(path, &self.to_checkpoint())?;
                }
            }
            out.push(m);
        }
        Ok(out)
    }

    pub fn accuracy(&self) -> Result<Accuracy> {
        accuracy(&self.model, &self.examples)
    }

    /// Model, vocabulary, settings, optimiser moments and batch position.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint(&self.vocab);
        let mut kv = self.settings.to_key_values();
        kv.insert("state.step", self.adam.step);
        kv.insert("state.epoch", self.epoch);
        kv.insert("state.cursor", self.cursor);
        ck.config.extend(&kv);
        for id in self.model.params.ids() {
            let name = self.model.params.name(id);
            ck.tensors.push((format!("adam.m.{name}"), self.adam.m[id.index()].clone()));
            ck.tensors.push((format!("adam.v.{name}"), self.adam.v[id.index()].clone()));
        }
        ck
    }

    /// Continues a run from a checkpoint written by [`Trainer::to_checkpoint`].
    pub fn resume(ck: &Checkpoint, corpus: &[Triplet]) -> Result<Self> {
        let (model, vocab) = ApeModel::from_checkpoint(ck)?;
        let mut kv = KeyValues::default();
        let mut state = KeyValues::default();
        for (k, v) in ck.config.iter() {
            if k.starts_with("state.") {
                state.insert(k, v);
            } else {
                kv.insert(k, v);
            }
        }
        let mut settings = Settings::profile(crate::config::Profile::Paper);
        settings.apply(&kv)?;
        let get = |k: &str| -> Result<u64> {
            state
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing {k}")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad {k}")))
        };
        let t = &settings.train;
        let mut adam = Adam::new(&model.params, t.beta1, t.beta2, t.adam_eps);
        adam.step = get("state.step")?;
        for id in model.params.ids() {
            let name = model.params.name(id);
            let fetch = |prefix: &str| -> Result<Tensor<f32>> {
                ck.tensor(&format!("{prefix}{name}"))
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))
            };
            adam.m[id.index()] = fetch("adam.m.")?;
            adam.v[id.index()] = fetch("adam.v.")?;
        }
        let examples = prepare(&settings, corpus, &vocab)?;
        let epoch = get("state.epoch")?;
        let batches = batch_iter(&examples, t.batch_tokens, epoch_seed(settings.seed, epoch))?;
        Ok(Trainer {
            settings,
            model,
            vocab,
            examples,
            adam,
            epoch,
            cursor: get("state.cursor")? as usize,
            batches,
        })
    }
}
