//! Losses, optimiser, learning-rate schedule and the training loop.

mod loss;
mod optim;
mod trainer;

pub use loss::{
    loss_all, loss_ape, loss_ape_sum, loss_copy, loss_copy_sum, loss_pred, loss_pred_sum, ActiveTerms,
    LossWeights, PROB_FLOOR,
};
pub use optim::{clip_grad_norm, lr_schedule, Adam};
pub use trainer::{accuracy, active_terms, example_losses, Accuracy, ExampleLosses, Normalizers, StepMetrics, Trainer};

use crate::config::{parse_value, Profile};
use crate::error::{Error, Result};
use crate::labeling::LabelMode;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// Multiplier on the warmup schedule.
    pub lr_scale: f64,
    pub warmup: u64,
    pub steps: u64,
    /// Padded tokens per batch.
    pub batch_tokens: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Clamp for scores inside the prediction loss.
    pub pred_eps: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub label_mode: LabelMode,
}

impl TrainConfig {
    pub fn profile(p: Profile) -> Self {
        let (warmup, steps, batch_tokens) = match p {
            Profile::Paper => (4000, 100_000, 25_000),
            Profile::Test => (400, 3000, 1000),
        };
        TrainConfig {
            weights: LossWeights::default(),
            lr_scale: 1.0,
            warmup,
            steps,
            batch_tokens,
            clip: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            pred_eps: 1e-9,
            log_every: 100,
            checkpoint_every: 0,
            label_mode: LabelMode::Backtrace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weights.alpha) {
            return Err(Error::config("train.alpha must lie in [0, 1]"));
        }
        if self.weights.lambda < 0.0 {
            return Err(Error::config("train.lambda must be non-negative"));
        }
        if self.warmup == 0 || self.batch_tokens == 0 {
            return Err(Error::config("train.warmup and train.batch_tokens must be positive"));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "alpha" => self.weights.alpha = parse_value(key, v)?,
            "lambda" => self.weights.lambda = parse_value(key, v)?,
            "lr_scale" => self.lr_scale = parse_value(key, v)?,
            "warmup" => self.warmup = parse_value(key, v)?,
            "steps" => self.steps = parse_value(key, v)?,
            "batch_tokens" => self.batch_tokens = parse_value(key, v)?,
            "clip" => self.clip = parse_value(key, v)?,
            "beta1" => self.beta1 = parse_value(key, v)?,
            "beta2" => self.beta2 = parse_value(key, v)?,
            "adam_eps" => self.adam_eps = parse_value(key, v)?,
            "pred_eps" => self.pred_eps = parse_value(key, v)?,
            "log_every" => self.log_every = parse_value(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            "label_mode" => self.label_mode = v.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mode = match self.label_mode {
            LabelMode::Backtrace => "backtrace",
            LabelMode::Union => "union",
        };
        vec![
            ("alpha", self.weights.alpha.to_string()),
            ("lambda", self.weights.lambda.to_string()),
            ("lr_scale", self.lr_scale.to_string()),
            ("warmup", self.warmup.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_tokens", self.batch_tokens.to_string()),
            ("clip", self.clip.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("pred_eps", self.pred_eps.to_string()),
            ("log_every", self.log_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("label_mode", mode.to_owned()),
        ]
    }
}
