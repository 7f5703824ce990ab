//! Post-editing, copy and prediction losses.
//!
//! The `*_sum` functions build per-sentence sums on a tape; the batch
//! normalisers divide them by gold tokens (post-editing loss) or mt tokens
//! (copy and prediction losses). The plain functions compute the same
//! quantities on values.

use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-9;

/// Weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.9,
            lambda: 1.0,
        }
    }
}

/// Which loss terms exist for a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveTerms {
    pub copy: bool,
    pub pred: bool,
}

/// `(1 - alpha) (ape + lambda copy) + alpha pred`, inactive terms set to zero first.
pub fn loss_all(l_ape: f64, l_copy: f64, l_pred: f64, w: LossWeights, active: ActiveTerms) -> f64 {
    let copy = if active.copy { l_copy } else { 0.0 };
    let pred = if active.pred { l_pred } else { 0.0 };
    (1.0 - w.alpha) * (l_ape + w.lambda * copy) + w.alpha * pred
}

/// `-sum_t log P_t(target_t)` over the rows of `p`.
pub fn loss_ape_sum<'t, F: Real>(p: Var<'t, F>, targets: &[usize]) -> Result<Var<'t, F>> {
    Ok(p.pick(targets)?.log_floor(PROB_FLOOR)?.sum().scale(-1.0))
}

/// `sum_k (l_k - c_k)^2`.
pub fn loss_copy_sum<'t, F: Real>(c: Var<'t, F>, labels: &[u8]) -> Result<Var<'t, F>> {
    if c.shape() != [labels.len()] {
        return Err(Error::contract(format!("copy mass {:?} for {} labels", c.shape(), labels.len())));
    }
    let l: Vec<f64> = labels.iter().map(|&x| f64::from(x)).collect();
    let lv = c.tape().constant(crate::tensor::Tensor::from_f64(&[l.len()], &l)?);
    let diff = c.sub(lv)?;
    Ok(diff.mul(diff)?.sum())
}

/// `-sum_k [l_k log s_k + (1 - l_k) log(1 - s_k)]` with scores clamped to `[eps, 1]`.
pub fn loss_pred_sum<'t, F: Real>(s: Var<'t, F>, labels: &[u8], eps: f64) -> Result<Var<'t, F>> {
    if s.shape() != [labels.len()] {
        return Err(Error::contract(format!("scores {:?} for {} labels", s.shape(), labels.len())));
    }
    let pos: Vec<f64> = labels.iter().map(|&x| f64::from(x)).collect();
    let neg: Vec<f64> = pos.iter().map(|x| 1.0 - x).collect();
    let tape = s.tape();
    let n = labels.len();
    let a = s.log_floor(eps)?.mul(tape.constant(crate::tensor::Tensor::from_f64(&[n], &pos)?))?;
    let b = s
        .affine(-1.0, 1.0)
        .log_floor(eps)?
        .mul(tape.constant(crate::tensor::Tensor::from_f64(&[n], &neg)?))?;
    Ok(a.add(b)?.sum().scale(-1.0))
}

/// Mean negative log-probability of the gold tokens.
pub fn loss_ape(gold_probs: &[f64]) -> Result<f64> {
    if gold_probs.is_empty() {
        return Err(Error::contract("no gold tokens"));
    }
    let total: f64 = gold_probs.iter().map(|p| -p.max(PROB_FLOOR).ln()).sum();
    Ok(total / gold_probs.len() as f64)
}

/// Mean squared difference between labels and copy mass.
pub fn loss_copy(c: &[f64], labels: &[u8]) -> Result<f64> {
    if c.len() != labels.len() || c.is_empty() {
        return Err(Error::contract(format!("copy mass of {} for {} labels", c.len(), labels.len())));
    }
    let sq: f64 = c.iter().zip(labels).map(|(c, &l)| (f64::from(l) - c).powi(2)).sum();
    Ok(sq / c.len() as f64)
}

/// Binary cross-entropy summed over the mt tokens.
pub fn loss_pred(s: &[f64], labels: &[u8], eps: f64) -> Result<f64> {
    if s.len() != labels.len() {
        return Err(Error::contract(format!("{} scores for {} labels", s.len(), labels.len())));
    }
    Ok(-s
        .iter()
        .zip(labels)
        .map(|(&s, &l)| {
            if l == 1 {
                s.max(eps).ln()
            } else {
                (1.0 - s).max(eps).ln()
            }
        })
        .sum::<f64>())
}
