use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tensor};

/// `d^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_schedule(step: u64, d: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::contract("learning-rate schedule starts at step 1"));
    }
    if warmup == 0 {
        return Err(Error::config("warmup must be positive"));
    }
    let s = step as f64;
    Ok((d as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5)))
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamStore<F>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.ids().map(|id| Tensor::zeros(params.value(id).shape())).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected update using the gradients held by `params`.
    pub fn step(&mut self, params: &mut ParamStore<F>, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
        let ids: Vec<_> = params.ids().collect();
        for &id in &ids {
            if self.m[id.index()].shape() != params.value(id).shape() {
                return Err(Error::shape(format!("optimizer state for {} has the wrong shape", params.name(id))));
            }
            if let Some(j) = params.grad(id).data().iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at {}[{j}] on step {}",
                    params.name(id),
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = F::of(1.0 - self.beta1.powi(t));
        let c2 = F::of(1.0 - self.beta2.powi(t));
        let (lr, eps, one) = (F::of(lr), F::of(self.eps), F::one());
        for id in ids {
            let g = params.grad(id).clone();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let w = params.value_mut(id).data_mut();
            for j in 0..g.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                w[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Real>(params: &mut ParamStore<F>, max_norm: f64) -> f64 {
    let norm = params.grad_norm().as_f64();
    if max_norm > 0.0 && norm > max_norm {
        let k = F::of(max_norm / norm);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            params.grad_mut(id).scale_assign(k);
        }
    }
    norm
}
