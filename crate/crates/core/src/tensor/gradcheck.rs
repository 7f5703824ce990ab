//! Central finite-difference checks of tape gradients.
//!
//! These routines evaluate the forward function only; they never look at the
//! backward rules they are used to verify.

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Largest disagreement found between analytic and numeric gradients.
#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel >= self.max_rel_error {
            self.max_rel_error = rel;
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }

    fn merge(&mut self, other: GradReport) {
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.analytic = other.analytic;
            self.numeric = other.numeric;
        }
        self.checked += other.checked;
    }
}

/// Denominator floor for relative errors of gradients that are essentially zero.
pub const REL_FLOOR: f64 = 1e-6;

/// Checks `d f / d inputs` for a scalar-valued `f` of free leaves.
pub fn check_inputs<Fun>(inputs: &[Tensor<f64>], step: f64, f: Fun) -> Result<GradReport>
where
    Fun: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut report = GradReport::default();
    let mut xs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for j in 0..inputs[k].len() {
            let orig = xs[k].data()[j];
            xs[k].data_mut()[j] = orig + step;
            let plus = eval(&xs)?;
            xs[k].data_mut()[j] = orig - step;
            let minus = eval(&xs)?;
            xs[k].data_mut()[j] = orig;
            report.record(analytic.data()[j], (plus - minus) / (2.0 * step), REL_FLOOR);
        }
    }
    Ok(report)
}

/// Checks `d f / d params` for the listed parameters of a store.
///
/// `limit` caps the number of elements probed per parameter (spread evenly)
/// to keep end-to-end checks of larger networks fast.
pub fn check_params<Fun>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    step: f64,
    limit: Option<usize>,
    f: Fun,
) -> Result<GradReport>
where
    Fun: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let out = f(&tape, store)?;
    let grads = tape.backward(out)?;
    let mut work = store.clone();
    let mut report = GradReport::default();
    for &id in ids {
        let n = store.value(id).len();
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        let stride = limit.map_or(1, |l| n.div_ceil(l.max(1)));
        let mut sub = GradReport::default();
        for j in (0..n).step_by(stride.max(1)) {
            let orig = store.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + step;
            let plus = f(&Tape::new(), &work)?.value().item();
            work.value_mut(id).data_mut()[j] = orig - step;
            let minus = f(&Tape::new(), &work)?.value().item();
            work.value_mut(id).data_mut()[j] = orig;
            sub.record(analytic.data()[j], (plus - minus) / (2.0 * step), REL_FLOOR);
        }
        report.merge(sub);
    }
    Ok(report)
}
