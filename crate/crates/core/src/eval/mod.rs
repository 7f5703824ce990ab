//! Evaluation metrics: TER, BLEU, copying accuracy and prediction accuracy.

mod accuracy;
mod bleu;
mod ter;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use accuracy::{copying_accuracy, copying_tally, prediction_accuracy, prediction_tally, Tally};
pub use bleu::{bleu, bleu_stats, BleuStats, MAX_ORDER};
pub use ter::{
    corpus_ter, edit_distance, perform_shift, ter, ter_stats, TerStats, MAX_SHIFT_CANDIDATES,
    MAX_SHIFT_DIST, MAX_SHIFT_SIZE,
};

use crate::error::Result;

/// Corpus-level scores plus per-sentence TER.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ter: f64,
    pub bleu: f64,
    pub copying_accuracy: Option<f64>,
    pub prediction_accuracy: Option<f64>,
    pub sentences: usize,
    pub sentence_ter: Vec<f64>,
}

/// Inputs for [`evaluate`]; `mt` and `scores`/`labels` are optional.
pub struct EvalInputs<'a> {
    pub hyps: &'a [Vec<String>],
    pub refs: &'a [Vec<String>],
    pub mts: Option<&'a [Vec<String>]>,
    pub predictions: Option<(&'a [Vec<f64>], &'a [Vec<u8>])>,
}

pub fn evaluate(inputs: EvalInputs<'_>) -> Result<EvalReport> {
    let (ter, stats) = corpus_ter(inputs.hyps, inputs.refs)?;
    let bleu = bleu(inputs.hyps, inputs.refs)?;
    let copying_accuracy = match inputs.mts {
        Some(mts) => Some(copying_accuracy(inputs.hyps, inputs.refs, mts)?),
        None => None,
    };
    let prediction_accuracy = match inputs.predictions {
        Some((scores, labels)) => {
            if scores.len() != labels.len() {
                return Err(crate::Error::contract("score and label files differ in length"));
            }
            let mut tally = Tally::default();
            for (s, l) in scores.iter().zip(labels) {
                tally.merge(prediction_tally(s, l)?);
            }
            Some(tally.percent())
        }
        None => None,
    };
    Ok(EvalReport {
        ter,
        bleu,
        copying_accuracy,
        prediction_accuracy,
        sentences: inputs.hyps.len(),
        sentence_ter: stats.iter().map(TerStats::score).collect(),
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22}{:>10}", "sentences", self.sentences)?;
        writeln!(f, "{:<22}{:>10.2}", "TER", self.ter)?;
        writeln!(f, "{:<22}{:>10.2}", "BLEU", self.bleu)?;
        if let Some(c) = self.copying_accuracy {
            writeln!(f, "{:<22}{:>10.2}", "copying accuracy", c)?;
        }
        if let Some(p) = self.prediction_accuracy {
            writeln!(f, "{:<22}{:>10.2}", "prediction accuracy", p)?;
        }
        Ok(())
    }
}
