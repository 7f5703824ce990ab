use crate::error::{Error, Result};
use crate::labeling::LcsTable;

/// Correct and total counts behind a percentage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    /// Percentage, or 100 when nothing was counted.
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            100.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }

    pub fn merge(&mut self, other: Tally) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

fn same_positions<T: PartialEq>(a: &[T], b: &[T], w: &T) -> bool {
    let mut pa = a.iter().enumerate().filter(|(_, x)| *x == w).map(|(i, _)| i);
    let mut pb = b.iter().enumerate().filter(|(_, x)| *x == w).map(|(i, _)| i);
    loop {
        match (pa.next(), pb.next()) {
            (None, None) => return true,
            (Some(x), Some(y)) if x == y => continue,
            _ => return false,
        }
    }
}

/// Copying tally for one sentence: mt tokens that the LCS alignment with the
/// reference copies count as correct when their surface form occupies the
/// same positions in the hypothesis as in the reference.
pub fn copying_tally<T: PartialEq>(hyp: &[T], reference: &[T], mt: &[T]) -> Tally {
    let mut labels = Vec::new();
    LcsTable::new().labels_into(mt, reference, &mut labels);
    let mut tally = Tally::default();
    for (w, &l) in mt.iter().zip(&labels) {
        if l == 1 {
            tally.total += 1;
            tally.correct += usize::from(same_positions(hyp, reference, w));
        }
    }
    tally
}

/// Corpus copying accuracy in percent.
pub fn copying_accuracy<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>], mts: &[Vec<T>]) -> Result<f64> {
    if hyps.len() != refs.len() || refs.len() != mts.len() {
        return Err(Error::contract(format!(
            "copying accuracy over {} hypotheses, {} references, {} mt sentences",
            hyps.len(),
            refs.len(),
            mts.len()
        )));
    }
    let mut tally = Tally::default();
    for ((h, r), m) in hyps.iter().zip(refs).zip(mts) {
        tally.merge(copying_tally(h, r, m));
    }
    Ok(tally.percent())
}

pub fn prediction_tally(scores: &[f64], labels: &[u8]) -> Result<Tally> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= 0.5) == (l == 1))
        .count();
    Ok(Tally {
        correct,
        total: labels.len(),
    })
}

/// Share of tokens whose thresholded score (`s >= 0.5`) equals the label, in percent.
pub fn prediction_accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(prediction_tally(scores, labels)?.percent())
}
