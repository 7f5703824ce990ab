//! Corpus BLEU as computed by multi-bleu.perl: clipped n-gram precisions up
//! to order four, geometric mean, brevity penalty, no smoothing.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    /// Clipped matches per order (index 0 is unigrams).
    pub matches: [usize; MAX_ORDER],
    /// Hypothesis n-grams per order.
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngrams<T: Eq + Hash>(words: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

impl BleuStats {
    pub fn add_sentence<T: Eq + Hash>(&mut self, hyp: &[T], refs: &[T]) {
        self.hyp_len += hyp.len();
        self.ref_len += refs.len();
        for n in 1..=MAX_ORDER {
            let h = ngrams(hyp, n);
            let r = ngrams(refs, n);
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
            self.matches[n - 1] += h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    pub fn precision(&self, n: usize) -> f64 {
        if self.totals[n - 1] == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / self.totals[n - 1] as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        }
    }

    /// BLEU in percent; zero as soon as any order has no match.
    pub fn score(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let log_mean = (1..=MAX_ORDER).map(|n| self.precision(n).ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }
}

pub fn bleu_stats<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<BleuStats> {
    if hyps.len() != refs.len() {
        return Err(Error::contract(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        stats.add_sentence(h, r);
    }
    Ok(stats)
}

pub fn bleu<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    Ok(bleu_stats(hyps, refs)?.score())
}
