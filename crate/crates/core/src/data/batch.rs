use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Triplet, Vocab, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::labeling::lcs_labels;

/// A triplet mapped to ids, with its copy labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<usize>,
    pub mt: Vec<usize>,
    pub pe: Vec<usize>,
    pub labels: Vec<u8>,
}

impl Example {
    /// Decoder input `[BOS, pe...]`.
    pub fn decoder_input(&self) -> Vec<usize> {
        std::iter::once(BOS).chain(self.pe.iter().copied()).collect()
    }

    /// Decoder targets `[pe..., EOS]`.
    pub fn targets(&self) -> Vec<usize> {
        self.pe.iter().copied().chain(std::iter::once(EOS)).collect()
    }

    /// Length of the longest stream the model processes for this example.
    pub fn cost(&self) -> usize {
        (self.src.len() + self.mt.len()).max(self.pe.len() + 1)
    }
}

/// Encodes a corpus; missing labels come from the LCS alignment.
pub fn encode_corpus(corpus: &[Triplet], vocab: &Vocab) -> Result<Vec<Example>> {
    corpus
        .iter()
        .map(|t| {
            t.validate()?;
            let labels = match &t.labels {
                Some(l) => l.clone(),
                None => lcs_labels(&t.mt, &t.pe).labels,
            };
            Ok(Example {
                src: vocab.encode(&t.src),
                mt: vocab.encode(&t.mt),
                pe: vocab.encode(&t.pe),
                labels,
            })
        })
        .collect()
}

/// Indices of the examples in one batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub examples: Vec<usize>,
}

impl Batch {
    /// Tokens the batch occupies once padded to its longest member.
    pub fn padded_tokens(&self, corpus: &[Example]) -> usize {
        let longest = self.examples.iter().map(|&i| corpus[i].cost()).max().unwrap_or(0);
        longest * self.examples.len()
    }
}

/// Right-pads sequences with PAD to a common length.
pub fn pad(seqs: &[&[usize]]) -> Vec<Vec<usize>> {
    let n = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut v = s.to_vec();
            v.resize(n, PAD);
            v
        })
        .collect()
}

/// Groups examples of similar length into batches whose padded size stays
/// within `token_budget`, in an order fixed by `seed`.
pub fn batch_iter(corpus: &[Example], token_budget: usize, seed: u64) -> Result<Vec<Batch>> {
    if corpus.is_empty() {
        return Err(Error::contract("cannot batch an empty corpus"));
    }
    if let Some(e) = corpus.iter().find(|e| e.cost() > token_budget) {
        return Err(Error::config(format!(
            "an example needs {} tokens, above the batch budget of {token_budget}",
            e.cost()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| corpus[i].cost());
    let mut batches = Vec::new();
    let mut cur = Batch { examples: Vec::new() };
    for i in order {
        cur.examples.push(i);
        if cur.padded_tokens(corpus) > token_budget {
            cur.examples.pop();
            batches.push(std::mem::replace(&mut cur, Batch { examples: vec![i] }));
        }
    }
    batches.push(cur);
    batches.shuffle(&mut rng);
    Ok(batches)
}
