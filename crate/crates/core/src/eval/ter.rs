//! Translation edit rate with greedy block shifts.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_SHIFT_SIZE: usize = 10;
pub const MAX_SHIFT_DIST: usize = 50;
pub const MAX_SHIFT_CANDIDATES: usize = 1000;

/// Edit counts for one sentence.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TerStats {
    pub edits: usize,
    pub shifts: usize,
    pub ref_len: usize,
}

impl TerStats {
    pub fn total(&self) -> usize {
        self.edits + self.shifts
    }

    pub fn score(&self) -> f64 {
        self.total() as f64 / self.ref_len as f64
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Step {
    Keep,
    Sub,
    /// Extra hyp word.
    Ins,
    /// Missing ref word.
    Del,
}

/// Levenshtein distance and one optimal edit path from hyp to ref.
fn edit_trace<T: PartialEq>(hyp: &[T], refs: &[T]) -> (usize, Vec<Step>) {
    let (n, m) = (hyp.len(), refs.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != refs[j - 1]);
            let ins = d[(i - 1) * w + j] + 1;
            let del = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(ins).min(del);
        }
    }
    let mut steps = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == refs[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                steps.push(if same { Step::Keep } else { Step::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            steps.push(Step::Ins);
            i -= 1;
        } else {
            steps.push(Step::Del);
            j -= 1;
        }
    }
    steps.reverse();
    (d[n * w + m], steps)
}

pub fn edit_distance<T: PartialEq>(hyp: &[T], refs: &[T]) -> usize {
    edit_trace(hyp, refs).0
}

struct Alignment {
    /// ref position -> hyp position (of the aligned or preceding hyp word).
    ref_to_hyp: HashMap<usize, isize>,
    hyp_err: Vec<bool>,
    ref_err: Vec<bool>,
}

fn align(steps: &[Step]) -> Alignment {
    let (mut h, mut r) = (-1isize, -1isize);
    let mut a = Alignment {
        ref_to_hyp: HashMap::new(),
        hyp_err: Vec::new(),
        ref_err: Vec::new(),
    };
    for &s in steps {
        match s {
            Step::Keep | Step::Sub => {
                h += 1;
                r += 1;
                a.ref_to_hyp.insert(r as usize, h);
                a.hyp_err.push(s == Step::Sub);
                a.ref_err.push(s == Step::Sub);
            }
            Step::Ins => {
                h += 1;
                a.hyp_err.push(true);
            }
            Step::Del => {
                r += 1;
                a.ref_to_hyp.insert(r as usize, h);
                a.ref_err.push(true);
            }
        }
    }
    a
}

/// Moves the block `words[start..start+len]` to index `target`; targets
/// past the block count positions after the block is removed.
pub fn perform_shift<T: Clone>(words: &[T], start: usize, len: usize, target: usize) -> Vec<T> {
    let block = &words[start..start + len];
    let mut out = Vec::with_capacity(words.len());
    if target < start {
        out.extend_from_slice(&words[..target]);
        out.extend_from_slice(block);
        out.extend_from_slice(&words[target..start]);
        out.extend_from_slice(&words[start + len..]);
    } else if target > start + len {
        out.extend_from_slice(&words[..start]);
        out.extend_from_slice(&words[start + len..target]);
        out.extend_from_slice(block);
        out.extend_from_slice(&words[target..]);
    } else {
        let end = (len + target).min(words.len());
        out.extend_from_slice(&words[..start]);
        out.extend_from_slice(&words[start + len..end]);
        out.extend_from_slice(block);
        out.extend_from_slice(&words[end..]);
    }
    out
}

/// Matching spans `(hyp start, ref start, length)`.
fn shift_pairs<T: PartialEq>(hyp: &[T], refs: &[T]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for sh in 0..hyp.len() {
        for sr in 0..refs.len() {
            if sh.abs_diff(sr) > MAX_SHIFT_DIST {
                continue;
            }
            let mut len = 0;
            while len < MAX_SHIFT_SIZE
                && sh + len < hyp.len()
                && sr + len < refs.len()
                && hyp[sh + len] == refs[sr + len]
            {
                len += 1;
                out.push((sh, sr, len));
            }
        }
    }
    out
}

/// Best single shift: `(edit reduction, shifted words)`.
fn best_shift<T: PartialEq + Clone>(
    hyp: &[T],
    refs: &[T],
    checked: &mut usize,
) -> Option<(isize, Vec<T>)> {
    let (before, steps) = edit_trace(hyp, refs);
    let a = align(&steps);
    // Ordered by (gain, length, earlier start, earlier target).
    let mut best: Option<((isize, usize, isize, isize), Vec<T>)> = None;
    for (sh, sr, len) in shift_pairs(hyp, refs) {
        if !a.hyp_err[sh..sh + len].iter().any(|&e| e) {
            continue;
        }
        if !a.ref_err[sr..sr + len].iter().any(|&e| e) {
            continue;
        }
        let anchor = a.ref_to_hyp[&sr];
        if sh as isize <= anchor && anchor < (sh + len) as isize {
            continue;
        }
        let mut prev = None;
        for offset in -1isize..len as isize {
            let r = sr as isize + offset;
            let target = if r == -1 {
                0
            } else {
                match a.ref_to_hyp.get(&(r as usize)) {
                    Some(&h) => (h + 1) as usize,
                    None => break,
                }
            };
            if prev == Some(target) {
                continue;
            }
            prev = Some(target);
            let shifted = perform_shift(hyp, sh, len, target);
            let gain = before as isize - edit_distance(&shifted, refs) as isize;
            let key = (gain, len, -(sh as isize), -(target as isize));
            *checked += 1;
            if best.as_ref().is_none_or(|(k, _)| key > *k) {
                best = Some((key, shifted));
            }
        }
        if *checked >= MAX_SHIFT_CANDIDATES {
            break;
        }
    }
    best.map(|(k, words)| (k.0, words))
}

/// Shifts and edits needed to turn `hyp` into `refs`.
pub fn ter_stats<T: PartialEq + Clone>(hyp: &[T], refs: &[T]) -> Result<TerStats> {
    if refs.is_empty() {
        return Err(Error::contract("TER needs a non-empty reference"));
    }
    let mut words = hyp.to_vec();
    let mut shifts = 0;
    let mut checked = 0;
    loop {
        let Some((gain, shifted)) = best_shift(&words, refs, &mut checked) else {
            break;
        };
        if checked >= MAX_SHIFT_CANDIDATES || gain <= 0 {
            break;
        }
        shifts += 1;
        words = shifted;
    }
    Ok(TerStats {
        edits: edit_distance(&words, refs),
        shifts,
        ref_len: refs.len(),
    })
}

/// Sentence TER as a fraction of the reference length.
pub fn ter<T: PartialEq + Clone>(hyp: &[T], refs: &[T]) -> Result<f64> {
    Ok(ter_stats(hyp, refs)?.score())
}

/// Corpus TER in percent: total edits over total reference length.
pub fn corpus_ter<T: PartialEq + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<(f64, Vec<TerStats>)> {
    if hyps.len() != refs.len() {
        return Err(Error::contract(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let stats = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| ter_stats(h, r))
        .collect::<Result<Vec<_>>>()?;
    let edits: usize = stats.iter().map(TerStats::total).sum();
    let len: usize = stats.iter().map(|s| s.ref_len).sum();
    if len == 0 {
        return Err(Error::contract("TER of an empty corpus"));
    }
    Ok((100.0 * edits as f64 / len as f64, stats))
}
