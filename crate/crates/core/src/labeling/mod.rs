//! Copy labels from longest-common-subsequence alignments.
//!
//! An mt token gets label 1 when it takes part in the LCS alignment between
//! mt and pe, and 0 otherwise.

use crate::error::{Error, Result};

/// Per-token 0/1 labels aligned with an mt sequence.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CopyLabels {
    pub labels: Vec<u8>,
}

impl CopyLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Which tokens count as copied when several maximal alignments exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LabelMode {
    /// The single alignment recovered by the deterministic backtrace.
    #[default]
    Backtrace,
    /// Every token that occurs in at least one maximal alignment.
    Union,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backtrace" => Ok(LabelMode::Backtrace),
            "union" => Ok(LabelMode::Union),
            _ => Err(Error::config(format!("unknown label mode {s:?}"))),
        }
    }
}

/// Reusable DP table, so tight loops do not allocate per pair.
#[derive(Clone, Debug, Default)]
pub struct LcsTable {
    cells: Vec<u32>,
    cols: usize,
}

impl LcsTable {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> u32 {
        self.cells[i * self.cols + j]
    }

    /// Fills prefix lengths `T[i][j] = LCS(a[..i], b[..j])` and returns the total.
    pub fn fill<T: PartialEq>(&mut self, a: &[T], b: &[T]) -> usize {
        let cols = b.len() + 1;
        let n = (a.len() + 1) * cols;
        self.cols = cols;
        if self.cells.len() < n {
            self.cells.resize(n, 0);
        }
        let cells = &mut self.cells[..n];
        cells[..cols].fill(0);
        for (i, x) in a.iter().enumerate() {
            let (done, rest) = cells.split_at_mut((i + 1) * cols);
            let prev = &done[i * cols..];
            let cur = &mut rest[..cols];
            cur[0] = 0;
            let mut left = 0;
            for (j, y) in b.iter().enumerate() {
                let diag = prev[j] + 1;
                let keep = prev[j + 1].max(left);
                left = if x == y { diag } else { keep };
                cur[j + 1] = left;
            }
        }
        cells[n - 1] as usize
    }

    /// Backtrace labels for `mt` against `pe`, written into `out`.
    ///
    /// From the end: a match steps diagonally; otherwise step back in pe when
    /// that keeps the length, else step back in mt.
    pub fn labels_into<T: PartialEq>(&mut self, mt: &[T], pe: &[T], out: &mut Vec<u8>) {
        self.fill(mt, pe);
        out.clear();
        out.resize(mt.len(), 0);
        let (mut i, mut j) = (mt.len(), pe.len());
        while i > 0 && j > 0 {
            if mt[i - 1] == pe[j - 1] {
                out[i - 1] = 1;
                i -= 1;
                j -= 1;
            } else if self.at(i, j - 1) >= self.at(i - 1, j) {
                j -= 1;
            } else {
                i -= 1;
            }
        }
    }
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    LcsTable::new().fill(a, b)
}

pub fn lcs_labels<T: PartialEq>(mt: &[T], pe: &[T]) -> CopyLabels {
    let mut labels = Vec::new();
    LcsTable::new().labels_into(mt, pe, &mut labels);
    CopyLabels { labels }
}

/// Marks every mt position that some maximal alignment matches.
pub fn lcs_labels_union<T: PartialEq>(mt: &[T], pe: &[T]) -> CopyLabels {
    let mut fwd = LcsTable::new();
    let total = fwd.fill(mt, pe) as u32;
    let rev_mt: Vec<&T> = mt.iter().rev().collect();
    let rev_pe: Vec<&T> = pe.iter().rev().collect();
    let mut bwd = LcsTable::new();
    bwd.fill(&rev_mt, &rev_pe);
    let (k, n) = (mt.len(), pe.len());
    let labels = (0..k)
        .map(|i| {
            let hit = (0..n).any(|j| {
                mt[i] == pe[j] && fwd.at(i, j) + 1 + bwd.at(k - i - 1, n - j - 1) == total
            });
            u8::from(hit)
        })
        .collect();
    CopyLabels { labels }
}

pub fn label<T: PartialEq>(mt: &[T], pe: &[T], mode: LabelMode) -> CopyLabels {
    match mode {
        LabelMode::Backtrace => lcs_labels(mt, pe),
        LabelMode::Union => lcs_labels_union(mt, pe),
    }
}

/// Fraction of mt tokens that the LCS alignment copies into pe.
pub fn corpus_copy_rate<'a, T, I>(pairs: I) -> Result<f64>
where
    T: PartialEq + 'a,
    I: IntoIterator<Item = (&'a [T], &'a [T])>,
{
    let mut table = LcsTable::new();
    let (mut copied, mut total, mut seen) = (0usize, 0usize, 0usize);
    for (mt, pe) in pairs {
        copied += table.fill(mt, pe);
        total += mt.len();
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::contract("copy rate of an empty corpus"));
    }
    if total == 0 {
        return Err(Error::contract("copy rate of a corpus without mt tokens"));
    }
    Ok(copied as f64 / total as f64)
}

#[cfg(test)]
mod tests;
