use std::collections::HashMap;

/// End-of-word marker, kept as its own symbol before any merge.
pub const END_OF_WORD: &str = "</w>";

/// Ordered merge list learned from word frequencies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    pub merges: Vec<(String, String)>,
}

fn symbols(word: &str) -> Vec<String> {
    word.chars()
        .map(String::from)
        .chain(std::iter::once(END_OF_WORD.to_owned()))
        .collect()
}

fn merge_pair(syms: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `merges` merges from whitespace-separated text. Each step
/// merges the most frequent adjacent pair; ties go to the lexically smallest
/// pair. Stops early when no pair is left.
pub fn bpe_learn(text: &str, merges: usize) -> BpeModel {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in text.split_whitespace() {
        *counts.entry(w).or_insert(0) += 1;
    }
    let mut words: Vec<(Vec<String>, usize)> = counts.into_iter().map(|(w, c)| (symbols(w), c)).collect();
    words.sort();
    let mut model = BpeModel::default();
    for _ in 0..merges {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += c;
            }
        }
        let Some((&(a, b), _)) = pairs
            .iter()
            .max_by(|x, y| x.1.cmp(y.1).then_with(|| y.0.cmp(x.0)))
        else {
            break;
        };
        let (a, b) = (a.to_owned(), b.to_owned());
        for (syms, _) in &mut words {
            *syms = merge_pair(syms, &a, &b);
        }
        model.merges.push((a, b));
    }
    model
}

impl BpeModel {
    /// Segments one word by replaying merges in learned order.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let rank: HashMap<(&str, &str), usize> = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.as_str(), b.as_str()), i))
            .collect();
        let mut syms = symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| rank.get(&(w[0].as_str(), w[1].as_str())).copied())
                .min();
            let Some(r) = best else { break };
            let (a, b) = &self.merges[r];
            syms = merge_pair(&syms, a, b);
        }
        syms
    }
}

/// Segments whitespace-separated text word by word.
pub fn bpe_apply(model: &BpeModel, text: &str) -> Vec<String> {
    text.split_whitespace().flat_map(|w| model.apply_word(w)).collect()
}

/// Joins segments back into words at end-of-word markers.
pub fn bpe_join(pieces: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for p in pieces {
        match p.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                cur.push_str(stem);
                out.push(std::mem::take(&mut cur));
            }
            None => cur.push_str(p),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl BpeModel {
    /// One merge per line, the two symbols separated by a space.
    pub fn to_text(&self) -> String {
        self.merges.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
    }

    pub fn from_text(text: &str) -> crate::Result<Self> {
        let mut merges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_owned(), b.to_owned()))
                }
                _ => {
                    return Err(crate::Error::Parse {
                        path: "<bpe>".into(),
                        line: n + 1,
                        message: format!("bad merge line {line:?}"),
                    })
                }
            }
        }
        Ok(BpeModel { merges })
    }
}
