use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::files;

/// One post-editing record.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Triplet {
    pub src: Vec<String>,
    pub mt: Vec<String>,
    pub pe: Vec<String>,
    pub labels: Option<Vec<u8>>,
}

pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

impl Triplet {
    pub fn new(src: &str, mt: &str, pe: &str) -> Self {
        Triplet {
            src: tokens(src),
            mt: tokens(mt),
            pe: tokens(pe),
            labels: None,
        }
    }

    /// Checks the training-record contract: non-empty fields, one label per mt token.
    pub fn validate(&self) -> Result<()> {
        if self.src.is_empty() || self.mt.is_empty() || self.pe.is_empty() {
            return Err(Error::contract("triplet with an empty field"));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.mt.len() {
                return Err(Error::contract(format!(
                    "{} labels for {} mt tokens",
                    l.len(),
                    self.mt.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        let mut line = format!(
            "{}\t{}\t{}",
            self.src.join(" "),
            self.mt.join(" "),
            self.pe.join(" ")
        );
        if let Some(labels) = &self.labels {
            line.push('\t');
            for (i, l) in labels.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{l}");
            }
        }
        line
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parses tab-separated records; `path` is only used in error messages.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_error(path, line, format!("expected src, mt and pe fields, found {}", fields.len())));
        }
        if fields.len() > 4 {
            return Err(parse_error(path, line, format!("too many fields ({})", fields.len())));
        }
        let mut t = Triplet::new(fields[0], fields[1], fields[2]);
        if let Some(l) = fields.get(3) {
            let labels = l
                .split_whitespace()
                .map(|x| match x {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(parse_error(path, line, format!("label {x:?} is not 0 or 1"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            if labels.len() != t.mt.len() {
                return Err(parse_error(
                    path,
                    line,
                    format!("{} labels for {} mt tokens", labels.len(), t.mt.len()),
                ));
            }
            t.labels = Some(labels);
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Triplet>> {
    parse_corpus(&files::read_to_string(path)?, path)
}

pub fn format_corpus(triplets: &[Triplet]) -> String {
    let mut s = String::new();
    for t in triplets {
        s.push_str(&t.to_line());
        s.push('\n');
    }
    s
}

pub fn write_corpus(path: &Path, triplets: &[Triplet]) -> Result<()> {
    files::write_atomic(path, format_corpus(triplets).as_bytes())
}

/// Zips three line-aligned files (src, mt, pe) into triplets.
pub fn import_parallel(src: &Path, mt: &Path, pe: &Path) -> Result<Vec<Triplet>> {
    let s = files::read_to_string(src)?;
    let m = files::read_to_string(mt)?;
    let p = files::read_to_string(pe)?;
    let (s, m, p): (Vec<_>, Vec<_>, Vec<_>) = (s.lines().collect(), m.lines().collect(), p.lines().collect());
    if s.len() != m.len() || m.len() != p.len() {
        return Err(Error::contract(format!(
            "parallel files have {}, {} and {} lines",
            s.len(),
            m.len(),
            p.len()
        )));
    }
    Ok((0..s.len()).map(|i| Triplet::new(s[i], m[i], p[i])).collect())
}
