//! Checkpoint files: a text manifest followed by little-endian `f32` data.
//!
//! ```text
//! format ape-checkpoint
//! version 1
//! config <key> <value>
//! vocab <count>
//! <one token per line>
//! tensor <name> <dims, comma separated, or "scalar"> <offset> <count>
//! manifest_end
//! <payload>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{ApeModel, ModelConfig};
use crate::config::KeyValues;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::files;
use crate::tensor::Tensor;

const MAGIC: &str = "ape-checkpoint";
const VERSION: u32 = 1;
const END: &str = "manifest_end\n";

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub config: KeyValues,
    pub vocab: Vec<String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("format {MAGIC}\nversion {VERSION}\n");
        for (k, v) in self.config.iter() {
            let _ = writeln!(head, "config {k} {v}");
        }
        let _ = writeln!(head, "vocab {}", self.vocab.len());
        for t in &self.vocab {
            head.push_str(t);
            head.push('\n');
        }
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let dims = if t.shape().is_empty() {
                "scalar".to_owned()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            };
            let _ = writeln!(head, "tensor {name} {dims} {offset} {}", t.len());
            offset += t.len();
        }
        head.push_str(END);
        let mut out = head.into_bytes();
        out.reserve(offset * 4);
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let n = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated manifest"))?;
            pos += n + 1;
            std::str::from_utf8(&rest[..n]).map_err(|_| bad("manifest is not UTF-8"))
        };
        if next_line()? != format!("format {MAGIC}") {
            return Err(bad("not a checkpoint file"));
        }
        match next_line()?.strip_prefix("version ") {
            Some(v) if v == VERSION.to_string() => {}
            other => return Err(bad(format!("unsupported version {other:?}"))),
        }
        let mut ck = Checkpoint::default();
        let mut index = Vec::new();
        loop {
            let line = next_line()?;
            if line == END.trim_end() {
                break;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| bad(format!("bad manifest line {line:?}")))?;
            match kind {
                "config" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.config.insert(k, v);
                }
                "vocab" => {
                    let n: usize = rest.parse().map_err(|_| bad("bad vocabulary size"))?;
                    for _ in 0..n {
                        ck.vocab.push(next_line()?.to_owned());
                    }
                }
                "tensor" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    let [name, dims, offset, count] = parts[..] else {
                        return Err(bad(format!("bad tensor line {line:?}")));
                    };
                    let shape: Vec<usize> = if dims == "scalar" {
                        Vec::new()
                    } else {
                        dims.split(',')
                            .map(|d| d.parse().map_err(|_| bad(format!("bad dims {dims:?}"))))
                            .collect::<Result<_>>()?
                    };
                    let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
                    let count: usize = count.parse().map_err(|_| bad("bad count"))?;
                    index.push((name.to_owned(), shape, offset, count));
                }
                _ => return Err(bad(format!("unknown manifest entry {kind:?}"))),
            }
        }
        let payload = &bytes[pos..];
        for (name, shape, offset, count) in index {
            let raw = payload
                .get(offset * 4..(offset + count) * 4)
                .ok_or_else(|| bad(format!("payload too short for {name}")))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))?;
            ck.tensors.push((name, t));
        }
        Ok(ck)
    }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    files::write_atomic(path, &ck.to_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

const PARAM_PREFIX: &str = "param.";

impl ApeModel<f32> {
    /// Model configuration, vocabulary and every parameter.
    pub fn to_checkpoint(&self, vocab: &Vocab) -> Checkpoint {
        let mut config = KeyValues::default();
        for (k, v) in self.config.entries() {
            config.insert(&format!("model.{k}"), v);
        }
        Checkpoint {
            config,
            vocab: vocab.tokens().to_vec(),
            tensors: self
                .params
                .ids()
                .map(|id| (format!("{PARAM_PREFIX}{}", self.params.name(id)), self.params.value(id).clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Vocab)> {
        let mut config = ModelConfig::default();
        for (k, v) in ck.config.iter() {
            if let Some(rest) = k.strip_prefix("model.") {
                if !config.set(rest, v)? {
                    return Err(bad(format!("unknown model setting {k}")));
                }
            }
        }
        let vocab = Vocab::from_tokens(ck.vocab.clone())?;
        if vocab.len() != config.vocab {
            return Err(bad(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                config.vocab
            )));
        }
        let mut model = ApeModel::new(config, 0)?;
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = format!("{PARAM_PREFIX}{}", model.params.name(id));
            let t = ck.tensor(&name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
            model.params.set(id, t.clone())?;
        }
        Ok((model, vocab))
    }
}
