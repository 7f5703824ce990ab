//! Decoder cross-attention and copying scores in plot-ready form.

use std::fmt::Write as _;

use crate::data::{Triplet, Vocab};
use crate::error::{Error, Result};
use crate::labeling::{label, LabelMode};
use crate::model::{ApeModel, Encoders, ForwardTrace};
use crate::nn::Ctx;
use crate::tensor::Tape;

/// Attention of one decoder layer to the mt tokens for a single triplet.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub layer: usize,
    /// Row labels: the pe tokens being predicted.
    pub pe: Vec<String>,
    /// Column labels.
    pub mt: Vec<String>,
    /// `[J][K]`, averaged over heads.
    pub mean: Vec<Vec<f64>>,
    /// `[head][J][K]`.
    pub heads: Vec<Vec<Vec<f64>>>,
    /// Predictor copying scores, one per mt token.
    pub s: Option<Vec<f64>>,
}

/// Teacher-forces `triplet` and extracts the mt block of decoder layer `layer`.
pub fn heatmap(model: &ApeModel<f32>, vocab: &Vocab, triplet: &Triplet, layer: usize) -> Result<Heatmap> {
    let layers = model.config.dec_layers;
    if layer >= layers {
        return Err(Error::config(format!("layer {layer} is out of range; the decoder has {layers}")));
    }
    triplet.validate()?;
    let mut t = triplet.clone();
    if t.labels.is_none() {
        t.labels = Some(label(&t.mt, &t.pe, LabelMode::Backtrace).labels);
    }
    let ex = crate::data::encode_corpus(std::slice::from_ref(&t), vocab)?.remove(0);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &model.params);
    let trace = ForwardTrace::capture(&model.forward_teacher_forced(&ctx, &ex)?);
    let (memory, offset) = match &model.net.encoders {
        Encoders::Interactive(_) => (0, ex.src.len()),
        Encoders::Separate { .. } => (usize::from(model.config.src_first), 0),
    };
    let (j, k) = (ex.pe.len(), ex.mt.len());
    let heads: Vec<Vec<Vec<f64>>> = trace.cross_attention[layer][memory]
        .iter()
        .map(|w| (0..j).map(|r| w.row(r)[offset..offset + k].to_vec()).collect())
        .collect();
    let n = heads.len() as f64;
    let mean = (0..j)
        .map(|r| (0..k).map(|c| heads.iter().map(|h| h[r][c]).sum::<f64>() / n).collect())
        .collect();
    Ok(Heatmap {
        layer,
        pe: t.pe.clone(),
        mt: t.mt.clone(),
        mean,
        heads,
        s: trace.s,
    })
}

fn matrix_tsv(rows: &[String], cols: &[String], m: &[Vec<f64>]) -> String {
    let mut s = String::from("pe\\mt");
    for c in cols {
        let _ = write!(s, "\t{c}");
    }
    s.push('\n');
    for (r, row) in rows.iter().zip(m) {
        s.push_str(r);
        for v in row {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

impl Heatmap {
    /// Head-averaged matrix with the mt tokens as header row and pe tokens as first column.
    pub fn attention_tsv(&self) -> String {
        matrix_tsv(&self.pe, &self.mt, &self.mean)
    }

    pub fn head_tsv(&self, head: usize) -> String {
        matrix_tsv(&self.pe, &self.mt, &self.heads[head])
    }

    /// mt tokens with their copying scores, one per line.
    pub fn scores_tsv(&self) -> Option<String> {
        let s = self.s.as_ref()?;
        let mut out = String::from("mt\ts\n");
        for (t, v) in self.mt.iter().zip(s) {
            let _ = writeln!(out, "{t}\t{v}");
        }
        Some(out)
    }
}
