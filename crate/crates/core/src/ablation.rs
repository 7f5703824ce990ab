//! Trains and scores the seven ablation configurations under one budget.

use std::fmt::Write as _;

use crate::config::Settings;
use crate::data::{build_vocab, Triplet};
use crate::decode::translate;
use crate::error::Result;
use crate::eval::{bleu, corpus_ter};
use crate::model::{Switches, ABLATION_GRID};
use crate::train::Trainer;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// One-based position in the grid.
    pub row: usize,
    pub switches: Switches,
    pub ter: f64,
    pub bleu: f64,
    pub token_acc: f64,
    pub pred_acc: Option<f64>,
}

/// Trains one configuration on `train` and scores beam output on `eval`.
pub fn run_config(
    settings: &Settings,
    switches: Switches,
    train: &[Triplet],
    eval: &[Triplet],
    threads: usize,
) -> Result<(Trainer, AblationRow)> {
    let row = switches.grid_row()? + 1;
    let mut s = settings.clone();
    s.model = s.model.with_switches(switches);
    s.model.validate()?;
    let vocab = build_vocab(train, 1)?;
    let mut trainer = Trainer::new(&s, train, Some(vocab))?;
    trainer.run(s.train.steps, None, None)?;
    let hyps = translate(&trainer.model, &trainer.vocab, eval, &s.decode, threads)?;
    let refs: Vec<Vec<String>> = eval.iter().map(|t| t.pe.clone()).collect();
    let (ter, _) = corpus_ter(&hyps, &refs)?;
    let acc = crate::train::accuracy(&trainer.model, &trainer.examples)?;
    let out = AblationRow {
        row,
        switches,
        ter,
        bleu: bleu(&hyps, &refs)?,
        token_acc: acc.token_acc(),
        pred_acc: acc.pred_acc(),
    };
    Ok((trainer, out))
}

/// Runs the listed grid rows (one-based), calling `done` after each.
pub fn run_ablation(
    settings: &Settings,
    rows: &[usize],
    train: &[Triplet],
    eval: &[Triplet],
    threads: usize,
    mut done: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut out = Vec::with_capacity(rows.len());
    for &r in rows {
        let sw = *ABLATION_GRID
            .get(r.wrapping_sub(1))
            .ok_or_else(|| crate::Error::config(format!("ablation row {r} is outside 1..=7")))?;
        let (_, row) = run_config(settings, sw, train, eval, threads)?;
        done(&row);
        out.push(row);
    }
    Ok(out)
}

fn mark(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "×"
    }
}

/// Plain-text table with the four switch columns plus TER and BLEU.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("row\tInteractive\tPredictor\tCopyNet\tJoint Training\tTER\tBLEU\n");
    for r in rows {
        let w = r.switches;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.2}",
            r.row,
            mark(w.interactive),
            mark(w.predictor),
            mark(w.copynet),
            mark(w.joint_training),
            r.ter,
            r.bleu
        );
    }
    s
}
