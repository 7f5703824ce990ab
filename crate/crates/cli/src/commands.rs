use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde_json::json;

use ape_core::ablation::{format_table, run_ablation};
use ape_core::config::{KeyValues, Profile, Settings};
use ape_core::data::{
    bpe_apply, bpe_learn, format_corpus, import_parallel, read_corpus, synth_corpus,
    tokens, write_corpus, Noise, SynthConfig, Triplet,
};
use ape_core::decode::{decode_all, predict_scores, strip_eos};
use ape_core::eval::{evaluate, EvalInputs};
use ape_core::files::{read_to_string, write_atomic};
use ape_core::heatmap::heatmap;
use ape_core::labeling::{label, LabelMode};
use ape_core::model::{read_checkpoint, ApeModel, ForwardTrace};
use ape_core::nn::Ctx;
use ape_core::tensor::Tape;
use ape_core::train::Trainer;

use crate::{Cli, Command, GlobalArgs, ProfileArg};

/// Profile defaults, then the checkpoint's stored settings, the config file,
/// `--set` overrides and finally `--seed`.
fn resolve(global: &GlobalArgs, stored: Option<&KeyValues>) -> Result<Settings> {
    let profile = match global.profile {
        Some(ProfileArg::Paper) => Profile::Paper,
        Some(ProfileArg::Test) | None => Profile::Test,
    };
    let mut kv = KeyValues::default();
    if let Some(stored) = stored {
        for (k, v) in stored.iter() {
            if !k.starts_with("state.") {
                kv.insert(k, v);
            }
        }
    }
    if let Some(path) = &global.config {
        kv.extend(&KeyValues::parse(&read_to_string(path)?).with_context(|| format!("in {}", path.display()))?);
    }
    for a in &global.overrides {
        kv.push_assignment(a)?;
    }
    if let Some(seed) = global.seed {
        kv.insert("seed", seed);
    }
    let mut settings = Settings::profile(profile);
    settings.apply(&kv)?;
    Ok(settings)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn log_settings(settings: &Settings) {
    eprintln!("# resolved configuration");
    eprint!("{}", settings.to_key_values().to_text());
}

fn lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_to_string(path)?.lines().map(str::to_owned).collect())
}

fn token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(lines(path)?.iter().map(|l| tokens(l)).collect())
}

/// Reads `src<TAB>mt[<TAB>...]` lines.
fn read_pairs(path: &Path) -> Result<Vec<Triplet>> {
    lines(path)?
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let mut f = l.split('\t');
            match (f.next(), f.next()) {
                (Some(src), Some(mt)) => Ok(Triplet::new(src, mt, f.next().unwrap_or(""))),
                _ => bail!("{}:{}: expected src and mt separated by a tab", path.display(), n + 1),
            }
        })
        .collect()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Label { input, out, mode } => {
            let mode: LabelMode = mode.parse()?;
            let mut corpus = read_corpus(&input)?;
            for t in &mut corpus {
                t.labels = Some(label(&t.mt, &t.pe, mode).labels);
            }
            emit(out.as_deref(), &format_corpus(&corpus))
        }
        Command::Train {
            input,
            out,
            log,
            resume,
        } => {
            let corpus = read_corpus(&input)?;
            let mut trainer = match &resume {
                Some(path) => {
                    let ck = read_checkpoint(path)?;
                    ensure!(
                        g.config.is_none() && g.overrides.is_empty() && g.profile.is_none(),
                        "a resumed run takes its settings from the checkpoint"
                    );
                    Trainer::resume(&ck, &corpus)?
                }
                None => Trainer::new(&resolve(g, None)?, &corpus, None)?,
            };
            log_settings(&trainer.settings);
            write_atomic(
                &with_suffix(&out, ".config"),
                trainer.settings.to_key_values().to_text().as_bytes(),
            )?;
            let remaining = trainer.settings.train.steps.saturating_sub(trainer.step_count());
            let mut buf = Vec::new();
            let metrics = trainer.run(remaining, Some(&mut buf), Some(&out))?;
            std::io::stderr().write_all(&buf)?;
            if let Some(path) = &log {
                write_atomic(path, &buf)?;
            }
            if metrics.is_empty() {
                ape_core::model::write_checkpoint(&out, &trainer.to_checkpoint())?;
            }
            let acc = trainer.accuracy()?;
            eprintln!(
                "trained to step {}: token accuracy {:.2}%{}",
                trainer.step_count(),
                acc.token_acc(),
                acc.pred_acc().map_or(String::new(), |p| format!(", prediction accuracy {p:.2}%"))
            );
            Ok(())
        }
        Command::Decode {
            model,
            input,
            out,
            trace,
            scores,
            threads,
        } => {
            let ck = read_checkpoint(&model)?;
            let settings = resolve(g, Some(&ck.config))?;
            log_settings(&settings);
            let (model, vocab) = ApeModel::from_checkpoint(&ck)?;
            let pairs = read_pairs(&input)?;
            let inputs: Vec<_> = pairs.iter().map(|t| (vocab.encode(&t.src), vocab.encode(&t.mt))).collect();
            let outputs = decode_all(&model, &inputs, &settings.decode, threads)?;
            let mut text = String::new();
            let mut trace_text = String::new();
            for (n, (o, (src, mt))) in outputs.iter().zip(&inputs).enumerate() {
                let hyp = strip_eos(&o.best.tokens);
                text.push_str(&vocab.decode(hyp).join(" "));
                text.push('\n');
                if o.truncated {
                    eprintln!("line {}: no hypothesis finished within the length limit", n + 1);
                }
                if trace.is_some() {
                    let ex = ape_core::data::Example {
                        src: src.clone(),
                        mt: mt.clone(),
                        pe: hyp.to_vec(),
                        labels: label(mt, hyp, LabelMode::Backtrace).labels,
                    };
                    let tape = Tape::new();
                    let ctx = Ctx::new(&tape, &model.params);
                    let t = ForwardTrace::capture(&model.forward_teacher_forced(&ctx, &ex)?);
                    let rows = |m: &ape_core::tensor::Tensor<f64>| (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
                    let rec = json!({
                        "line": n + 1,
                        "hyp": vocab.decode(hyp),
                        "score": o.best.score,
                        "truncated": o.truncated,
                        "s": t.s,
                        "gamma": t.gamma,
                        "p_copy": t.p_copy.as_ref().map(rows),
                    });
                    trace_text.push_str(&rec.to_string());
                    trace_text.push('\n');
                }
            }
            if let Some(path) = &trace {
                write_atomic(path, trace_text.as_bytes())?;
            }
            if let Some(path) = &scores {
                let s = predict_scores(&model, &vocab, &pairs)?;
                let body: String = s
                    .iter()
                    .map(|row| row.iter().map(f64::to_string).collect::<Vec<_>>().join(" ") + "\n")
                    .collect();
                write_atomic(path, body.as_bytes())?;
            }
            emit(out.as_deref(), &text)
        }
        Command::Eval {
            hyp,
            r#ref,
            mt,
            corpus,
            scores,
            labels,
            out,
        } => {
            let hyps = token_lines(&hyp)?;
            let (refs, mts, corpus_labels) = match (&corpus, &r#ref) {
                (Some(c), _) => {
                    let c = read_corpus(c)?;
                    let labels: Vec<Vec<u8>> = c
                        .iter()
                        .map(|t| t.labels.clone().unwrap_or_else(|| label(&t.mt, &t.pe, LabelMode::Backtrace).labels))
                        .collect();
                    (
                        c.iter().map(|t| t.pe.clone()).collect(),
                        Some(c.iter().map(|t| t.mt.clone()).collect()),
                        Some(labels),
                    )
                }
                (None, Some(r)) => (token_lines(r)?, mt.as_deref().map(token_lines).transpose()?, None),
                (None, None) => bail!("eval needs --ref or --corpus"),
            };
            ensure!(hyps.len() == refs.len(), "{} hypotheses for {} references", hyps.len(), refs.len());
            let score_rows: Option<Vec<Vec<f64>>> = scores
                .as_deref()
                .map(|p| -> Result<Vec<Vec<f64>>> {
                    lines(p)?
                        .iter()
                        .map(|l| l.split_whitespace().map(|x| x.parse::<f64>().context("bad score")).collect())
                        .collect()
                })
                .transpose()?;
            let label_rows: Option<Vec<Vec<u8>>> = match (&labels, corpus_labels) {
                (Some(p), _) => Some(
                    lines(p)?
                        .iter()
                        .map(|l| l.split_whitespace().map(|x| x.parse::<u8>().context("bad label")).collect())
                        .collect::<Result<_>>()?,
                ),
                (None, c) => c,
            };
            let predictions = match (&score_rows, &label_rows) {
                (Some(s), Some(l)) => Some((s.as_slice(), l.as_slice())),
                (Some(_), None) => bail!("--scores needs --labels or --corpus"),
                _ => None,
            };
            let report = evaluate(EvalInputs {
                hyps: &hyps,
                refs: &refs,
                mts: mts.as_deref(),
                predictions,
            })?;
            print!("{report}");
            if let Some(p) = &out {
                write_atomic(p, serde_json::to_string_pretty(&report)?.as_bytes())?;
            }
            Ok(())
        }
        Command::Ablate {
            input,
            eval,
            rows,
            out,
            threads,
        } => {
            let settings = resolve(g, None)?;
            log_settings(&settings);
            let train = read_corpus(&input)?;
            let eval = match &eval {
                Some(p) => read_corpus(p)?,
                None => train.clone(),
            };
            let results = run_ablation(&settings, &rows, &train, &eval, threads, |r| {
                eprintln!("row {} done: TER {:.2} BLEU {:.2}", r.row, r.ter, r.bleu)
            })?;
            emit(out.as_deref(), &format_table(&results))
        }
        Command::Synth {
            out,
            n,
            vocab_size,
            min_len,
            max_len,
            sub_rate,
            del_rate,
            ins_rate,
        } => {
            let cfg = SynthConfig {
                seed: g.seed.unwrap_or(SynthConfig::default().seed),
                n,
                vocab_size,
                min_len,
                max_len,
                noise: Noise {
                    sub_rate,
                    del_rate,
                    ins_rate,
                },
            };
            write_corpus(&out, &synth_corpus(&cfg)?)?;
            Ok(())
        }
        Command::Import {
            src,
            mt,
            pe,
            out,
            bpe,
            bpe_out,
        } => {
            let mut corpus = import_parallel(&src, &mt, &pe)?;
            if let Some(merges) = bpe {
                let mut text = String::new();
                for t in &corpus {
                    for side in [&t.src, &t.mt, &t.pe] {
                        text.push_str(&side.join(" "));
                        text.push('\n');
                    }
                }
                let model = bpe_learn(&text, merges);
                for t in &mut corpus {
                    for side in [&mut t.src, &mut t.mt, &mut t.pe] {
                        *side = bpe_apply(&model, &side.join(" "));
                    }
                }
                if let Some(p) = &bpe_out {
                    write_atomic(p, model.to_text().as_bytes())?;
                }
            }
            write_corpus(&out, &corpus)?;
            Ok(())
        }
        Command::Heatmap {
            model,
            input,
            line,
            layer,
            out,
            per_head,
        } => {
            let ck = read_checkpoint(&model)?;
            let (model, vocab) = ApeModel::from_checkpoint(&ck)?;
            let corpus = read_corpus(&input)?;
            let t = corpus
                .get(line)
                .with_context(|| format!("line {line} is past the end of {}", input.display()))?;
            let layer = layer.unwrap_or(model.config.dec_layers - 1);
            let h = heatmap(&model, &vocab, t, layer)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_atomic(&out.join(format!("attention.layer{layer}.tsv")), h.attention_tsv().as_bytes())?;
            if let Some(s) = h.scores_tsv() {
                write_atomic(&out.join("scores.tsv"), s.as_bytes())?;
            }
            if per_head {
                for head in 0..h.heads.len() {
                    write_atomic(
                        &out.join(format!("attention.layer{layer}.head{head}.tsv")),
                        h.head_tsv(head).as_bytes(),
                    )?;
                }
            }
            Ok(())
        }
    }
}
