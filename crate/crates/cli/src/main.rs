//! `ape`: command-line entry point for labelling, training, decoding,
//! evaluation, ablation, corpus generation, import and heatmap export.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ape", version, about = "Copy-aware automatic post-editing")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Key/value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set model.d=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Size preset the configuration starts from.
    #[arg(long, value_enum, global = true)]
    pub profile: Option<ProfileArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ProfileArg {
    Paper,
    Test,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Add copy labels to a triplet corpus.
    Label {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "backtrace")]
        mode: String,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Metrics log (one JSON record per line).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Beam-decode src/mt pairs with a trained model.
    Decode {
        #[arg(long)]
        model: PathBuf,
        /// Tab-separated lines whose first two fields are src and mt.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-step gate and copy distributions of each output, as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Predictor scores, one line of numbers per input.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Score hypotheses against references.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        /// Plain references, one per line.
        #[arg(long, conflicts_with = "corpus")]
        r#ref: Option<PathBuf>,
        /// Plain mt sentences for copying accuracy.
        #[arg(long, conflicts_with = "corpus")]
        mt: Option<PathBuf>,
        /// Triplet corpus supplying references, mt and labels.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Predictor scores to compare with labels.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// 0/1 labels, one line per sentence.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the ablation configurations under one budget.
    Ablate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Evaluation corpus; defaults to the training corpus.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Comma-separated rows (1-7).
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7")]
        rows: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Generate a synthetic post-editing corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        vocab_size: usize,
        #[arg(long, default_value_t = 3)]
        min_len: usize,
        #[arg(long, default_value_t = 8)]
        max_len: usize,
        #[arg(long, default_value_t = 0.15)]
        sub_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        del_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        ins_rate: f64,
    },
    /// Combine parallel src/mt/pe files into a triplet corpus.
    Import {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        mt: PathBuf,
        #[arg(long)]
        pe: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Learn this many BPE merges over all three sides and segment them.
        #[arg(long)]
        bpe: Option<usize>,
        /// Where to save the learned merges.
        #[arg(long, requires = "bpe")]
        bpe_out: Option<PathBuf>,
    },
    /// Export decoder attention over mt and the copying scores for one triplet.
    Heatmap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Zero-based line of the corpus.
        #[arg(long, default_value_t = 0)]
        line: usize,
        /// Zero-based decoder layer; defaults to the last.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write one matrix per head.
        #[arg(long)]
        per_head: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<ape_core::Error>() {
                Some(ape_core::Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
