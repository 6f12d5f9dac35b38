//! `mmcap` subcommands: vocabulary building, training, captioning,
//! attribution reports, evaluation and synthetic data.
//!
//! Every command reads and writes plain files; failures are reported on
//! stderr as one JSON object `{ "code", "message" }`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mmcap::config::Modality;
use mmcap::dataio::Split;
use mmcap::Error;

mod commands;
pub mod report;

pub use commands::{
    build_vocab, caption, eval, explain, make_synthetic, train, workers, CaptionLine, TrainSummary,
};

#[derive(Debug, Parser)]
#[command(name = "mmcap", version, about = "Interpretable audio-visual captioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary file from manifest captions.
    BuildVocab(BuildVocabArgs),
    /// Train a model and write a checkpoint plus a per-epoch JSON log.
    Train(TrainArgs),
    /// Greedy-decode one caption per clip.
    Caption(CaptionArgs),
    /// Per-word activation energies and modality decisions as JSON lines.
    Explain(ExplainArgs),
    /// BLEU-4, ROUGE-L and CIDEr of candidates against manifest references.
    Eval(EvalArgs),
    /// Write synthetic clips whose nouns are visual and verbs audible.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub min_freq: usize,
    /// Split whose captions are counted.
    #[arg(long, default_value = "train")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run config; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Modality>,
}

fn parse_mode(s: &str) -> Result<Modality, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unknown mode `{s}` (expected audio_visual, visual_only or audio_only)"))
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub caption: CaptionArgs,
    /// JSON `{ "visual": [...], "audio": [...] }`; adds a filtered view.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Also write a static highlight page.
    #[arg(long)]
    pub html: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON array of `{ "id", "caption" }`, as written by `caption`.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub clips: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: Split,
    /// Rows per feature file, both modalities.
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
    #[arg(long, default_value_t = 16)]
    pub visual_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub audio_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f32,
}

pub fn run(cli: Cli) -> mmcap::Result<()> {
    match cli.command {
        Command::BuildVocab(a) => build_vocab(&a),
        Command::Train(a) => train(&a).map(|s| println!("{}", serde_json::to_string(&s).expect("plain data"))),
        Command::Caption(a) => caption(&a),
        Command::Explain(a) => explain(&a),
        Command::Eval(a) => eval(&a),
        Command::MakeSynthetic(a) => make_synthetic(&a),
    }
}

/// `{"code": ..., "message": ...}` for stderr.
pub fn diagnostic(e: &Error) -> String {
    serde_json::json!({ "code": e.code(), "message": e.to_string() }).to_string()
}
