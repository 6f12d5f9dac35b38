use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mmcap::checkpoint;
use mmcap::config::RunConfig;
use mmcap::dataio::{Dataset, Manifest, Split, Vocabulary};
use mmcap::generator::{self, greedy_decode, Model};
use mmcap::metrics::{self, EvalCorpus};
use mmcap::synthetic::{self, Lexicon, SyntheticSpec};
use mmcap::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::report::{self, AttributionReport};
use crate::{BuildVocabArgs, CaptionArgs, EvalArgs, ExplainArgs, SyntheticArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.mmck";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Dataio worker count: available cores, capped by `MMCAP_THREADS`.
pub fn workers() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("MMCAP_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cores.min(cap),
        _ => cores,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io(path, e))
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io(path, e))
}

pub fn build_vocab(a: &BuildVocabArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let vocab = Vocabulary::build(&manifest.captions(a.split), a.min_freq);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    vocab.save(&a.out)
}

/// Printed on stdout after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    /// Teacher-forced next-token accuracy of the saved model on the
    /// training split.
    pub train_accuracy: f64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

fn resolve(a: &TrainArgs) -> Result<(RunConfig, PathBuf, PathBuf, PathBuf)> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.manifest = a.manifest.clone().or(cfg.manifest);
    cfg.vocab = a.vocab.clone().or(cfg.vocab);
    cfg.out_dir = a.out_dir.clone().or(cfg.out_dir);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.max_epochs = a.epochs.unwrap_or(cfg.max_epochs);
    cfg.blocks = a.blocks.unwrap_or(cfg.blocks);
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    cfg.validate()?;
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("`{key}` is required (config key or --{})", key.replace('_', "-"))))
    };
    let (m, v, o) = (need(&cfg.manifest, "manifest")?, need(&cfg.vocab, "vocab")?, need(&cfg.out_dir, "out_dir")?);
    Ok((cfg, m, v, o))
}

pub fn train(a: &TrainArgs) -> Result<TrainSummary> {
    let (cfg, manifest_path, vocab_path, out_dir) = resolve(a)?;
    let manifest = Manifest::load(&manifest_path)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    if vocab.min_freq() != cfg.min_freq {
        return Err(Error::Config(format!(
            "vocabulary was built with min_freq {}, config says {}",
            vocab.min_freq(),
            cfg.min_freq
        )));
    }
    let val_split: Split = cfg.val_split.parse()?;
    let mc = cfg.model_config(vocab.len());
    mc.validate()?;
    let n = workers();
    let train_set = Dataset::load(&manifest.split(Split::Train), &mc, n)?;
    let val_set = if val_split == Split::Train {
        train_set.clone()
    } else {
        Dataset::load(&manifest.split(val_split), &mc, n)?
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| io(&out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = create(&log_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::init(mc, &mut rng)?;
    let outcome = generator::train(model, &train_set, &val_set, &vocab, &cfg, |line| {
        serde_json::to_writer(&mut log, line)?;
        writeln!(log).and_then(|_| log.flush()).map_err(|e| io(&log_path, e))
    })?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &outcome.best, &vocab)?;
    let fit = generator::evaluate(&outcome.best, &train_set, &vocab, cfg.batch_size, cfg.max_len)?;
    let (best_epoch, best_val_loss) = outcome.state.best.unwrap_or((0, f64::NAN));
    Ok(TrainSummary {
        epochs: outcome.logs.len(),
        best_epoch,
        best_val_loss,
        final_train_loss: outcome.logs.last().map_or(f64::NAN, |l| l.train_loss),
        train_accuracy: fit.accuracy,
        checkpoint: ckpt,
        log: log_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub id: String,
    pub caption: String,
}

fn decode_split(a: &CaptionArgs) -> Result<Vec<AttributionReport>> {
    let (model, vocab) = checkpoint::load(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let ds = Dataset::load(&manifest.split(a.split), &model.config, workers())?;
    ds.clips
        .iter()
        .map(|c| {
            let d = greedy_decode(&model, c.visual.as_ref(), c.audio.as_ref(), &vocab, a.max_len)?;
            Ok(AttributionReport::new(&c.id, d.words, d.attributions))
        })
        .collect()
}

pub fn caption(a: &CaptionArgs) -> Result<()> {
    let lines: Vec<CaptionLine> = decode_split(a)?
        .into_iter()
        .map(|r| CaptionLine {
            caption: r.words.join(" "),
            id: r.id,
        })
        .collect();
    write_json(&a.out, &lines)
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let lexicon = a.lexicon.as_deref().map(Lexicon::load).transpose()?;
    let mut reports = decode_split(&a.caption)?;
    let out = &a.caption.out;
    let mut w = create(out)?;
    for r in &mut reports {
        if let Some(lex) = &lexicon {
            r.filter(lex);
        }
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| io(out, e))?;
    }
    w.flush().map_err(|e| io(out, e))?;
    if let Some(page) = &a.html {
        let mut h = create(page)?;
        h.write_all(report::html(&reports).as_bytes())
            .and_then(|_| h.flush())
            .map_err(|e| io(page, e))?;
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.candidates).map_err(|e| io(&a.candidates, e))?;
    let candidates: Vec<CaptionLine> = serde_json::from_str(&text)?;
    let manifest = Manifest::load(&a.manifest)?;
    let in_split: HashSet<&str> = manifest.split(a.split).iter().map(|r| r.id.as_str()).collect();
    let mut unknown: Vec<String> = candidates
        .iter()
        .filter(|c| !in_split.contains(c.id.as_str()))
        .map(|c| c.id.clone())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::UnknownIds(unknown));
    }
    let corpus = EvalCorpus::from_sentences(candidates.iter().map(|c| {
        let refs = manifest.get(&c.id).expect("checked above").captions.iter().map(String::as_str).collect();
        (c.id.as_str(), c.caption.as_str(), refs)
    }))?;
    write_json(&a.out, &metrics::evaluate(&corpus)?)
}

pub fn make_synthetic(a: &SyntheticArgs) -> Result<()> {
    let spec = SyntheticSpec {
        clips: a.clips,
        seed: a.seed,
        split: a.split,
        visual_rows: a.rows,
        audio_rows: a.rows,
        visual_dim: a.visual_dim,
        audio_dim: a.audio_dim,
        noise: a.noise,
    };
    synthetic::write(&a.out_dir, &spec).map(|_| ())
}
