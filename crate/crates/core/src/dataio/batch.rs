use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::feature::{load_feature_matrix, prepare_audio, prepare_visual, FeatureMatrix};
use super::manifest::ClipRecord;
use super::vocab::{Vocabulary, EOS, PAD, SOS};
use crate::autodiff::Tensor;
use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// One clip with features already resampled to the model's timestep counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub visual: Option<FeatureMatrix>,
    pub audio: Option<FeatureMatrix>,
    pub captions: Vec<String>,
}

impl Clip {
    /// Resamples raw features and checks them against `cfg`.
    pub fn from_features(
        id: impl Into<String>,
        visual: Option<FeatureMatrix>,
        audio: Option<FeatureMatrix>,
        captions: Vec<String>,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let id = id.into();
        let visual = match (cfg.mode.uses_visual(), visual) {
            (false, _) => None,
            (true, None) => return Err(missing(&id, "visual", "no visual_path in manifest")),
            (true, Some(m)) => {
                check_dim(&id, "visual", m.cols(), cfg.visual_dim)?;
                Some(prepare_visual(&m, cfg.t_v)?)
            }
        };
        let audio = match (cfg.mode.uses_audio(), audio) {
            (false, _) => None,
            (true, None) => return Err(missing(&id, "audio", "no audio_path in manifest")),
            (true, Some(m)) => {
                check_dim(&id, "audio", m.cols(), cfg.audio_dim)?;
                Some(prepare_audio(&m, cfg.t_a)?)
            }
        };
        Ok(Clip {
            id,
            visual,
            audio,
            captions,
        })
    }

    fn load(r: &ClipRecord, cfg: &ModelConfig) -> Result<Self> {
        let read = |path: &Option<std::path::PathBuf>, used: bool| -> Result<Option<FeatureMatrix>> {
            match path {
                Some(p) if used => load_feature_matrix(p).map(Some).map_err(|e| Error::MissingFeature {
                    clip: r.id.clone(),
                    path: p.clone(),
                    reason: e.to_string(),
                }),
                _ => Ok(None),
            }
        };
        let visual = read(&r.visual_path, cfg.mode.uses_visual())?;
        let audio = read(&r.audio_path, cfg.mode.uses_audio())?;
        Clip::from_features(r.id.clone(), visual, audio, r.captions.clone(), cfg)
    }
}

fn missing(id: &str, what: &str, reason: &str) -> Error {
    Error::MissingFeature {
        clip: id.to_owned(),
        path: what.into(),
        reason: reason.to_owned(),
    }
}

fn check_dim(id: &str, what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Config(format!(
            "clip `{id}`: {what} features have {got} columns, config expects {want}"
        )));
    }
    Ok(())
}

/// Clips of one split, held in memory.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub clips: Vec<Clip>,
}

impl Dataset {
    /// Loads features with up to `workers` threads; clip order follows
    /// `records` regardless of thread scheduling.
    pub fn load(records: &[&ClipRecord], cfg: &ModelConfig, workers: usize) -> Result<Self> {
        let workers = workers.clamp(1, records.len().max(1));
        let chunk = records.len().div_ceil(workers).max(1);
        let parts: Vec<Result<Vec<Clip>>> = std::thread::scope(|s| {
            let handles: Vec<_> = records
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|r| Clip::load(r, cfg)).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("feature loader panicked"))
                .collect()
        });
        let mut clips = Vec::with_capacity(records.len());
        for p in parts {
            clips.extend(p?);
        }
        Ok(Dataset { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Every (clip, caption) pair, in order.
    pub fn examples(&self) -> Vec<(usize, usize)> {
        self.clips
            .iter()
            .enumerate()
            .flat_map(|(c, clip)| (0..clip.captions.len()).map(move |k| (c, k)))
            .collect()
    }

    /// Caption examples shuffled deterministically per `(seed, epoch)` and
    /// grouped into batches of at most `batch_size`.
    pub fn batches(
        &self,
        vocab: &Vocabulary,
        batch_size: usize,
        max_len: usize,
        seed: u64,
        epoch: usize,
    ) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let mut order = self.examples();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order
            .chunks(batch_size)
            .map(|chunk| Batch::from_examples(self, chunk, vocab, max_len))
            .collect()
    }
}

/// Stacks clip features into `[B×T×D]` tensors; `None` when the modality is
/// unused.
pub fn stack_features(clips: &[&Clip]) -> Result<(Option<Tensor>, Option<Tensor>)> {
    fn stack(ms: Vec<&FeatureMatrix>) -> Result<Tensor> {
        let (t, d) = (ms[0].rows(), ms[0].cols());
        if ms.iter().any(|m| (m.rows(), m.cols()) != (t, d)) {
            return Err(Error::shape("stack_features", "clips disagree on feature shape"));
        }
        let data = ms.iter().flat_map(|m| m.values().iter().copied()).collect();
        Tensor::new([ms.len(), t, d], data)
    }
    if clips.is_empty() {
        return Err(Error::InvalidArgument("cannot stack zero clips".into()));
    }
    let side = |pick: fn(&Clip) -> Option<&FeatureMatrix>| -> Result<Option<Tensor>> {
        let ms: Option<Vec<&FeatureMatrix>> = clips.iter().map(|c| pick(c)).collect();
        ms.map(stack).transpose()
    };
    Ok((side(|c| c.visual.as_ref())?, side(|c| c.audio.as_ref())?))
}

/// Teacher-forcing batch with right-padded token matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub clip_ids: Vec<String>,
    pub visual: Option<Tensor>,
    pub audio: Option<Tensor>,
    /// Row width `L`.
    pub width: usize,
    /// `B×L`, row-major.
    pub tokens_in: Vec<usize>,
    pub tokens_out: Vec<usize>,
    pub loss_mask: Vec<f32>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn from_examples(
        ds: &Dataset,
        examples: &[(usize, usize)],
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let clips: Vec<&Clip> = examples.iter().map(|&(c, _)| &ds.clips[c]).collect();
        let captions: Vec<&str> = examples
            .iter()
            .map(|&(c, k)| ds.clips[c].captions[k].as_str())
            .collect();
        let (visual, audio) = stack_features(&clips)?;
        let (width, tokens_in, tokens_out, loss_mask) = encode_targets(&captions, vocab, max_len)?;
        Ok(Batch {
            clip_ids: clips.iter().map(|c| c.id.clone()).collect(),
            visual,
            audio,
            width,
            tokens_in,
            tokens_out,
            loss_mask,
        })
    }
}

type Targets = (usize, Vec<usize>, Vec<usize>, Vec<f32>);

/// Shifted input/target rows for each caption, truncated to `max_len − 1`
/// words and padded to the longest row.
pub fn encode_targets(captions: &[&str], vocab: &Vocabulary, max_len: usize) -> Result<Targets> {
    if max_len < 2 {
        return Err(Error::InvalidArgument("max_len must be at least 2".into()));
    }
    let encoded: Vec<Vec<usize>> = captions
        .iter()
        .map(|c| {
            let mut ids = vocab.encode(c);
            ids.truncate(max_len - 1);
            ids
        })
        .collect();
    let width = 1 + encoded.iter().map(Vec::len).max().unwrap_or(0);
    let n = captions.len() * width;
    let (mut tin, mut tout, mut mask) = (vec![PAD; n], vec![PAD; n], vec![0.0; n]);
    for (b, ids) in encoded.iter().enumerate() {
        let row = b * width;
        tin[row] = SOS;
        tin[row + 1..row + 1 + ids.len()].copy_from_slice(ids);
        tout[row..row + ids.len()].copy_from_slice(ids);
        tout[row + ids.len()] = EOS;
        mask[row..row + ids.len() + 1].fill(1.0);
    }
    Ok((width, tin, tout, mask))
}
