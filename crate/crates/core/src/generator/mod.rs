//! Word head, loss, greedy decoding and the training loop.

mod model;
mod train;

pub use model::{Branch, Forward, Model};
pub use train::{evaluate, train, EpochLog, EvalSummary, TrainOutcome, TrainState};

use crate::aggregation::WordAttribution;
use crate::autodiff::{BnMode, Graph, Tensor, Var};
use crate::dataio::{prepare_audio, prepare_visual, FeatureMatrix, Vocabulary, EOS, PAD, SOS, UNK};
use crate::error::{Error, Result};

/// Ids never emitted by decoding or counted as predictions.
pub const BANNED: [usize; 3] = [PAD, SOS, UNK];

/// Word scores `x·Wᵀ + b` for `x: [N×D_c]`, `w: [|V|×D_c]`.
pub fn logits(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    g.fully_connected(x, w, Some(b))
}

/// Mean `−log p(target)` over positions with nonzero mask.
pub fn caption_loss(g: &mut Graph, logits: Var, targets: &[usize], loss_mask: &[f32]) -> Result<Var> {
    g.cross_entropy(logits, targets, loss_mask)
}

/// Highest-scoring id outside [`BANNED`]; ties go to the lower id.
pub fn argmax_allowed(row: &[f32]) -> usize {
    let mut best = (usize::MAX, f32::NEG_INFINITY);
    for (i, &v) in row.iter().enumerate() {
        if !BANNED.contains(&i) && (best.0 == usize::MAX || v > best.1) {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub ids: Vec<usize>,
    pub words: Vec<String>,
    pub attributions: Vec<WordAttribution>,
}

impl Decoded {
    pub fn sentence(&self) -> String {
        self.words.join(" ")
    }
}

fn as_input(m: Option<&FeatureMatrix>, used: bool, steps: usize, dim: usize, name: &str, visual: bool) -> Result<Option<Tensor>> {
    match (used, m) {
        (false, _) => Ok(None),
        (true, None) => Err(Error::Config(format!("model needs {name} features"))),
        (true, Some(m)) => {
            if m.cols() != dim {
                return Err(Error::Config(format!(
                    "{name} features have {} columns, model expects {dim}",
                    m.cols()
                )));
            }
            let p = if visual { prepare_visual(m, steps)? } else { prepare_audio(m, steps)? };
            Tensor::new([1, steps, dim], p.into_values()).map(Some)
        }
    }
}

/// Generates one word per step from `<sos>` in eval mode until `<eos>` or
/// `max_len` words.
pub fn greedy_decode(
    model: &Model,
    visual: Option<&FeatureMatrix>,
    audio: Option<&FeatureMatrix>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Decoded> {
    let c = &model.config;
    if vocab.len() != c.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            c.vocab_size
        )));
    }
    let v = as_input(visual, c.mode.uses_visual(), c.t_v, c.visual_dim, "visual", true)?;
    let a = as_input(audio, c.mode.uses_audio(), c.t_a, c.audio_dim, "audio", false)?;
    let mut tokens = vec![SOS];
    let mut out = Decoded {
        ids: Vec::new(),
        words: Vec::new(),
        attributions: Vec::new(),
    };
    let tc = c.t_c();
    for step in 0..max_len {
        let mut g = Graph::new();
        let f = model.forward(&mut g, v.as_ref(), a.as_ref(), &tokens, tokens.len(), BnMode::Eval)?;
        let row = &g.value(f.logits)[step * c.vocab_size..(step + 1) * c.vocab_size];
        let next = argmax_allowed(row);
        if next == EOS {
            break;
        }
        let word = vocab.word(next).to_owned();
        let w = &g.value(f.weights)[step * tc..(step + 1) * tc];
        out.attributions.push(WordAttribution::new(step, word.clone(), w, c.visual_positions()));
        out.ids.push(next);
        out.words.push(word);
        tokens.push(next);
    }
    Ok(out)
}
