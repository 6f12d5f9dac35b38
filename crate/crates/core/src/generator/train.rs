use serde::{Deserialize, Serialize};

use super::{argmax_allowed, Model};
use crate::autodiff::{AdamConfig, AdamState, BnMode, Graph};
use crate::config::RunConfig;
use crate::dataio::{Batch, Dataset, Vocabulary};
use crate::error::{Error, Result};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub lr: f32,
    /// `(epoch, val_loss)` of the retained model.
    pub best: Option<(usize, f64)>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with the lowest validation loss.
    pub best: Model,
    pub last: Model,
    pub logs: Vec<EpochLog>,
    pub state: TrainState,
}

/// Eval-mode teacher-forced loss and next-token accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub loss: f64,
    pub accuracy: f64,
    pub tokens: usize,
}

fn step(model: &mut Model, adam: &mut AdamState, batch: &Batch, clip_norm: f32) -> Result<f64> {
    let mut g = Graph::new();
    let f = model.forward(
        &mut g,
        batch.visual.as_ref(),
        batch.audio.as_ref(),
        &batch.tokens_in,
        batch.width,
        BnMode::Train,
    )?;
    let loss = g.cross_entropy(f.logits, &batch.tokens_out, &batch.loss_mask)?;
    let value = g.value(loss)[0] as f64;
    g.backward(loss)?;
    g.accumulate_param_grads(&mut model.store);
    model.store.clip_grad_norm(clip_norm as f64);
    adam.step(&mut model.store)?;
    model.absorb(&f.moments);
    Ok(value)
}

pub fn evaluate(model: &Model, ds: &Dataset, vocab: &Vocabulary, batch_size: usize, max_len: usize) -> Result<EvalSummary> {
    let examples = ds.examples();
    let (mut loss, mut correct, mut tokens) = (0.0f64, 0usize, 0usize);
    let v = model.config.vocab_size;
    for chunk in examples.chunks(batch_size.max(1)) {
        let b = Batch::from_examples(ds, chunk, vocab, max_len)?;
        let mut g = Graph::new();
        let f = model.forward(&mut g, b.visual.as_ref(), b.audio.as_ref(), &b.tokens_in, b.width, BnMode::Eval)?;
        let n = b.loss_mask.iter().filter(|&&m| m != 0.0).count();
        let l = g.cross_entropy(f.logits, &b.tokens_out, &b.loss_mask)?;
        loss += g.value(l)[0] as f64 * n as f64;
        tokens += n;
        for (i, row) in g.value(f.logits).chunks_exact(v).enumerate() {
            if b.loss_mask[i] != 0.0 && argmax_allowed(row) == b.tokens_out[i] {
                correct += 1;
            }
        }
    }
    if tokens == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(EvalSummary {
        loss: loss / tokens as f64,
        accuracy: correct as f64 / tokens as f64,
        tokens,
    })
}

/// Adam with step decay; validates in eval mode after every epoch and keeps
/// the best model. `on_epoch` sees each log line as it is produced.
pub fn train(
    mut model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    vocab: &Vocabulary,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.examples().is_empty() {
        return Err(Error::InvalidArgument("training split has no captions".into()));
    }
    if val_set.examples().is_empty() {
        return Err(Error::InvalidArgument(format!("validation split `{}` has no captions", cfg.val_split)));
    }
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let mut adam = AdamState::new(&model.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut state = TrainState {
        epoch: 0,
        lr: cfg.lr,
        best: None,
        seed: cfg.seed,
    };
    let mut best = model.clone();
    let mut logs = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        state.epoch = epoch;
        state.lr = cfg.lr_at(epoch);
        adam.set_lr(state.lr);
        let (mut total, mut tokens) = (0.0, 0usize);
        for batch in train_set.batches(vocab, cfg.batch_size, cfg.max_len, cfg.seed, epoch)? {
            let n = batch.loss_mask.iter().filter(|&&m| m != 0.0).count();
            total += step(&mut model, &mut adam, &batch, cfg.clip_norm)? * n as f64;
            tokens += n;
        }
        let val = evaluate(&model, val_set, vocab, cfg.batch_size, cfg.max_len)?;
        let log = EpochLog {
            epoch,
            train_loss: total / tokens as f64,
            val_loss: val.loss,
            lr: state.lr,
        };
        if state.best.is_none_or(|(_, b)| val.loss < b) {
            state.best = Some((epoch, val.loss));
            best = model.clone();
        }
        on_epoch(&log)?;
        logs.push(log);
    }
    Ok(TrainOutcome {
        best,
        last: model,
        logs,
        state,
    })
}
