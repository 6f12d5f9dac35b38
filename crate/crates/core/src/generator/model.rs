use rand::Rng;

use crate::aggregation::{aggregate, align_and_concat, se_weights, Affine, SeParams, WordAttribution};
use crate::autodiff::{BatchMoments, BnMode, Graph, ParamId, ParamStore, RunningStats, Tensor, Var};
use crate::config::ModelConfig;
use crate::encoder::{encode, LstmParams};
use crate::error::{Error, Result};
use crate::init::xavier;
use crate::mmcnn::MmCnn;

/// One modality's path: optional input projection, LSTM, MM-CNN stack and
/// the alignment map to `D_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub proj: Option<Affine>,
    pub lstm: LstmParams,
    pub cnn: MmCnn,
    pub align: Affine,
}

impl Branch {
    fn grid_channels(cfg: &ModelConfig, hidden: usize) -> usize {
        cfg.embed_dim + hidden
    }

    #[allow(clippy::too_many_arguments)]
    fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        input: usize,
        proj: Option<usize>,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let proj = proj.map(|p| (Affine::init(store, &format!("{name}.proj"), input, p, rng), p));
        let lstm_in = proj.map_or(input, |(_, p)| p);
        let lstm = LstmParams::init(store, &format!("{name}.lstm"), lstm_in, hidden, rng);
        let d = Self::grid_channels(cfg, hidden);
        let cnn = MmCnn::init(store, &format!("{name}.cnn"), d, cfg.blocks, cfg.bn_momentum, cfg.bn_eps, rng)?;
        let align = Affine::init(store, &format!("{name}.align"), d, cfg.joint_dim, rng);
        Ok(Branch {
            proj: proj.map(|(a, _)| a),
            lstm,
            cnn,
            align,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn lookup(
        store: &ParamStore,
        name: &str,
        cfg: &ModelConfig,
        input: usize,
        proj: Option<usize>,
        hidden: usize,
        stats: Vec<[RunningStats; 3]>,
    ) -> Result<Self> {
        let proj_p = proj
            .map(|p| Affine::lookup(store, &format!("{name}.proj"), input, p))
            .transpose()?;
        let lstm = LstmParams::lookup(store, &format!("{name}.lstm"))?;
        if lstm.input != proj.unwrap_or(input) || lstm.hidden != hidden {
            return Err(Error::Checkpoint(format!("`{name}.lstm` does not match the config")));
        }
        let d = Self::grid_channels(cfg, hidden);
        let cnn = MmCnn::lookup(store, &format!("{name}.cnn"), d, stats, cfg.bn_momentum, cfg.bn_eps)?;
        let align = Affine::lookup(store, &format!("{name}.align"), d, cfg.joint_dim)?;
        Ok(Branch {
            proj: proj_p,
            lstm,
            cnn,
            align,
        })
    }

    /// `[B×T×D_in]` features and `[B×L×D_s]` embeddings to the stack output
    /// `[B×L×T×D]`.
    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: Var,
        embedded: Var,
        mode: BnMode,
        moments: &mut Vec<BatchMoments>,
    ) -> Result<Var> {
        let x = match &self.proj {
            Some(p) => p.apply(g, store, features)?,
            None => features,
        };
        let lstm = self.lstm.bind(g, store)?;
        let h = encode(g, &lstm, x)?;
        let grid = g.joint_grid(embedded, h)?;
        let grid = g.permute(grid, &[0, 3, 1, 2])?;
        let f = self.cnn.forward(g, store, grid, mode, moments)?;
        g.permute(f, &[0, 2, 3, 1])
    }
}

/// The full captioning network. Parameters live in `store`; batch-norm
/// running statistics live in each branch's `cnn`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embed: ParamId,
    pub visual: Option<Branch>,
    pub audio: Option<Branch>,
    pub se: SeParams,
    pub out: Affine,
}

/// Graph handles from one full forward pass.
#[derive(Debug)]
pub struct Forward {
    /// `[B·L×|V|]`
    pub logits: Var,
    /// `[B·L×T_c]` aggregation weights.
    pub weights: Var,
    /// Batch-norm moments in train mode, visual stack first.
    pub moments: Vec<BatchMoments>,
}

impl Model {
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let embed = store.add("embed", xavier(rng, &[c.vocab_size, c.embed_dim], c.vocab_size, c.embed_dim));
        let visual = c
            .mode
            .uses_visual()
            .then(|| Branch::init(&mut store, "visual", c, c.visual_dim, Some(c.visual_proj_dim), c.visual_hidden, rng))
            .transpose()?;
        let audio = c
            .mode
            .uses_audio()
            .then(|| Branch::init(&mut store, "audio", c, c.audio_dim, None, c.audio_hidden, rng))
            .transpose()?;
        let se = SeParams::init(&mut store, "se", c.t_c(), c.joint_dim, rng);
        let out = Affine::init(&mut store, "out", c.joint_dim, c.vocab_size, rng);
        Ok(Model {
            config,
            store,
            embed,
            visual,
            audio,
            se,
            out,
        })
    }

    /// Rebinds a model from named parameters and per-branch running stats.
    pub fn from_parts(
        config: ModelConfig,
        store: ParamStore,
        visual_stats: Vec<[RunningStats; 3]>,
        audio_stats: Vec<[RunningStats; 3]>,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let embed = store
            .id("embed")
            .filter(|&id| store.get(id).shape() == [c.vocab_size, c.embed_dim])
            .ok_or_else(|| Error::Checkpoint("missing or misshapen `embed`".into()))?;
        let visual = c
            .mode
            .uses_visual()
            .then(|| {
                Branch::lookup(&store, "visual", c, c.visual_dim, Some(c.visual_proj_dim), c.visual_hidden, visual_stats)
            })
            .transpose()?;
        let audio = c
            .mode
            .uses_audio()
            .then(|| Branch::lookup(&store, "audio", c, c.audio_dim, None, c.audio_hidden, audio_stats))
            .transpose()?;
        let se = SeParams::lookup(&store, "se", c.t_c(), c.joint_dim)?;
        let out = Affine::lookup(&store, "out", c.joint_dim, c.vocab_size)?;
        Ok(Model {
            config,
            store,
            embed,
            visual,
            audio,
            se,
            out,
        })
    }

    pub fn branches(&self) -> impl Iterator<Item = (&'static str, &Branch)> {
        [("visual", self.visual.as_ref()), ("audio", self.audio.as_ref())]
            .into_iter()
            .filter_map(|(n, b)| b.map(|b| (n, b)))
    }

    /// Teacher-forced pass over `tokens_in: [B×L]` (row-major).
    pub fn forward(
        &self,
        g: &mut Graph,
        visual: Option<&Tensor>,
        audio: Option<&Tensor>,
        tokens_in: &[usize],
        width: usize,
        mode: BnMode,
    ) -> Result<Forward> {
        let c = &self.config;
        if width == 0 || tokens_in.is_empty() || !tokens_in.len().is_multiple_of(width) {
            return Err(Error::shape("forward", format!("{} tokens in rows of {width}", tokens_in.len())));
        }
        let b = tokens_in.len() / width;
        if let Some(&t) = tokens_in.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {t} outside vocabulary of {}", c.vocab_size)));
        }
        let check = |name: &str, t: Option<&Tensor>, used: bool, steps: usize, dim: usize| -> Result<()> {
            match (used, t) {
                (false, None) => Ok(()),
                (false, Some(_)) => Err(Error::Config(format!("model was built without {name} input"))),
                (true, None) => Err(Error::Config(format!("model needs {name} features"))),
                (true, Some(t)) if t.shape() != [b, steps, dim] => Err(Error::shape(
                    "forward",
                    format!("{name} features {:?}, want [{b}, {steps}, {dim}]", t.shape()),
                )),
                _ => Ok(()),
            }
        };
        check("visual", visual, c.mode.uses_visual(), c.t_v, c.visual_dim)?;
        check("audio", audio, c.mode.uses_audio(), c.t_a, c.audio_dim)?;

        let table = g.param(&self.store, self.embed)?;
        let e = g.embedding(table, tokens_in)?;
        let e = g.reshape(e, &[b, width, c.embed_dim])?;
        let mut moments = Vec::new();
        let mut run = |g: &mut Graph, branch: &'_ Option<Branch>, feats: Option<&Tensor>| -> Result<Option<Var>> {
            match (branch, feats) {
                (Some(br), Some(t)) => {
                    let x = g.constant(t)?;
                    br.forward(g, &self.store, x, e, mode, &mut moments).map(Some)
                }
                _ => Ok(None),
            }
        };
        let fv = run(g, &self.visual, visual)?;
        let fa = run(g, &self.audio, audio)?;
        let vis = fv.zip(self.visual.as_ref().map(|b| &b.align));
        let aud = fa.zip(self.audio.as_ref().map(|b| &b.align));
        let fc = align_and_concat(g, &self.store, vis, aud)?;
        let fc = g.reshape(fc, &[b * width, c.t_c(), c.joint_dim])?;
        let weights = se_weights(g, &self.store, &self.se, fc)?;
        let x = aggregate(g, fc, weights)?;
        let logits = self.out.apply(g, &self.store, x)?;
        Ok(Forward {
            logits,
            weights,
            moments,
        })
    }

    /// Folds train-mode moments into the running stats, visual stack first.
    pub fn absorb(&mut self, moments: &[BatchMoments]) {
        let mut rest = moments;
        for br in [self.visual.as_mut(), self.audio.as_mut()].into_iter().flatten() {
            let used = br.cnn.absorb(rest);
            rest = &rest[used..];
        }
    }

    /// Per-position attributions from aggregation weights `[N×T_c]`.
    pub fn attributions(&self, weights: &[f32], words: &[String]) -> Vec<WordAttribution> {
        let tc = self.config.t_c();
        words
            .iter()
            .zip(weights.chunks_exact(tc))
            .enumerate()
            .map(|(i, (w, row))| WordAttribution::new(i, w.clone(), row, self.config.visual_positions()))
            .collect()
    }
}
