//! Masked residual 2D CNN over (text position × modality timestep) grids.
//!
//! Grids are laid out `[B×D×T_s×T_m]`: text runs along the convolution H
//! axis, so zeroing kernel rows below the centre keeps every text row blind
//! to later words.

use rand::Rng;

use crate::autodiff::{BatchMoments, BnMode, Graph, ParamId, ParamStore, RunningStats, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::conv_kernel;

pub const KERNEL: usize = 3;

/// `kh×kw` mask that zeroes kernel rows reading later text positions.
pub fn causal_text_mask(kh: usize, kw: usize) -> Result<Tensor> {
    if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("kernel extents must be odd, got {kh}x{kw}")));
    }
    let centre = kh / 2;
    let data = (0..kh * kw)
        .map(|i| if i / kw > centre { 0.0 } else { 1.0 })
        .collect();
    Tensor::new([kh, kw], data)
}

/// Text-by-modality grid `[B×T_s×T_m×(D_s+D_m)]` from embeddings
/// `[B×T_s×D_s]` and hidden states `[B×T_m×D_m]`.
pub fn construct_joint_tensor(g: &mut Graph, embedded: Var, hidden: Var) -> Result<Var> {
    g.joint_grid(embedded, hidden)
}

/// Channel counts through one block: `D → 2D → ⌊D/2⌋ → D`.
pub fn block_channels(d: usize) -> [usize; 3] {
    [2 * d, d / 2, d]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockParams {
    pub conv: [ParamId; 3],
    pub gamma: [ParamId; 3],
    pub beta: [ParamId; 3],
}

/// One MM-CNN stack of `k` residual blocks. Output is `I + Σ_b R_b`, the
/// input plus every block's branch output, which is exactly what the chain
/// of per-block skips carries to the end.
#[derive(Debug, Clone, PartialEq)]
pub struct MmCnn {
    pub channels: usize,
    pub blocks: Vec<BlockParams>,
    /// Running batch-norm statistics, three per block.
    pub stats: Vec<[RunningStats; 3]>,
    pub momentum: f32,
    pub eps: f32,
    mask: Tensor,
}

impl MmCnn {
    /// Registers `{prefix}.{i}.conv{j}`, `.bn{j}.gamma`, `.bn{j}.beta`. The
    /// last batch norm of each block starts with zero scale, so a fresh stack
    /// is the identity.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        blocks: usize,
        momentum: f32,
        eps: f32,
        rng: &mut R,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(Error::Config(format!("MM-CNN needs at least 2 channels, got {channels}")));
        }
        let [c1, c2, c3] = block_channels(channels);
        let shapes = [(c1, channels, 1), (c2, c1, 1), (c3, c2, KERNEL)];
        let mut params = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let mut conv = Vec::new();
            let mut gamma = Vec::new();
            let mut beta = Vec::new();
            for (j, &(co, ci, k)) in shapes.iter().enumerate() {
                let name = format!("{prefix}.{b}");
                conv.push(store.add(format!("{name}.conv{}", j + 1), conv_kernel(rng, co, ci, k, k)));
                let scale = if j == 2 { 0.0 } else { 1.0 };
                gamma.push(store.add(format!("{name}.bn{}.gamma", j + 1), Tensor::full([co], scale)));
                beta.push(store.add(format!("{name}.bn{}.beta", j + 1), Tensor::zeros([co])));
            }
            params.push(BlockParams {
                conv: conv.try_into().unwrap(),
                gamma: gamma.try_into().unwrap(),
                beta: beta.try_into().unwrap(),
            });
        }
        let stats = (0..blocks)
            .map(|_| [c1, c2, c3].map(RunningStats::standard))
            .collect();
        Ok(MmCnn {
            channels,
            blocks: params,
            stats,
            momentum,
            eps,
            mask: causal_text_mask(KERNEL, KERNEL)?,
        })
    }

    /// Rebinds a stack registered under `prefix`; running stats come from
    /// the caller.
    pub fn lookup(
        store: &ParamStore,
        prefix: &str,
        channels: usize,
        stats: Vec<[RunningStats; 3]>,
        momentum: f32,
        eps: f32,
    ) -> Result<Self> {
        let want = block_channels(channels);
        let in_ch = [channels, want[0], want[1]];
        let mut blocks = Vec::with_capacity(stats.len());
        for (b, st) in stats.iter().enumerate() {
            let get = |s: String| {
                store
                    .id(&s)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{s}`")))
            };
            let mut conv = [ParamId(0); 3];
            let mut gamma = [ParamId(0); 3];
            let mut beta = [ParamId(0); 3];
            for j in 0..3 {
                let name = format!("{prefix}.{b}");
                conv[j] = get(format!("{name}.conv{}", j + 1))?;
                gamma[j] = get(format!("{name}.bn{}.gamma", j + 1))?;
                beta[j] = get(format!("{name}.bn{}.beta", j + 1))?;
                let k = if j == 2 { KERNEL } else { 1 };
                let ok = store.get(conv[j]).shape() == [want[j], in_ch[j], k, k]
                    && store.get(gamma[j]).shape() == [want[j]]
                    && store.get(beta[j]).shape() == [want[j]]
                    && st[j].channels() == want[j];
                if !ok {
                    return Err(Error::Checkpoint(format!("`{name}` layer {} has wrong shape", j + 1)));
                }
            }
            blocks.push(BlockParams { conv, gamma, beta });
        }
        Ok(MmCnn {
            channels,
            blocks,
            stats,
            momentum,
            eps,
            mask: causal_text_mask(KERNEL, KERNEL)?,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Runs the stack on a channels-first grid. Train mode pushes each batch
    /// norm's moments onto `moments` in block order.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: Var,
        mode: BnMode,
        moments: &mut Vec<BatchMoments>,
    ) -> Result<Var> {
        let s = g.shape(input);
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(
                "mmcnn",
                format!("grid {s:?}, want [B, {}, T_s, T_m]", self.channels),
            ));
        }
        let mut x = input;
        for (p, st) in self.blocks.iter().zip(&self.stats) {
            x = residual_block(g, store, p, st, &self.mask, x, mode, self.eps, moments)?;
        }
        Ok(x)
    }

    /// Folds moments produced by [`MmCnn::forward`] into the running stats;
    /// returns how many were consumed.
    pub fn absorb(&mut self, moments: &[BatchMoments]) -> usize {
        let mut it = moments.iter();
        for st in &mut self.stats {
            for s in st.iter_mut() {
                if let Some(m) = it.next() {
                    s.absorb(m, self.momentum);
                }
            }
        }
        moments.len().min(3 * self.stats.len())
    }
}

/// `Y = X + BN(conv3(ReLU(BN(conv2(ReLU(BN(conv1(X))))))))`, conv3 masked.
#[allow(clippy::too_many_arguments)]
pub fn residual_block(
    g: &mut Graph,
    store: &ParamStore,
    p: &BlockParams,
    stats: &[RunningStats; 3],
    mask: &Tensor,
    x: Var,
    mode: BnMode,
    eps: f32,
    moments: &mut Vec<BatchMoments>,
) -> Result<Var> {
    let mut h = x;
    for j in 0..3 {
        let kernel = g.param(store, p.conv[j])?;
        h = if j == 2 {
            let pad = KERNEL / 2;
            g.conv2d(h, kernel, (pad, pad), Some(mask))?
        } else {
            g.conv2d(h, kernel, (0, 0), None)?
        };
        let gamma = g.param(store, p.gamma[j])?;
        let beta = g.param(store, p.beta[j])?;
        let (y, m) = g.batch_norm(h, gamma, beta, &stats[j], mode, eps)?;
        moments.extend(m);
        h = if j == 2 { y } else { g.relu(y)? };
    }
    g.add(x, h)
}
