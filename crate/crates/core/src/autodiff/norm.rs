use super::graph::{slot, Graph, Node, Op, Var};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f32 = 0.1;
pub const DEFAULT_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

/// Per-channel exponential moving averages of batch mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub initialized: bool,
}

/// Statistics observed on one training batch; `var` is unbiased.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    /// Stats that must observe a batch before eval-mode use.
    pub fn uninitialized(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
        }
    }

    /// Zero mean, unit variance; eval mode is then an affine identity.
    pub fn standard(channels: usize) -> Self {
        RunningStats {
            initialized: true,
            ..Self::uninitialized(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn absorb(&mut self, m: &BatchMoments, momentum: f32) {
        if !self.initialized {
            self.mean.clone_from(&m.mean);
            self.var.clone_from(&m.var);
            self.initialized = true;
            return;
        }
        for (r, &b) in self.mean.iter_mut().zip(&m.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&m.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

#[derive(Debug)]
pub(crate) struct BnSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    channels: usize,
    outer: usize,
    inner: usize,
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    train: bool,
}

impl Graph {
    /// Batch normalization over every axis but axis 1 (`[B×C×...]`).
    /// Train mode also returns the observed batch moments so the caller
    /// can fold them into its running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats,
        mode: BnMode,
        eps: f32,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", format!("input {shape:?}")));
        }
        let c = shape[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.channels() != c {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "{c} channels, gamma {:?}, beta {:?}, stats {}",
                    self.shape(gamma),
                    self.shape(beta),
                    stats.channels()
                ),
            ));
        }
        if mode == BnMode::Eval && !stats.initialized {
            return Err(Error::UninitializedStats);
        }
        let outer = shape[0];
        let inner: usize = shape[2..].iter().product();
        let count = outer * inner;
        let xv = self.value(x);

        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let plane = &xv[(o * c + ch) * inner..(o * c + ch + 1) * inner];
                        mean[ch] += plane.iter().map(|&v| v as f64).sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for o in 0..outer {
                    for ch in 0..c {
                        let plane = &xv[(o * c + ch) * inner..(o * c + ch + 1) * inner];
                        var[ch] += plane
                            .iter()
                            .map(|&v| (v as f64 - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var)
            }
            BnMode::Eval => (
                stats.mean.iter().map(|&v| v as f64).collect(),
                stats.var.iter().map(|&v| v as f64).collect(),
            ),
        };
        let inv_std: Vec<f32> = var
            .iter()
            .map(|&v| (1.0 / (v + eps as f64).sqrt()) as f32)
            .collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                let m = mean[ch] as f32;
                for i in base..base + inner {
                    let h = (xv[i] - m) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let moments = (mode == BnMode::Train).then(|| {
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            BatchMoments {
                mean: mean.iter().map(|&m| m as f32).collect(),
                var: var.iter().map(|&v| (v * unbias) as f32).collect(),
            }
        });
        let rg = [x, gamma, beta]
            .iter()
            .any(|&v| self.node(v).requires_grad);
        let y = self.push(
            "batch_norm",
            shape,
            out,
            Op::BatchNorm(BnSaved {
                x,
                gamma,
                beta,
                channels: c,
                outer,
                inner,
                xhat,
                inv_std,
                train: mode == BnMode::Train,
            }),
            rg,
        )?;
        Ok((y, moments))
    }

    /// [`Graph::batch_norm`] that updates `stats` in place in train mode.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_tracked(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: BnMode,
        momentum: f32,
        eps: f32,
    ) -> Result<Var> {
        let (y, moments) = self.batch_norm(x, gamma, beta, stats, mode, eps)?;
        if let Some(m) = moments {
            stats.absorb(&m, momentum);
        }
        Ok(y)
    }
}

pub(crate) fn backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    s: &BnSaved,
    g: &[f32],
) {
    let (c, outer, inner) = (s.channels, s.outer, s.inner);
    let count = (outer * inner) as f64;
    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            for i in base..base + inner {
                sum_g[ch] += g[i] as f64;
                sum_gx[ch] += (g[i] * s.xhat[i]) as f64;
            }
        }
    }
    let gamma = &nodes[s.gamma.0].data;
    if let Some(gx) = slot(nodes, grads, s.x) {
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                let scale = gamma[ch] * s.inv_std[ch];
                if s.train {
                    let mg = (sum_g[ch] / count) as f32;
                    let mgx = (sum_gx[ch] / count) as f32;
                    for i in base..base + inner {
                        gx[i] += scale * (g[i] - mg - s.xhat[i] * mgx);
                    }
                } else {
                    for i in base..base + inner {
                        gx[i] += scale * g[i];
                    }
                }
            }
        }
    }
    if let Some(gg) = slot(nodes, grads, s.gamma) {
        for ch in 0..c {
            gg[ch] += sum_gx[ch] as f32;
        }
    }
    if let Some(gb) = slot(nodes, grads, s.beta) {
        for ch in 0..c {
            gb[ch] += sum_g[ch] as f32;
        }
    }
}
