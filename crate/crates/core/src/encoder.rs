//! Per-modality LSTM encoders.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::xavier;

/// Handles to one LSTM's weights; gates are stacked `[i, f, g, o]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Parameters copied into one graph.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmParams {
    /// Registers `{prefix}.w_ih`, `{prefix}.w_hh`, `{prefix}.bias`. Forget-gate
    /// bias starts at 1.
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = store.add(format!("{prefix}.w_ih"), xavier(rng, &[4 * hidden, input], input, 4 * hidden));
        let w_hh = store.add(format!("{prefix}.w_hh"), xavier(rng, &[4 * hidden, hidden], hidden, 4 * hidden));
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{prefix}.bias"), Tensor::new([4 * hidden], bias).expect("positive"));
        LstmParams {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        }
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |s: &str| {
            store
                .id(&format!("{prefix}.{s}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{prefix}.{s}`")))
        };
        let (w_ih, w_hh, bias) = (get("w_ih")?, get("w_hh")?, get("bias")?);
        let s = store.get(w_ih).shape();
        if s.len() != 2 || !s[0].is_multiple_of(4) {
            return Err(Error::Checkpoint(format!("`{prefix}.w_ih` has shape {s:?}")));
        }
        let (hidden, input) = (s[0] / 4, s[1]);
        if store.get(w_hh).shape() != [4 * hidden, hidden] || store.get(bias).shape() != [4 * hidden] {
            return Err(Error::Checkpoint(format!("`{prefix}` weights disagree on hidden size")));
        }
        Ok(LstmParams {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> Result<LstmVars> {
        Ok(LstmVars {
            w_ih: g.param(store, self.w_ih)?,
            w_hh: g.param(store, self.w_hh)?,
            bias: g.param(store, self.bias)?,
            hidden: self.hidden,
        })
    }
}

fn cell(g: &mut Graph, gates: Var, c: Var, hidden: usize) -> Result<(Var, Var)> {
    let chunk = |g: &mut Graph, k: usize| g.narrow(gates, 1, k * hidden, hidden);
    let (i, f, cand, o) = (chunk(g, 0)?, chunk(g, 1)?, chunk(g, 2)?, chunk(g, 3)?);
    let (i, f, cand, o) = (g.sigmoid(i)?, g.sigmoid(f)?, g.tanh(cand)?, g.sigmoid(o)?);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// One cell update on a batch: `x: [B×D_in]`, `h, c: [B×H]`.
pub fn lstm_step(g: &mut Graph, p: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let from_x = g.fully_connected(x, p.w_ih, Some(p.bias))?;
    let from_h = g.fully_connected(h, p.w_hh, None)?;
    let gates = g.add(from_x, from_h)?;
    cell(g, gates, c, p.hidden)
}

/// Unrolls from a zero state over `features: [B×T×D_in]`, returning all
/// hidden states `[B×T×H]`.
pub fn encode(g: &mut Graph, p: &LstmVars, features: Var) -> Result<Var> {
    let s = g.shape(features).to_vec();
    if s.len() != 3 {
        return Err(Error::shape("lstm_encode", format!("features {s:?}, want [B, T, D]")));
    }
    let (b, t, d) = (s[0], s[1], s[2]);
    let hsz = p.hidden;
    let flat = g.reshape(features, &[b * t, d])?;
    let projected = g.fully_connected(flat, p.w_ih, Some(p.bias))?;
    let projected = g.reshape(projected, &[b, t, 4 * hsz])?;
    let mut h = g.zeros(&[b, hsz])?;
    let mut c = g.zeros(&[b, hsz])?;
    let mut states = Vec::with_capacity(t);
    for step in 0..t {
        let xg = g.narrow(projected, 1, step, 1)?;
        let xg = g.reshape(xg, &[b, 4 * hsz])?;
        let hg = g.fully_connected(h, p.w_hh, None)?;
        let gates = g.add(xg, hg)?;
        (h, c) = cell(g, gates, c, hsz)?;
        states.push(g.reshape(h, &[b, 1, hsz])?);
    }
    g.concat(&states, 1)
}
