//! Modality-aware aggregation and activation energies.
//!
//! Per text row the aligned positions (visual first, then audio) are scored
//! by a squeeze-excite style pipeline; the softmax weights both pool the
//! positions and measure how much each modality contributed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::xavier;

/// Affine map from one stack's channels to the shared width `D_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut R) -> Self {
        Affine {
            w: store.add(format!("{name}.w"), xavier(rng, &[out, inp], inp, out)),
            b: store.add(format!("{name}.b"), Tensor::zeros([out])),
        }
    }

    pub fn lookup(store: &ParamStore, name: &str, inp: usize, out: usize) -> Result<Self> {
        let get = |s: &str| {
            store
                .id(&format!("{name}.{s}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}.{s}`")))
        };
        let (w, b) = (get("w")?, get("b")?);
        if store.get(w).shape() != [out, inp] || store.get(b).shape() != [out] {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, want [{out}, {inp}]",
                store.get(w).shape()
            )));
        }
        Ok(Affine { w, b })
    }

    /// Applies the map to the last axis of `x`.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (last, lead) = shape.split_last().expect("graph values have rank ≥ 1");
        let rows = lead.iter().product();
        let flat = g.reshape(x, &[rows, *last])?;
        let (w, b) = (g.param(store, self.w)?, g.param(store, self.b)?);
        let y = g.fully_connected(flat, w, Some(b))?;
        let mut out = lead.to_vec();
        out.push(g.shape(y)[1]);
        g.reshape(y, &out)
    }
}

/// Squeeze (`D_c → 1` per position) then excite (`T_c → ⌊T_c/2⌋ → T_c`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeParams {
    pub fc1: Affine,
    pub fc2: Affine,
    pub fc3: Affine,
    pub positions: usize,
    pub width: usize,
}

impl SeParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, positions: usize, width: usize, rng: &mut R) -> Self {
        let mid = (positions / 2).max(1);
        SeParams {
            fc1: Affine::init(store, &format!("{prefix}.fc1"), width, 1, rng),
            fc2: Affine::init(store, &format!("{prefix}.fc2"), positions, mid, rng),
            fc3: Affine::init(store, &format!("{prefix}.fc3"), mid, positions, rng),
            positions,
            width,
        }
    }

    pub fn lookup(store: &ParamStore, prefix: &str, positions: usize, width: usize) -> Result<Self> {
        let mid = (positions / 2).max(1);
        Ok(SeParams {
            fc1: Affine::lookup(store, &format!("{prefix}.fc1"), width, 1)?,
            fc2: Affine::lookup(store, &format!("{prefix}.fc2"), positions, mid)?,
            fc3: Affine::lookup(store, &format!("{prefix}.fc3"), mid, positions)?,
            positions,
            width,
        })
    }
}

/// Position weights `[N×T_c]` for `f: [N×T_c×D_c]`, each row a softmax.
pub fn se_weights(g: &mut Graph, store: &ParamStore, p: &SeParams, f: Var) -> Result<Var> {
    let s = g.shape(f).to_vec();
    if s.len() != 3 || s[1] != p.positions || s[2] != p.width {
        return Err(Error::shape(
            "se_weights",
            format!("features {s:?}, want [N, {}, {}]", p.positions, p.width),
        ));
    }
    let u = p.fc1.apply(g, store, f)?;
    let u = g.reshape(u, &[s[0], s[1]])?;
    let z = p.fc2.apply(g, store, u)?;
    let z = g.relu(z)?;
    let z = p.fc3.apply(g, store, z)?;
    g.softmax_lastdim(z)
}

/// Convex combination `x_n = Σ_j w_nj·f_nj`; `f: [N×T_c×D_c]`, `w: [N×T_c]`.
pub fn aggregate(g: &mut Graph, f: Var, w: Var) -> Result<Var> {
    let (sf, sw) = (g.shape(f).to_vec(), g.shape(w).to_vec());
    if sf.len() != 3 || sw != sf[..2] {
        return Err(Error::shape("aggregate", format!("features {sf:?}, weights {sw:?}")));
    }
    for row in g.value(w).chunks_exact(sf[1]) {
        let total: f64 = row.iter().map(|&v| v as f64).sum();
        if (total - 1.0).abs() > 1e-5 {
            return Err(Error::WeightSum(total as f32));
        }
    }
    let w3 = g.reshape(w, &[sf[0], 1, sf[1]])?;
    let x = g.bmm(w3, f)?;
    g.reshape(x, &[sf[0], sf[2]])
}

/// Maps each stack output `[B×T_s×T_m×D]` to `D_c` channels and joins them
/// along the position axis, visual first.
pub fn align_and_concat(
    g: &mut Graph,
    store: &ParamStore,
    visual: Option<(Var, &Affine)>,
    audio: Option<(Var, &Affine)>,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(2);
    let mut text_len = None;
    for (f, a) in visual.into_iter().chain(audio) {
        let s = g.shape(f).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("align_and_concat", format!("grid {s:?}")));
        }
        if *text_len.get_or_insert((s[0], s[1])) != (s[0], s[1]) {
            return Err(Error::shape("align_and_concat", "modalities disagree on text length"));
        }
        parts.push(a.apply(g, store, f)?);
    }
    if parts.is_empty() {
        return Err(Error::InvalidArgument("no modality to aggregate".into()));
    }
    g.concat(&parts, 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Visual,
    Audio,
    Tie,
}

/// `(e_v, e_a)`: squared weight mass on the first `t_v` positions and on the
/// rest. Computed in `f64` on the row rescaled to sum exactly 1, so `f32`
/// rounding in the weights does not leak past `1/T_c ≤ e_v + e_a ≤ 1`.
pub fn activation_energies(w: &[f32], t_v: usize) -> (f64, f64) {
    let split = t_v.min(w.len());
    let total: f64 = w.iter().map(|&v| v as f64).sum();
    let scale = if total > 0.0 { 1.0 / total } else { 1.0 };
    let sq = |s: &[f32]| s.iter().map(|&v| (v as f64 * scale).powi(2)).sum::<f64>();
    (sq(&w[..split]), sq(&w[split..]))
}

pub fn attribute(e_v: f64, e_a: f64) -> Decision {
    if e_v > e_a {
        Decision::Visual
    } else if e_a > e_v {
        Decision::Audio
    } else {
        Decision::Tie
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAttribution {
    pub index: usize,
    pub word: String,
    pub e_v: f64,
    pub e_a: f64,
    pub decision: Decision,
}

impl WordAttribution {
    pub fn new(index: usize, word: impl Into<String>, weights: &[f32], t_v: usize) -> Self {
        let (e_v, e_a) = activation_energies(weights, t_v);
        WordAttribution {
            index,
            word: word.into(),
            e_v,
            e_a,
            decision: attribute(e_v, e_a),
        }
    }
}
