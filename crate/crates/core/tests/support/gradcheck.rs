//! Analytic gradients from the tape against central differences through the
//! `f64` oracles. Each check draws random values, builds the layer on a
//! graph, backpropagates `Σ r ⊙ output` (or the loss itself) and compares
//! distinct random coordinates across every differentiated tensor.

use mmcap::aggregation::{se_weights, Affine, SeParams};
use mmcap::autodiff::{BnMode, Graph, ParamId, ParamStore, RunningStats, Tensor, Var};
use mmcap::encoder::{lstm_step, LstmVars};
use mmcap::generator::{caption_loss, logits};
use mmcap::mmcnn::{causal_text_mask, residual_block, BlockParams};
use mmcap_testkit as tk;

pub const H: f64 = 1e-3;
/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub coords: usize,
    pub max_rel: f64,
}

struct Problem {
    rng: tk::SplitMix,
    store: ParamStore,
    tensors: Vec<(ParamId, Vec<usize>)>,
}

impl Problem {
    fn new(seed: u64) -> Self {
        Problem {
            rng: tk::SplitMix::new(seed),
            store: ParamStore::new(),
            tensors: Vec::new(),
        }
    }

    fn tensor(&mut self, name: &str, shape: &[usize], scale: f64) -> ParamId {
        let n = shape.iter().product();
        let values = tk::to_f32(&self.rng.vec(n, scale));
        let id = self.store.add(name, Tensor::new(shape.to_vec(), values).unwrap());
        self.tensors.push((id, shape.to_vec()));
        id
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|(id, _)| self.store.get(*id).data().iter().map(|&v| v as f64))
            .collect()
    }

    /// Random probe for `Σ r ⊙ y`.
    fn probe(&mut self, g: &mut Graph, y: Var) -> (Var, Vec<f64>) {
        let shape = g.shape(y).to_vec();
        let r = self.rng.vec(shape.iter().product(), 1.0);
        let rv = g.constant(&Tensor::new(shape, tk::to_f32(&r)).unwrap()).unwrap();
        let prod = g.mul(y, rv).unwrap();
        (g.sum(prod).unwrap(), r)
    }

    /// Backpropagates `loss`, then compares `coords` random coordinates of
    /// the concatenated tensors against `oracle(flat values)`.
    fn compare(
        mut self,
        name: &'static str,
        mut g: Graph,
        loss: Var,
        coords: usize,
        oracle: &mut dyn FnMut(&[f64], &[usize]) -> f64,
    ) -> Check {
        g.backward(loss).unwrap();
        let mut analytic = Vec::new();
        let mut shapes = Vec::new();
        for (id, shape) in &self.tensors {
            let v = g.param(&self.store, *id).unwrap();
            analytic.extend(g.grad(v).unwrap().iter().map(|&x| x as f64));
            shapes.push(shape.iter().product::<usize>());
        }
        let x = self.flat();
        assert_eq!(x.len(), analytic.len());
        let mut picked = Vec::new();
        while picked.len() < coords.min(x.len()) {
            let i = self.rng.below(x.len());
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        let mut f = |v: &[f64]| oracle(v, &shapes);
        let max_rel = picked
            .iter()
            .map(|&i| tk::rel_err(analytic[i], tk::central_diff(&mut f, &x, i, H), FLOOR))
            .fold(0.0, f64::max);
        Check {
            name,
            coords: picked.len(),
            max_rel,
        }
    }
}

fn split<'a>(v: &'a [f64], sizes: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &n in sizes {
        out.push(&v[at..at + n]);
        at += n;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn lstm(coords: usize) -> Check {
    let (b, d, hs) = (2, 3, 4);
    let mut p = Problem::new(101);
    let w_ih = p.tensor("w_ih", &[4 * hs, d], 0.6);
    let w_hh = p.tensor("w_hh", &[4 * hs, hs], 0.6);
    let bias = p.tensor("bias", &[4 * hs], 0.5);
    let x = p.tensor("x", &[b, d], 1.0);
    let h = p.tensor("h", &[b, hs], 0.8);
    let c = p.tensor("c", &[b, hs], 0.8);
    let mut g = Graph::new();
    let vars = LstmVars {
        w_ih: g.param(&p.store, w_ih).unwrap(),
        w_hh: g.param(&p.store, w_hh).unwrap(),
        bias: g.param(&p.store, bias).unwrap(),
        hidden: hs,
    };
    let (xv, hv, cv) = (
        g.param(&p.store, x).unwrap(),
        g.param(&p.store, h).unwrap(),
        g.param(&p.store, c).unwrap(),
    );
    let (h2, c2) = lstm_step(&mut g, &vars, xv, hv, cv).unwrap();
    let both = g.concat_lastdim(&[h2, c2]).unwrap();
    let (loss, r) = p.probe(&mut g, both);
    p.compare("LSTM step", g, loss, coords, &mut |v, sizes| {
        let t = split(v, sizes);
        let cell = tk::LstmRef {
            w_ih: t[0],
            w_hh: t[1],
            bias: t[2],
            input: d,
            hidden: hs,
        };
        let mut total = 0.0;
        for row in 0..b {
            let (h2, c2) = cell.step(&t[3][row * d..][..d], &t[4][row * hs..][..hs], &t[5][row * hs..][..hs]);
            let rr = &r[row * 2 * hs..][..2 * hs];
            total += dot(&h2, &rr[..hs]) + dot(&c2, &rr[hs..]);
        }
        total
    })
}

pub fn residual(coords: usize) -> Check {
    let (b, d, ts, tm) = (2, 4, 3, 3);
    let ch = [2 * d, d / 2, d];
    let ins = [d, 2 * d, d / 2];
    let ks = [1, 1, 3];
    let mut p = Problem::new(202);
    let mut conv = Vec::new();
    let mut gamma = Vec::new();
    let mut beta = Vec::new();
    for j in 0..3 {
        conv.push(p.tensor(&format!("conv{j}"), &[ch[j], ins[j], ks[j], ks[j]], 0.7));
        gamma.push(p.tensor(&format!("gamma{j}"), &[ch[j]], 1.0));
        beta.push(p.tensor(&format!("beta{j}"), &[ch[j]], 0.5));
    }
    let x = p.tensor("x", &[b, d, ts, tm], 1.0);
    let block = BlockParams {
        conv: [conv[0], conv[1], conv[2]],
        gamma: [gamma[0], gamma[1], gamma[2]],
        beta: [beta[0], beta[1], beta[2]],
    };
    let stats = ch.map(RunningStats::standard);
    let mask = causal_text_mask(3, 3).unwrap();
    let mut g = Graph::new();
    let xv = g.param(&p.store, x).unwrap();
    let y = residual_block(&mut g, &p.store, &block, &stats, &mask, xv, BnMode::Train, 1e-5, &mut Vec::new()).unwrap();
    let (loss, r) = p.probe(&mut g, y);
    p.compare("residual block", g, loss, coords, &mut |v, sizes| {
        let t = split(v, sizes);
        let block = tk::ResidualRef {
            d,
            k1: t[0],
            k2: t[3],
            k3: t[6],
            bn: [(t[1], t[2]), (t[4], t[5]), (t[7], t[8])],
        };
        dot(&block.forward(t[9], b, ts, tm), &r)
    })
}

pub fn masked_conv(coords: usize) -> Check {
    let (b, ci, co, h, w) = (2, 3, 2, 4, 5);
    let mut p = Problem::new(303);
    let k = p.tensor("k", &[co, ci, 3, 3], 0.8);
    let x = p.tensor("x", &[b, ci, h, w], 1.0);
    let mask = causal_text_mask(3, 3).unwrap();
    let mut g = Graph::new();
    let (kv, xv) = (g.param(&p.store, k).unwrap(), g.param(&p.store, x).unwrap());
    let y = g.conv2d(xv, kv, (1, 1), Some(&mask)).unwrap();
    let (loss, r) = p.probe(&mut g, y);
    let m: Vec<f64> = mask.data().iter().map(|&v| v as f64).collect();
    p.compare("masked conv", g, loss, coords, &mut |v, sizes| {
        let t = split(v, sizes);
        dot(&tk::conv2d(t[1], t[0], Some(&m), b, ci, co, h, w, 3, 3), &r)
    })
}

pub fn se(coords: usize) -> Check {
    let (rows, t, d) = (3, 6, 4);
    let half = t / 2;
    let mut p = Problem::new(404);
    let w1 = p.tensor("fc1.w", &[1, d], 0.8);
    let b1 = p.tensor("fc1.b", &[1], 0.3);
    let w2 = p.tensor("fc2.w", &[half, t], 0.8);
    let b2 = p.tensor("fc2.b", &[half], 0.5);
    let w3 = p.tensor("fc3.w", &[t, half], 0.8);
    let b3 = p.tensor("fc3.b", &[t], 0.3);
    let f = p.tensor("f", &[rows, t, d], 1.0);
    let params = SeParams {
        fc1: Affine { w: w1, b: b1 },
        fc2: Affine { w: w2, b: b2 },
        fc3: Affine { w: w3, b: b3 },
        positions: t,
        width: d,
    };
    let mut g = Graph::new();
    let fv = g.param(&p.store, f).unwrap();
    let w = se_weights(&mut g, &p.store, &params, fv).unwrap();
    let (loss, r) = p.probe(&mut g, w);
    p.compare("SE block", g, loss, coords, &mut |v, sizes| {
        let s = split(v, sizes);
        let se = tk::SeRef {
            t,
            d,
            w1: s[0],
            b1: s[1],
            w2: s[2],
            b2: s[3],
            w3: s[4],
            b3: s[5],
        };
        dot(&se.weights(s[6], rows), &r)
    })
}

pub fn projection(coords: usize) -> Check {
    let (n, d, v) = (5, 4, 7);
    let targets = [1, 4, 6, 0, 4];
    let mask = [1.0, 1.0, 0.0, 1.0, 1.0];
    let mut p = Problem::new(505);
    let w = p.tensor("w", &[v, d], 0.8);
    let bias = p.tensor("b", &[v], 0.4);
    let x = p.tensor("x", &[n, d], 1.0);
    let mut g = Graph::new();
    let (wv, bv, xv) = (
        g.param(&p.store, w).unwrap(),
        g.param(&p.store, bias).unwrap(),
        g.param(&p.store, x).unwrap(),
    );
    let z = logits(&mut g, xv, wv, bv).unwrap();
    let loss = caption_loss(&mut g, z, &targets, &mask.map(|m| m as f32)).unwrap();
    p.compare("projection + loss", g, loss, coords, &mut |vals, sizes| {
        let t = split(vals, sizes);
        tk::projection_loss(t[2], t[0], t[1], n, d, v, &targets, &mask)
    })
}
