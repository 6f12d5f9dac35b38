//! Straight-line `f64` reference implementations used as test oracles.
//!
//! Nothing here shares code with `mmcap-core`: every layer is re-derived
//! from its definition with naive loops so finite differences taken through
//! these functions are an independent check on the analytic gradients.

pub mod metrics;

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Small deterministic generator (SplitMix64) so oracles need no deps.
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[lo, hi)`, rounded to an `f32`-representable value.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        (lo + (hi - lo) * u) as f32 as f64
    }

    pub fn vec(&mut self, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(-scale, scale)).collect()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

pub fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x[n×in] · w[out×in]ᵀ + b`
pub fn linear(x: &[f64], w: &[f64], b: Option<&[f64]>, n: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * out];
    for r in 0..n {
        for o in 0..out {
            let mut s = b.map_or(0.0, |b| b[o]);
            for i in 0..inp {
                s += x[r * inp + i] * w[o * inp + i];
            }
            y[r * out + o] = s;
        }
    }
    y
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// LSTM cell with gate rows ordered `[i, f, g, o]`.
pub struct LstmRef<'a> {
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub bias: &'a [f64],
    pub input: usize,
    pub hidden: usize,
}

impl LstmRef<'_> {
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hs = self.hidden;
        let mut gates = vec![0.0; 4 * hs];
        for r in 0..4 * hs {
            let mut s = self.bias[r];
            for i in 0..self.input {
                s += self.w_ih[r * self.input + i] * x[i];
            }
            for j in 0..hs {
                s += self.w_hh[r * hs + j] * h[j];
            }
            gates[r] = s;
        }
        let mut h2 = vec![0.0; hs];
        let mut c2 = vec![0.0; hs];
        for j in 0..hs {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[hs + j]);
            let g = gates[2 * hs + j].tanh();
            let o = sigmoid(gates[3 * hs + j]);
            c2[j] = f * c[j] + i * g;
            h2[j] = o * c2[j].tanh();
        }
        (h2, c2)
    }
}

/// Zero-padded cross-correlation, `x: [B×Ci×H×W]`, `k: [Co×Ci×kh×kw]`,
/// `mask: [kh×kw]` applied to taps. Output keeps `H×W` for odd kernels with
/// padding `kh/2, kw/2`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    k: &[f64],
    mask: Option<&[f64]>,
    b: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (ph, pw) = (kh as isize / 2, kw as isize / 2);
    let mut y = vec![0.0; b * co * h * w];
    for bi in 0..b {
        for o in 0..co {
            for oy in 0..h {
                for ox in 0..w {
                    let mut s = 0.0;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let m = mask.map_or(1.0, |m| m[ky * kw + kx]);
                                let iy = oy as isize + ky as isize - ph;
                                let ix = ox as isize + kx as isize - pw;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += m
                                    * k[((o * ci + c) * kh + ky) * kw + kx]
                                    * x[((bi * ci + c) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    y[((bi * co + o) * h + oy) * w + ox] = s;
                }
            }
        }
    }
    y
}

/// Train-mode batch norm over `[B×C×S]` with biased variance.
pub fn batch_norm(x: &[f64], gamma: &[f64], beta: &[f64], b: usize, c: usize, s: usize, eps: f64) -> Vec<f64> {
    let n = (b * s) as f64;
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let idx = |bi: usize, i: usize| (bi * c + ch) * s + i;
        let mut mean = 0.0;
        for bi in 0..b {
            for i in 0..s {
                mean += x[idx(bi, i)];
            }
        }
        mean /= n;
        let mut var = 0.0;
        for bi in 0..b {
            for i in 0..s {
                var += (x[idx(bi, i)] - mean).powi(2);
            }
        }
        var /= n;
        for bi in 0..b {
            for i in 0..s {
                y[idx(bi, i)] = gamma[ch] * (x[idx(bi, i)] - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Bottleneck residual block on `[B×D×H×W]`: 1×1 (D→2D), 1×1 (2D→D/2),
/// masked 3×3 (D/2→D), each followed by train-mode batch norm, ReLU after
/// the first two, then the identity shortcut.
pub struct ResidualRef<'a> {
    pub d: usize,
    pub k1: &'a [f64],
    pub k2: &'a [f64],
    pub k3: &'a [f64],
    /// `(gamma, beta)` for each of the three norms.
    pub bn: [(&'a [f64], &'a [f64]); 3],
}

impl ResidualRef<'_> {
    pub fn forward(&self, x: &[f64], b: usize, h: usize, w: usize) -> Vec<f64> {
        let d = self.d;
        let (d2, dh) = (2 * d, d / 2);
        let s = h * w;
        let mask = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let a = conv2d(x, self.k1, None, b, d, d2, h, w, 1, 1);
        let a = relu(&batch_norm(&a, self.bn[0].0, self.bn[0].1, b, d2, s, 1e-5));
        let a = conv2d(&a, self.k2, None, b, d2, dh, h, w, 1, 1);
        let a = relu(&batch_norm(&a, self.bn[1].0, self.bn[1].1, b, dh, s, 1e-5));
        let a = conv2d(&a, self.k3, Some(&mask), b, dh, d, h, w, 3, 3);
        let a = batch_norm(&a, self.bn[2].0, self.bn[2].1, b, d, s, 1e-5);
        x.iter().zip(&a).map(|(p, q)| p + q).collect()
    }
}

/// Squeeze-and-excitation weights per row of `f: [R×T×D]`.
pub struct SeRef<'a> {
    pub t: usize,
    pub d: usize,
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub w3: &'a [f64],
    pub b3: &'a [f64],
}

impl SeRef<'_> {
    pub fn weights(&self, f: &[f64], rows: usize) -> Vec<f64> {
        let (t, d, half) = (self.t, self.d, self.t / 2);
        let mut out = Vec::with_capacity(rows * t);
        for r in 0..rows {
            let s = linear(&f[r * t * d..(r + 1) * t * d], self.w1, Some(self.b1), t, d, 1);
            let z = relu(&linear(&s, self.w2, Some(self.b2), 1, t, half));
            let u = linear(&z, self.w3, Some(self.b3), 1, half, t);
            out.extend(softmax(&u));
        }
        out
    }
}

/// Weighted mean negative log-likelihood of `targets` under row softmax of
/// `x·Wᵀ + b`.
pub fn projection_loss(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    d: usize,
    v: usize,
    targets: &[usize],
    mask: &[f64],
) -> f64 {
    let logits = linear(x, w, Some(b), n, d, v);
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..n {
        if mask[r] == 0.0 {
            continue;
        }
        let p = softmax(&logits[r * v..(r + 1) * v]);
        total -= mask[r] * p[targets[r]].ln();
        count += mask[r];
    }
    total / count
}
