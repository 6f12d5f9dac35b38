//! 2D cross-correlation with optional multiplicative tap mask.

use super::graph::{slot, Graph, Node, Op, Var};
use super::kernels::{axpy, dot, mm_nn, mm_nt, mm_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug)]
pub(crate) struct ConvSaved {
    input: Var,
    kernel: Var,
    geom: Geometry,
    /// Effective tap multipliers, `kh·kw`; all ones when unmasked.
    mask: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn pointwise(&self, mask: &[f32]) -> bool {
        self.kh == 1 && self.kw == 1 && self.ph == 0 && self.pw == 0 && mask[0] == 1.0
    }

    /// Valid output rows/cols for tap `(ky, kx)`, with the matching input offset.
    fn tap_ranges(&self, ky: usize, kx: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let rows = self.ph.saturating_sub(ky)..(self.h + self.ph).saturating_sub(ky).min(self.ho);
        let cols = self.pw.saturating_sub(kx)..(self.w + self.pw).saturating_sub(kx).min(self.wo);
        (rows, cols)
    }
}

impl Graph {
    /// Cross-correlation of `input` (`[C_in×H×W]` or `[B×C_in×H×W]`) with
    /// `kernel` (`[C_out×C_in×kH×kW]`) under zero padding. Masked taps
    /// contribute nothing and receive zero gradient.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        padding: (usize, usize),
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (batch, chw) = match si.len() {
            3 => (1, &si[..]),
            4 => (si[0], &si[1..]),
            _ => return Err(Error::shape("conv2d", format!("input {si:?}"))),
        };
        if sk.len() != 4 || sk[1] != chw[0] {
            return Err(Error::shape("conv2d", format!("input {si:?}, kernel {sk:?}")));
        }
        let (c_in, h, w) = (chw[0], chw[1], chw[2]);
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        let (ph, pw) = padding;
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * ph, w + 2 * pw),
            ));
        }
        let mask = match mask {
            Some(m) if m.shape() != [kh, kw] => {
                return Err(Error::shape(
                    "conv2d",
                    format!("mask {:?} for kernel {kh}x{kw}", m.shape()),
                ))
            }
            Some(m) => m.data().to_vec(),
            None => vec![1.0; kh * kw],
        };
        let geom = Geometry {
            batch,
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            ph,
            pw,
            ho: h + 2 * ph - kh + 1,
            wo: w + 2 * pw - kw + 1,
        };
        let out = forward(self.value(input), self.value(kernel), &geom, &mask);
        let mut shape = vec![c_out, geom.ho, geom.wo];
        if si.len() == 4 {
            shape.insert(0, batch);
        }
        let rg = self.node(input).requires_grad || self.node(kernel).requires_grad;
        self.push(
            "conv2d",
            shape,
            out,
            Op::Conv2d(ConvSaved {
                input,
                kernel,
                geom,
                mask,
            }),
            rg,
        )
    }
}

fn forward(x: &[f32], k: &[f32], g: &Geometry, mask: &[f32]) -> Vec<f32> {
    let (in_plane, out_plane) = (g.h * g.w, g.ho * g.wo);
    let mut out = vec![0.0; g.batch * g.c_out * out_plane];
    if g.pointwise(mask) {
        for b in 0..g.batch {
            mm_nn(
                k,
                &x[b * g.c_in * in_plane..(b + 1) * g.c_in * in_plane],
                &mut out[b * g.c_out * out_plane..(b + 1) * g.c_out * out_plane],
                g.c_out,
                g.c_in,
                in_plane,
            );
        }
        return out;
    }
    let taps = g.kh * g.kw;
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let o = &mut out[(b * g.c_out + co) * out_plane..(b * g.c_out + co + 1) * out_plane];
            for ci in 0..g.c_in {
                let xin = &x[(b * g.c_in + ci) * in_plane..(b * g.c_in + ci + 1) * in_plane];
                let kern = &k[(co * g.c_in + ci) * taps..(co * g.c_in + ci + 1) * taps];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let m = mask[ky * g.kw + kx];
                        if m == 0.0 {
                            continue;
                        }
                        let wt = kern[ky * g.kw + kx] * m;
                        let (rows, cols) = g.tap_ranges(ky, kx);
                        if cols.is_empty() {
                            continue;
                        }
                        for oy in rows {
                            let iy = oy + ky - g.ph;
                            let ix0 = cols.start + kx - g.pw;
                            let n = cols.len();
                            axpy(
                                wt,
                                &xin[iy * g.w + ix0..iy * g.w + ix0 + n],
                                &mut o[oy * g.wo + cols.start..oy * g.wo + cols.start + n],
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    saved: &ConvSaved,
    gout: &[f32],
) {
    let g = &saved.geom;
    let mask = &saved.mask;
    let x = &nodes[saved.input.0].data;
    let k = &nodes[saved.kernel.0].data;
    let (in_plane, out_plane) = (g.h * g.w, g.ho * g.wo);
    let taps = g.kh * g.kw;
    let pointwise = g.pointwise(mask);

    if let Some(gx) = slot(nodes, grads, saved.input) {
        for b in 0..g.batch {
            let gx_b = &mut gx[b * g.c_in * in_plane..(b + 1) * g.c_in * in_plane];
            let go_b = &gout[b * g.c_out * out_plane..(b + 1) * g.c_out * out_plane];
            if pointwise {
                mm_tn(k, go_b, gx_b, g.c_out, g.c_in, in_plane);
                continue;
            }
            for co in 0..g.c_out {
                let go = &go_b[co * out_plane..(co + 1) * out_plane];
                for ci in 0..g.c_in {
                    let gxi = &mut gx_b[ci * in_plane..(ci + 1) * in_plane];
                    let kern = &k[(co * g.c_in + ci) * taps..(co * g.c_in + ci + 1) * taps];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let m = mask[ky * g.kw + kx];
                            if m == 0.0 {
                                continue;
                            }
                            let wt = kern[ky * g.kw + kx] * m;
                            let (rows, cols) = g.tap_ranges(ky, kx);
                            let n = cols.len();
                            if n == 0 {
                                continue;
                            }
                            for oy in rows {
                                let iy = oy + ky - g.ph;
                                let ix0 = cols.start + kx - g.pw;
                                axpy(
                                    wt,
                                    &go[oy * g.wo + cols.start..oy * g.wo + cols.start + n],
                                    &mut gxi[iy * g.w + ix0..iy * g.w + ix0 + n],
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    if let Some(gk) = slot(nodes, grads, saved.kernel) {
        for b in 0..g.batch {
            let x_b = &x[b * g.c_in * in_plane..(b + 1) * g.c_in * in_plane];
            let go_b = &gout[b * g.c_out * out_plane..(b + 1) * g.c_out * out_plane];
            if pointwise {
                mm_nt(go_b, x_b, gk, g.c_out, in_plane, g.c_in);
                continue;
            }
            for co in 0..g.c_out {
                let go = &go_b[co * out_plane..(co + 1) * out_plane];
                for ci in 0..g.c_in {
                    let xin = &x_b[ci * in_plane..(ci + 1) * in_plane];
                    let gkern =
                        &mut gk[(co * g.c_in + ci) * taps..(co * g.c_in + ci + 1) * taps];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let m = mask[ky * g.kw + kx];
                            if m == 0.0 {
                                continue;
                            }
                            let (rows, cols) = g.tap_ranges(ky, kx);
                            let n = cols.len();
                            if n == 0 {
                                continue;
                            }
                            let mut acc = 0.0;
                            for oy in rows {
                                let iy = oy + ky - g.ph;
                                let ix0 = cols.start + kx - g.pw;
                                acc += dot(
                                    &go[oy * g.wo + cols.start..oy * g.wo + cols.start + n],
                                    &xin[iy * g.w + ix0..iy * g.w + ix0 + n],
                                );
                            }
                            gkern[ky * g.kw + kx] += m * acc;
                        }
                    }
                }
            }
        }
    }
}
