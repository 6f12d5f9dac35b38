use std::collections::HashMap;

use super::kernels::{axpy, dot, mm_nn, mm_nt, mm_tn, split_axis, strides};
use super::optim::{ParamId, ParamStore};
use super::tensor::{check_shape, numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Sum(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    JointGrid {
        text: Var,
        modality: Var,
    },
    Conv2d(super::conv::ConvSaved),
    BatchNorm(super::norm::BnSaved),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f32>,
        probs: Vec<f32>,
    },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Tape of executed operations. Each forward pass records onto a fresh graph;
/// [`Graph::backward`] may run once per graph.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    params: HashMap<ParamId, Var>,
    backward_done: bool,
}

fn ensure_finite(op: &'static str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_parts(n.shape.clone(), n.data.clone())
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        debug_assert_eq!(numel(&shape), data.len());
        ensure_finite(name, &data)?;
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        self.backward_done = false;
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf; `requires_grad` follows the tensor's flag.
    pub fn input(&mut self, t: &Tensor) -> Result<Var> {
        self.push(
            "input",
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        self.push("constant", t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Result<Var> {
        check_shape("zeros", shape)?;
        self.push("zeros", shape.to_vec(), vec![0.0; numel(shape)], Op::Leaf, false)
    }

    /// Leaf for a stored parameter. Repeated calls within one graph return
    /// the same handle so gradients from every use accumulate together.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let t = store.get(id);
        let v = self.push(
            "param",
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )?;
        self.params.insert(id, v);
        Ok(v)
    }

    /// Adds this graph's parameter gradients into `store`. Parameters that
    /// were used but received no gradient get an explicit zero.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        let mut entries: Vec<_> = self.params.iter().collect();
        entries.sort_by_key(|(id, _)| id.0);
        for (&id, &v) in entries {
            let t = store.get_mut(id);
            if !t.requires_grad() {
                continue;
            }
            match self.grad(v) {
                Some(g) => t.accumulate_grad(g),
                None => t.accumulate_grad(&vec![0.0; t.numel()]),
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        let n = self.node(a);
        let data = n.data.iter().map(|&x| f(x)).collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        self.push(name, shape, data, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push("add", self.shape(a).to_vec(), data, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push("mul", self.shape(a).to_vec(), data, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f32::tanh, Op::Tanh(a))
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a);
        let cols = *n.shape.last().unwrap();
        let mut data = n.data.clone();
        for row in data.chunks_exact_mut(cols) {
            softmax_in_place(row);
        }
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push("softmax", shape, data, Op::Softmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).iter().map(|&x| x as f64).sum();
        let rg = self.requires(a);
        self.push("sum", vec![1], vec![s as f32], Op::Sum(a), rg)
    }

    /// `[M×K] · [K×N]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.requires(a) || self.requires(b);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), rg)
    }

    /// Batched `[B×M×K] · [B×K×N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..bs {
            mm_nn(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.requires(a) || self.requires(b);
        self.push("bmm", vec![bs, m, n], out, Op::BatchMatMul(a, b), rg)
    }

    /// Affine map `x·Wᵀ + b` with `x: [N×in]`, `W: [out×in]`, `b: [out]`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape("fully_connected", format!("x {sx:?}, W {sw:?}")));
        }
        let (rows, inp, out) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(Error::shape(
                    "fully_connected",
                    format!("bias {:?} for {out} outputs", self.shape(b)),
                ));
            }
        }
        let mut data = vec![0.0; rows * out];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in data.chunks_exact_mut(out) {
                row.copy_from_slice(bv);
            }
        }
        mm_nt(self.value(x), self.value(w), &mut data, rows, inp, out);
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push("fully_connected", vec![rows, out], data, Op::Linear { x, w, b }, rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v)[o * block..(o + 1) * block]);
            }
        }
        let rg = inputs.iter().any(|&v| self.requires(v));
        self.push(
            "concat",
            shape,
            data,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    pub fn concat_lastdim(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let axis = self.shape(*first).len() - 1;
        self.concat(inputs, axis)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, extent, inner) = split_axis(&s, axis);
        let xv = self.value(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.requires(x);
        self.push("narrow", shape, data, Op::Narrow { x, axis, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape("reshape", shape)?;
        if numel(shape) != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let data = self.value(x).to_vec();
        let rg = self.requires(x);
        self.push("reshape", shape.to_vec(), data, Op::Reshape(x), rg)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("perm {perm:?} for {s:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let data = permute_data(self.value(x), &s, perm);
        let rg = self.requires(x);
        self.push(
            "permute",
            out_shape,
            data,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        )
    }

    /// Row lookup: `table: [V×D]`, output `[ids.len()×D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || ids.is_empty() {
            return Err(Error::shape("embedding", format!("table {s:?}, {} ids", ids.len())));
        }
        let (vocab, dim) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside table of {vocab} rows"
            )));
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let rg = self.requires(table);
        self.push(
            "embedding",
            vec![ids.len(), dim],
            data,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Joint grid `out[b,i,j] = [text[b,i] ‖ modality[b,j]]` from
    /// `text: [B×T_s×D_s]` and `modality: [B×T_m×D_m]`.
    pub fn joint_grid(&mut self, text: Var, modality: Var) -> Result<Var> {
        let (st, sm) = (self.shape(text).to_vec(), self.shape(modality).to_vec());
        if st.len() != 3 || sm.len() != 3 || st[0] != sm[0] {
            return Err(Error::shape("joint_grid", format!("text {st:?}, modality {sm:?}")));
        }
        let (b, ts, ds, tm, dm) = (st[0], st[1], st[2], sm[1], sm[2]);
        let d = ds + dm;
        let (tv, mv) = (self.value(text), self.value(modality));
        let mut data = Vec::with_capacity(b * ts * tm * d);
        for bi in 0..b {
            for i in 0..ts {
                let e = &tv[(bi * ts + i) * ds..(bi * ts + i + 1) * ds];
                for j in 0..tm {
                    data.extend_from_slice(e);
                    data.extend_from_slice(&mv[(bi * tm + j) * dm..(bi * tm + j + 1) * dm]);
                }
            }
        }
        let rg = self.requires(text) || self.requires(modality);
        self.push(
            "joint_grid",
            vec![b, ts, tm, d],
            data,
            Op::JointGrid { text, modality },
            rg,
        )
    }

    /// Weighted mean of `-log softmax(logits)[target]` over rows with
    /// nonzero `weights`; `logits: [N×V]`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f32],
    ) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] || weights.len() != s[0] {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {s:?}, {} targets, {} weights", targets.len(), weights.len()),
            ));
        }
        let v = s[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::InvalidArgument(format!("target {t} outside {v} classes")));
        }
        let total: f64 = weights.iter().map(|&w| w as f64).sum();
        if total <= 0.0 {
            return Err(Error::EmptyMask);
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0f64;
        for (r, row) in probs.chunks_exact_mut(v).enumerate() {
            let lse = softmax_in_place(row);
            if weights[r] != 0.0 {
                let logit = self.nodes[logits.0].data[r * v + targets[r]];
                loss += weights[r] as f64 * (lse - logit as f64);
            }
        }
        let norm: Vec<f32> = weights.iter().map(|&w| (w as f64 / total) as f32).collect();
        let rg = self.requires(logits);
        self.push(
            "cross_entropy",
            vec![1],
            vec![(loss / total) as f32],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: norm,
                probs,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. Allowed once per forward.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.shape(loss) != [1] {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g);
            self.grads[idx] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn backward_node(&mut self, idx: usize, g: &[f32]) {
        // The op is moved out so it can be matched while the tape is shared
        // immutably; it is restored afterwards.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out = &nodes[idx].data;
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = slot(nodes, grads, v) {
                        axpy(1.0, g, ga);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if let Some(ga) = slot(nodes, grads, a) {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(&nodes[b.0].data) {
                        *x += gi * y;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for ((x, gi), y) in gb.iter_mut().zip(g).zip(&nodes[a.0].data) {
                        *x += gi * y;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(*s, g, ga);
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *x += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        *x += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        *x += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = *nodes[idx].shape.last().unwrap();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((gr, yr), xr) in g
                        .chunks_exact(cols)
                        .zip(out.chunks_exact(cols))
                        .zip(ga.chunks_exact_mut(cols))
                    {
                        let s = dot(gr, yr);
                        for ((x, gi), y) in xr.iter_mut().zip(gr).zip(yr) {
                            *x += y * (gi - s);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if let Some(ga) = slot(nodes, grads, a) {
                    mm_nt(g, &nodes[b.0].data, ga, m, n, k);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    mm_tn(&nodes[a.0].data, g, gb, m, k, n);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (a, b) = (*a, *b);
                let sa = &nodes[a.0].shape;
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], nodes[b.0].shape[2]);
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                if let Some(ga) = slot(nodes, grads, a) {
                    for i in 0..bs {
                        mm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &bv[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for i in 0..bs {
                        mm_tn(
                            &av[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let (rows, inp) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                let outs = nodes[w.0].shape[0];
                if let Some(gx) = slot(nodes, grads, x) {
                    mm_nn(g, &nodes[w.0].data, gx, rows, outs, inp);
                }
                if let Some(gw) = slot(nodes, grads, w) {
                    mm_tn(g, &nodes[x.0].data, gw, rows, outs, inp);
                }
                if let Some(gb) = b.and_then(|b| slot(nodes, grads, b)) {
                    for row in g.chunks_exact(outs) {
                        axpy(1.0, row, gb);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&nodes[idx].shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = nodes[v.0].shape[*axis];
                    if let Some(gv) = slot(nodes, grads, v) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            axpy(
                                1.0,
                                &g[src..src + len * inner],
                                &mut gv[o * len * inner..(o + 1) * len * inner],
                            );
                        }
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let len = nodes[idx].shape[*axis];
                let (outer, extent, inner) = split_axis(&nodes[x.0].shape, *axis);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        let dst = (o * extent + start) * inner;
                        axpy(
                            1.0,
                            &g[o * len * inner..(o + 1) * len * inner],
                            &mut gx[dst..dst + len * inner],
                        );
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(1.0, g, gx);
                }
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let back = permute_data(g, &nodes[idx].shape, &inverse);
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(1.0, &back, gx);
                }
            }
            Op::Embedding { table, ids } => {
                let dim = nodes[table.0].shape[1];
                if let Some(gt) = slot(nodes, grads, *table) {
                    for (r, &i) in ids.iter().enumerate() {
                        axpy(1.0, &g[r * dim..(r + 1) * dim], &mut gt[i * dim..(i + 1) * dim]);
                    }
                }
            }
            Op::JointGrid { text, modality } => {
                let (st, sm) = (&nodes[text.0].shape, &nodes[modality.0].shape);
                let (b, ts, ds, tm, dm) = (st[0], st[1], st[2], sm[1], sm[2]);
                let d = ds + dm;
                if let Some(ge) = slot(nodes, grads, *text) {
                    for r in 0..b * ts {
                        let dst = &mut ge[r * ds..(r + 1) * ds];
                        for j in 0..tm {
                            let cell = (r * tm + j) * d;
                            axpy(1.0, &g[cell..cell + ds], dst);
                        }
                    }
                }
                if let Some(gm) = slot(nodes, grads, *modality) {
                    for bi in 0..b {
                        for i in 0..ts {
                            for j in 0..tm {
                                let cell = ((bi * ts + i) * tm + j) * d;
                                axpy(
                                    1.0,
                                    &g[cell + ds..cell + d],
                                    &mut gm[(bi * tm + j) * dm..(bi * tm + j + 1) * dm],
                                );
                            }
                        }
                    }
                }
            }
            Op::Conv2d(saved) => super::conv::backward(nodes, grads, saved, g),
            Op::BatchNorm(saved) => super::norm::backward(nodes, grads, saved, g),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let v = nodes[logits.0].shape[1];
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let scale = g[0] * w;
                        let row = &mut gl[r * v..(r + 1) * v];
                        axpy(scale, &probs[r * v..(r + 1) * v], row);
                        row[t] -= scale;
                    }
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

/// Gradient buffer for `v`, allocated on first write; `None` when `v` does
/// not require a gradient.
pub(crate) fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f32>>],
    v: Var,
) -> Option<&'a mut [f32]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.data.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax; returns the log-sum-exp of the original row.
pub(crate) fn softmax_in_place(row: &mut [f32]) -> f64 {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0f64;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x as f64;
    }
    let inv = (1.0 / sum) as f32;
    row.iter_mut().for_each(|x| *x *= inv);
    max as f64 + sum.ln()
}

pub(crate) fn permute_data(data: &[f32], shape: &[usize], perm: &[usize]) -> Vec<f32> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut index = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for ax in (0..rank).rev() {
            index[ax] += 1;
            src += src_strides[ax];
            if index[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            index[ax] = 0;
        }
    }
    out
}
