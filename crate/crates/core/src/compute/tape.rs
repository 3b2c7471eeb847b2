//! Reverse-mode differentiation over small dense vectors.
//!
//! A [`Tape`] records one forward evaluation as a flat list of nodes whose
//! values live in a single arena. Parameters are never copied onto the tape
//! unless an op needs them as an operand; ops such as [`Tape::affine`] read
//! weight matrices straight out of the borrowed [`ParamStore`] and write their
//! gradients into a [`Grads`] buffer during [`Tape::backward`].
//!
//! Besides the elementwise primitives there are two fused ops, a GRU step and
//! an explicit-Euler ODE solve through a tanh MLP. Both store the activations
//! they need in an auxiliary arena so the backward pass is a straight replay.

use super::rng::RngStream;
use super::value::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Parameter handles of a GRU cell. `w` is `3h x in`, `u` is `3h x h`, `b`
/// has `3h` entries; gate blocks are ordered update, reset, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

/// Parameter handles of a vector field `d -> d -> d -> d -> d` with tanh on
/// the three hidden layers and a linear output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OdeFieldParams {
    pub w: [ParamId; 4],
    pub b: [ParamId; 4],
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    ParamRow(ParamId, usize),
    Affine {
        w: ParamId,
        x: Var,
        b: Option<ParamId>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Softmax(Var),
    Concat {
        start: usize,
        count: usize,
    },
    Slice(Var, usize),
    Gather {
        src: Var,
        start: usize,
    },
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    WeightedSum {
        alpha: Var,
        start: usize,
        count: usize,
    },
    Gru {
        cell: GruParams,
        h: Var,
        x: Var,
        aux: usize,
    },
    Ode {
        field: OdeFieldParams,
        y0: Var,
        step: f64,
        n_steps: usize,
        aux: usize,
    },
    Bce {
        p: Var,
        label: f64,
        w_pos: f64,
    },
    SoftmaxXent {
        logits: Var,
        target: usize,
        aux: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    off: usize,
    len: usize,
    op: Op,
}

/// Reusable allocations of a tape, see [`Tape::into_buffers`].
#[derive(Debug, Default)]
pub struct TapeBuffers {
    vals: Vec<f64>,
    grads: Vec<f64>,
    aux: Vec<f64>,
    links: Vec<Var>,
    indices: Vec<usize>,
    nodes: Vec<Node>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    vals: Vec<f64>,
    grads: Vec<f64>,
    aux: Vec<f64>,
    links: Vec<Var>,
    indices: Vec<usize>,
    nodes: Vec<Node>,
}

pub(crate) const PROB_CLAMP: f64 = 1e-7;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `out = W x (+ b)` for a row-major `rows x cols` matrix.
fn matvec(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `dx += W^T g` and `dW += g x^T`.
fn matvec_backward(w: &[f64], cols: usize, x: &[f64], g: &[f64], dx: Option<&mut [f64]>, dw: &mut [f64]) {
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for (d, xi) in drow.iter_mut().zip(x) {
            *d += gr * xi;
        }
    }
    if let Some(dx) = dx {
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += gr * wi;
            }
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self::with_buffers(params, TapeBuffers::default())
    }

    pub fn with_buffers(params: &'p ParamStore, mut buf: TapeBuffers) -> Self {
        buf.vals.clear();
        buf.grads.clear();
        buf.aux.clear();
        buf.links.clear();
        buf.indices.clear();
        buf.nodes.clear();
        Self {
            params,
            vals: buf.vals,
            grads: buf.grads,
            aux: buf.aux,
            links: buf.links,
            indices: buf.indices,
            nodes: buf.nodes,
        }
    }

    pub fn into_buffers(self) -> TapeBuffers {
        TapeBuffers {
            vals: self.vals,
            grads: self.grads,
            aux: self.aux,
            links: self.links,
            indices: self.indices,
            nodes: self.nodes,
        }
    }

    /// Drops every node while keeping allocations.
    pub fn reset(&mut self) {
        self.vals.clear();
        self.grads.clear();
        self.aux.clear();
        self.links.clear();
        self.indices.clear();
        self.nodes.clear();
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.idx()];
        &self.vals[n.off..n.off + n.len]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.idx()].len
    }

    fn push(&mut self, len: usize, op: Op) -> (Var, usize) {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        self.nodes.push(Node { off, len, op });
        (Var((self.nodes.len() - 1) as u32), off)
    }

    fn span(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.idx()];
        (n.off, n.len)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (ao, al) = self.span(a);
        let (v, off) = self.push(al, op);
        for i in 0..al {
            self.vals[off + i] = f(self.vals[ao + i]);
        }
        v
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "elementwise operands differ in length");
        let (v, off) = self.push(al, op);
        for i in 0..al {
            self.vals[off + i] = f(self.vals[ao + i], self.vals[bo + i]);
        }
        v
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, data: &[f64]) -> Var {
        let (v, off) = self.push(data.len(), Op::Leaf);
        self.vals[off..off + data.len()].copy_from_slice(data);
        v
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(&[x])
    }

    /// Whole parameter, flattened.
    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.params.get(id);
        let (v, off) = self.push(p.len(), Op::Param(id));
        self.vals[off..off + p.len()].copy_from_slice(&p.data);
        v
    }

    /// One row of a matrix parameter (embedding lookup).
    pub fn param_row(&mut self, id: ParamId, row: usize) -> Var {
        let p = self.params.get(id);
        let src = p.row(row);
        let (v, off) = self.push(src.len(), Op::ParamRow(id, row));
        self.vals[off..off + src.len()].copy_from_slice(src);
        v
    }

    /// `W x + b` with `W` a `rows x cols` parameter.
    pub fn affine(&mut self, w: ParamId, x: Var, b: Option<ParamId>) -> Var {
        let wv = self.params.get(w);
        let (rows, cols) = (wv.rows(), wv.cols());
        let (xo, xl) = self.span(x);
        assert_eq!(
            xl,
            cols,
            "affine: input length {xl} != {cols} columns of {}",
            self.params.name(w)
        );
        let (v, off) = self.push(rows, Op::Affine { w, x, b });
        let (lo, hi) = self.vals.split_at_mut(off);
        matvec(&wv.data, cols, &lo[xo..xo + xl], &mut hi[..rows]);
        if let Some(b) = b {
            for (o, bi) in hi[..rows].iter_mut().zip(&self.params.get(b).data) {
                *o += bi;
            }
        }
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let (ao, al) = self.span(a);
        let (v, off) = self.push(al, Op::Softmax(a));
        let max = self.vals[ao..ao + al].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..al {
            let e = (self.vals[ao + i] - max).exp();
            self.vals[off + i] = e;
            total += e;
        }
        for i in 0..al {
            self.vals[off + i] /= total;
        }
        v
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let len: usize = parts.iter().map(|p| self.len_of(*p)).sum();
        let start = self.links.len();
        self.links.extend_from_slice(parts);
        let (v, off) = self.push(
            len,
            Op::Concat {
                start,
                count: parts.len(),
            },
        );
        let mut pos = off;
        for p in parts {
            let (po, pl) = self.span(*p);
            self.vals.copy_within(po..po + pl, pos);
            pos += pl;
        }
        v
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (ao, al) = self.span(a);
        assert!(start + len <= al, "slice out of range");
        let (v, off) = self.push(len, Op::Slice(a, start));
        self.vals.copy_within(ao + start..ao + start + len, off);
        v
    }

    /// Picks `src[indices[k]]` for each k.
    pub fn gather(&mut self, src: Var, indices: &[usize]) -> Var {
        let (so, sl) = self.span(src);
        let start = self.indices.len();
        self.indices.extend_from_slice(indices);
        let (v, off) = self.push(indices.len(), Op::Gather { src, start });
        for (k, &i) in indices.iter().enumerate() {
            assert!(i < sl, "gather index out of range");
            self.vals[off + k] = self.vals[so + i];
        }
        v
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "dot operands differ in length");
        let s: f64 = (0..al).map(|i| self.vals[ao + i] * self.vals[bo + i]).sum();
        let (v, off) = self.push(1, Op::Dot(a, b));
        self.vals[off] = s;
        v
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        let (v, off) = self.push(1, Op::Sum(a));
        self.vals[off] = s;
        v
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.len_of(a);
        assert!(n > 0, "mean of empty vector");
        let s: f64 = self.value(a).iter().sum::<f64>() / n as f64;
        let (v, off) = self.push(1, Op::Mean(a));
        self.vals[off] = s;
        v
    }

    /// `sum_i alpha[i] * values[i]`.
    pub fn weighted_sum(&mut self, alpha: Var, values: &[Var]) -> Var {
        assert_eq!(self.len_of(alpha), values.len(), "one weight per value");
        assert!(!values.is_empty(), "weighted_sum of empty sequence");
        let d = self.len_of(values[0]);
        let start = self.links.len();
        self.links.extend_from_slice(values);
        let (v, off) = self.push(
            d,
            Op::WeightedSum {
                alpha,
                start,
                count: values.len(),
            },
        );
        let ao = self.nodes[alpha.idx()].off;
        for (k, val) in values.iter().enumerate() {
            let (vo, vl) = self.span(*val);
            assert_eq!(vl, d, "weighted_sum values differ in length");
            let a = self.vals[ao + k];
            for i in 0..d {
                self.vals[off + i] += a * self.vals[vo + i];
            }
        }
        v
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut RngStream) -> Var {
        if p <= 0.0 {
            return x;
        }
        let n = self.len_of(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect();
        let m = self.constant(&mask);
        self.mul(x, m)
    }

    /// Fused GRU update `h' = (1-z)*n + z*h`.
    pub fn gru_step(&mut self, cell: GruParams, h: Var, x: Var) -> Var {
        let w = self.params.get(cell.w);
        let u = self.params.get(cell.u);
        let b = &self.params.get(cell.b).data;
        let d = u.cols();
        let m = w.cols();
        let (ho, hl) = self.span(h);
        let (xo, xl) = self.span(x);
        assert_eq!(hl, d, "gru_step: hidden length");
        assert_eq!(xl, m, "gru_step: input length");
        assert_eq!(w.rows(), 3 * d, "gru_step: W rows");

        let aux = self.aux.len();
        self.aux.resize(aux + 4 * d, 0.0);
        let (v, off) = self.push(d, Op::Gru { cell, h, x, aux });

        let mut wx = vec![0.0; 3 * d];
        let mut uh = vec![0.0; 2 * d];
        matvec(&w.data, m, &self.vals[xo..xo + m], &mut wx);
        matvec(&u.data[..2 * d * d], d, &self.vals[ho..ho + d], &mut uh);
        let (zs, rest) = self.aux[aux..aux + 4 * d].split_at_mut(d);
        let (rs, rest) = rest.split_at_mut(d);
        let (ns, rh) = rest.split_at_mut(d);
        for i in 0..d {
            zs[i] = sigmoid(wx[i] + uh[i] + b[i]);
            rs[i] = sigmoid(wx[d + i] + uh[d + i] + b[d + i]);
            rh[i] = rs[i] * self.vals[ho + i];
        }
        let mut un = vec![0.0; d];
        matvec(&u.data[2 * d * d..], d, rh, &mut un);
        for i in 0..d {
            ns[i] = (wx[2 * d + i] + un[i] + b[2 * d + i]).tanh();
            let hv = self.vals[ho + i];
            self.vals[off + i] = (1.0 - zs[i]) * ns[i] + zs[i] * hv;
        }
        v
    }

    /// Explicit Euler solve of `dy/dt = f(y)` over `n_steps` steps of size `step`.
    pub fn ode_evolve(&mut self, field: OdeFieldParams, y0: Var, step: f64, n_steps: usize) -> Result<Var> {
        let d = self.len_of(y0);
        let per_step = 4 * d;
        let aux = self.aux.len();
        self.aux.resize(aux + per_step * n_steps, 0.0);
        let (v, off) = self.push(
            d,
            Op::Ode {
                field,
                y0,
                step,
                n_steps,
                aux,
            },
        );
        let y0o = self.nodes[y0.idx()].off;
        self.vals.copy_within(y0o..y0o + d, off);
        let ps = self.params;
        let mut y = self.vals[off..off + d].to_vec();
        let mut f = vec![0.0; d];
        for k in 0..n_steps {
            let base = aux + k * per_step;
            self.aux[base..base + d].copy_from_slice(&y);
            let (lo, hi) = self.aux.split_at_mut(base + d);
            let acts = &mut hi[..3 * d];
            field_forward(ps, &field, &lo[base..base + d], acts, &mut f);
            for i in 0..d {
                y[i] += step * f[i];
            }
            if !y.iter().all(|x| x.is_finite()) {
                return Err(Error::OdeDiverged { step: k });
            }
        }
        self.vals[off..off + d].copy_from_slice(&y);
        Ok(v)
    }

    /// `-(w_pos * y * ln p + (1 - y) * ln(1 - p))` with `p` clamped away from 0 and 1.
    pub fn bce(&mut self, p: Var, label: f64, w_pos: f64) -> Var {
        let pv = self.scalar_value(p);
        let loss = super::loss::weighted_bce(pv, label, w_pos);
        let (v, off) = self.push(1, Op::Bce { p, label, w_pos });
        self.vals[off] = loss;
        v
    }

    /// `-ln softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let (lo, ll) = self.span(logits);
        assert!(target < ll, "target out of range");
        let aux = self.aux.len();
        self.aux.resize(aux + ll, 0.0);
        let max = self.vals[lo..lo + ll].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..ll {
            let e = (self.vals[lo + i] - max).exp();
            self.aux[aux + i] = e;
            total += e;
        }
        for i in 0..ll {
            self.aux[aux + i] /= total;
        }
        let loss = -(self.vals[lo + target] - max - total.ln());
        let (v, off) = self.push(1, Op::SoftmaxXent { logits, target, aux });
        self.vals[off] = loss;
        v
    }

    /// Accumulates `seed * d(output)/d(param)` into `grads`.
    pub fn backward_scaled(&mut self, output: Var, seed: f64, grads: &mut Grads) {
        self.grads.clear();
        self.grads.resize(self.vals.len(), 0.0);
        let out = &self.nodes[output.idx()];
        for g in &mut self.grads[out.off..out.off + out.len] {
            *g = seed;
        }
        for idx in (0..=output.idx()).rev() {
            let node = &self.nodes[idx];
            let (off, len) = (node.off, node.len);
            let (lower, upper) = self.grads.split_at_mut(off);
            let g = &upper[..len];
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            let vals = &self.vals;
            let out = &vals[off..off + len];
            let nodes = &self.nodes;
            let span = |v: Var| {
                let n = &nodes[v.idx()];
                (n.off, n.len)
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    for (d, gi) in grads.get_mut(*id).iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                Op::ParamRow(id, row) => {
                    let dst = &mut grads.get_mut(*id)[row * len..(row + 1) * len];
                    for (d, gi) in dst.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                Op::Affine { w, x, b } => {
                    let wv = self.params.get(*w);
                    let (xo, xl) = span(*x);
                    let xs = &vals[xo..xo + xl];
                    let (dx, _) = lower[xo..].split_at_mut(xl);
                    matvec_backward(&wv.data, wv.cols(), xs, g, Some(dx), grads.get_mut(*w));
                    if let Some(b) = b {
                        for (d, gi) in grads.get_mut(*b).iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (ao, _) = span(*a);
                    let (bo, _) = span(*b);
                    for i in 0..len {
                        lower[ao + i] += g[i];
                        lower[bo + i] += g[i];
                    }
                }
                Op::Sub(a, b) => {
                    let (ao, _) = span(*a);
                    let (bo, _) = span(*b);
                    for i in 0..len {
                        lower[ao + i] += g[i];
                        lower[bo + i] -= g[i];
                    }
                }
                Op::Mul(a, b) => {
                    let (ao, _) = span(*a);
                    let (bo, _) = span(*b);
                    for i in 0..len {
                        let (av, bv) = (vals[ao + i], vals[bo + i]);
                        lower[ao + i] += g[i] * bv;
                        lower[bo + i] += g[i] * av;
                    }
                }
                Op::Scale(a, c) => {
                    let (ao, _) = span(*a);
                    for i in 0..len {
                        lower[ao + i] += g[i] * c;
                    }
                }
                Op::Sigmoid(a) => {
                    let (ao, _) = span(*a);
                    for i in 0..len {
                        lower[ao + i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
                Op::Tanh(a) => {
                    let (ao, _) = span(*a);
                    for i in 0..len {
                        lower[ao + i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
                Op::Exp(a) => {
                    let (ao, _) = span(*a);
                    for i in 0..len {
                        lower[ao + i] += g[i] * out[i];
                    }
                }
                Op::Softplus(a) => {
                    let (ao, _) = span(*a);
                    for i in 0..len {
                        lower[ao + i] += g[i] * sigmoid(vals[ao + i]);
                    }
                }
                Op::Softmax(a) => {
                    let (ao, _) = span(*a);
                    let gy: f64 = (0..len).map(|i| g[i] * out[i]).sum();
                    for i in 0..len {
                        lower[ao + i] += out[i] * (g[i] - gy);
                    }
                }
                Op::Concat { start, count } => {
                    let mut pos = 0;
                    for p in &self.links[*start..start + count] {
                        let (po, pl) = span(*p);
                        for i in 0..pl {
                            lower[po + i] += g[pos + i];
                        }
                        pos += pl;
                    }
                }
                Op::Slice(a, start) => {
                    let (ao, _) = span(*a);
                    for i in 0..len {
                        lower[ao + start + i] += g[i];
                    }
                }
                Op::Gather { src, start } => {
                    let (so, _) = span(*src);
                    for (k, &i) in self.indices[*start..start + len].iter().enumerate() {
                        lower[so + i] += g[k];
                    }
                }
                Op::Dot(a, b) => {
                    let (ao, al) = span(*a);
                    let (bo, _) = span(*b);
                    for i in 0..al {
                        let (av, bv) = (vals[ao + i], vals[bo + i]);
                        lower[ao + i] += g[0] * bv;
                        lower[bo + i] += g[0] * av;
                    }
                }
                Op::Sum(a) => {
                    let (ao, al) = span(*a);
                    for i in 0..al {
                        lower[ao + i] += g[0];
                    }
                }
                Op::Mean(a) => {
                    let (ao, al) = span(*a);
                    let share = g[0] / al as f64;
                    for i in 0..al {
                        lower[ao + i] += share;
                    }
                }
                Op::WeightedSum { alpha, start, count } => {
                    let (alo, _) = span(*alpha);
                    for (k, val) in self.links[*start..start + count].iter().enumerate() {
                        let (vo, _) = span(*val);
                        let a = vals[alo + k];
                        let mut da = 0.0;
                        for i in 0..len {
                            da += g[i] * vals[vo + i];
                            lower[vo + i] += g[i] * a;
                        }
                        lower[alo + k] += da;
                    }
                }
                Op::Gru { cell, h, x, aux } => {
                    gru_backward(
                        self.params,
                        *cell,
                        span(*h),
                        span(*x),
                        &self.aux[*aux..],
                        vals,
                        g,
                        lower,
                        grads,
                    );
                }
                Op::Ode {
                    field,
                    y0,
                    step,
                    n_steps,
                    aux,
                } => {
                    let (yo, _) = span(*y0);
                    let mut gy = g.to_vec();
                    ode_backward(self.params, field, *step, *n_steps, &self.aux[*aux..], &mut gy, grads);
                    for i in 0..len {
                        lower[yo + i] += gy[i];
                    }
                }
                Op::Bce { p, label, w_pos } => {
                    let (po, _) = span(*p);
                    let pv = vals[po];
                    if pv > PROB_CLAMP && pv < 1.0 - PROB_CLAMP {
                        let d = -w_pos * label / pv + (1.0 - label) / (1.0 - pv);
                        lower[po] += g[0] * d;
                    }
                }
                Op::SoftmaxXent { logits, target, aux } => {
                    let (lo, ll) = span(*logits);
                    for i in 0..ll {
                        let onehot = if i == *target { 1.0 } else { 0.0 };
                        lower[lo + i] += g[0] * (self.aux[aux + i] - onehot);
                    }
                }
            }
        }
    }

    pub fn backward(&mut self, output: Var, grads: &mut Grads) {
        self.backward_scaled(output, 1.0, grads);
    }
}

/// Evaluates the MLP vector field, storing the three hidden activations.
fn field_forward(ps: &ParamStore, field: &OdeFieldParams, y: &[f64], acts: &mut [f64], out: &mut [f64]) {
    let d = y.len();
    let mut input: &[f64] = y;
    let mut buf = vec![0.0; d];
    for layer in 0..3 {
        let w = &ps.get(field.w[layer]).data;
        let b = &ps.get(field.b[layer]).data;
        matvec(w, d, input, &mut buf);
        let a = &mut acts[layer * d..(layer + 1) * d];
        for i in 0..d {
            a[i] = (buf[i] + b[i]).tanh();
        }
        input = &acts[layer * d..(layer + 1) * d];
    }
    matvec(&ps.get(field.w[3]).data, d, input, out);
    for (o, b) in out.iter_mut().zip(&ps.get(field.b[3]).data) {
        *o += b;
    }
}

fn ode_backward(
    ps: &ParamStore,
    field: &OdeFieldParams,
    step: f64,
    n_steps: usize,
    aux: &[f64],
    gy: &mut [f64],
    grads: &mut Grads,
) {
    let d = gy.len();
    let per_step = 4 * d;
    let mut delta = vec![0.0; d];
    let mut dnext = vec![0.0; d];
    for k in (0..n_steps).rev() {
        let base = k * per_step;
        let y = &aux[base..base + d];
        let acts = &aux[base + d..base + 4 * d];
        // upstream of f(y_k) is step * g_{k+1}
        for i in 0..d {
            delta[i] = step * gy[i];
        }
        for layer in (0..4).rev() {
            let input = if layer == 0 {
                y
            } else {
                &acts[(layer - 1) * d..layer * d]
            };
            let w = &ps.get(field.w[layer]).data;
            for (db, dl) in grads.get_mut(field.b[layer]).iter_mut().zip(&delta) {
                *db += dl;
            }
            dnext.iter_mut().for_each(|x| *x = 0.0);
            matvec_backward(w, d, input, &delta, Some(&mut dnext), grads.get_mut(field.w[layer]));
            if layer > 0 {
                // through tanh of the previous hidden layer
                for i in 0..d {
                    delta[i] = dnext[i] * (1.0 - input[i] * input[i]);
                }
            }
        }
        for i in 0..d {
            gy[i] += dnext[i];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gru_backward(
    ps: &ParamStore,
    cell: GruParams,
    (ho, d): (usize, usize),
    (xo, m): (usize, usize),
    aux: &[f64],
    vals: &[f64],
    g: &[f64],
    lower: &mut [f64],
    grads: &mut Grads,
) {
    let w = &ps.get(cell.w).data;
    let u = &ps.get(cell.u).data;
    let z = &aux[..d];
    let r = &aux[d..2 * d];
    let n = &aux[2 * d..3 * d];
    let rh = &aux[3 * d..4 * d];
    let h = &vals[ho..ho + d];
    let x = &vals[xo..xo + m];

    let mut da = vec![0.0; 3 * d];
    let mut dh = vec![0.0; d];
    for i in 0..d {
        let dz = g[i] * (h[i] - n[i]);
        let dn = g[i] * (1.0 - z[i]);
        dh[i] = g[i] * z[i];
        da[i] = dz * z[i] * (1.0 - z[i]);
        da[2 * d + i] = dn * (1.0 - n[i] * n[i]);
    }
    // candidate path through U_n (r*h)
    let mut drh = vec![0.0; d];
    {
        let du = grads.get_mut(cell.u);
        matvec_backward(
            &u[2 * d * d..],
            d,
            rh,
            &da[2 * d..],
            Some(&mut drh),
            &mut du[2 * d * d..],
        );
    }
    for i in 0..d {
        let dr = drh[i] * h[i];
        dh[i] += drh[i] * r[i];
        da[d + i] = dr * r[i] * (1.0 - r[i]);
    }
    {
        let du = grads.get_mut(cell.u);
        matvec_backward(&u[..2 * d * d], d, h, &da[..2 * d], Some(&mut dh), &mut du[..2 * d * d]);
    }
    for (db, a) in grads.get_mut(cell.b).iter_mut().zip(&da) {
        *db += a;
    }
    let mut dx = vec![0.0; m];
    matvec_backward(w, m, x, &da, Some(&mut dx), grads.get_mut(cell.w));
    for i in 0..d {
        lower[ho + i] += dh[i];
    }
    for i in 0..m {
        lower[xo + i] += dx[i];
    }
}
