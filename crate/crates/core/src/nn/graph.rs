//! Reverse-mode autodiff over 2-D tensors.
//!
//! A [`Graph`] records every operation as a node holding its value. Parameters
//! are read from a borrowed [`ParamStore`] and never copied. `backward` walks
//! the tape in reverse and returns gradients per node and per parameter.
//!
//! Grouped ops (`neighbor_mean`, `attention`, `mean_pool`, `broadcast`)
//! treat rows as consecutive groups of `group` slots with a per-slot mask.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::sync::Arc;

use rayon::prelude::*;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::entropy::dist::{gaussian_bin_log_prob, laplace_bin_log_prob};
use crate::error::{Error, Result};

/// Work below this many multiply-adds stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

pub type Mask = Arc<[bool]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    ExpClamped(Var, f64, f64),
    Concat(Vec<Var>),
    NeighborMean(Var, Mask, usize),
    MaskRows(Var, Mask),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        mask: Mask,
        group: usize,
        scale: f64,
    },
    MeanPool(Var, Mask, usize),
    Broadcast(Var, usize),
    RepeatRows(Var),
    ShiftRows(Var, usize),
    LaplaceBits {
        y: Var,
        mu: Var,
        b: Var,
        delta: Var,
    },
    GaussianBits {
        z: Var,
        mean: Var,
        scale: Var,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    param_vars: HashMap<ParamId, Var>,
    nodes: Vec<Node>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph<'static> {
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: HashMap::new(),
            nodes: Vec::new(),
        }
    }
}

fn shape_err(op: &str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}"))
}

/// Sum in ascending value order, so the result depends only on the multiset
/// of terms.
fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

fn matmul_into(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (k, m) = (a.cols(), b.cols());
    let bd = b.data();
    let row = |(i, orow): (usize, &mut [f64])| {
        let arow = a.row(i);
        for (kk, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m == 0 {
        return;
    }
    if a.rows() * k * m >= PAR_THRESHOLD {
        out.data_mut().par_chunks_mut(m).enumerate().for_each(row);
    } else {
        out.data_mut().chunks_mut(m).enumerate().for_each(row);
    }
}

impl<'p> Graph<'p> {
    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            param_vars: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(id) => self
                .params
                .expect("parameter node without a store")
                .get(*id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        assert!(self.params.is_some(), "graph has no parameter store");
        let v = self.push(Op::Param(id), Tensor::zeros(0, 0));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa[0], sb[1]);
        matmul_into(self.value(a), self.value(b), &mut out);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb != [1, sa[1]] {
            return Err(shape_err("add_bias", sa, sb));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..sa[0] {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddBias(a, bias), out))
    }

    fn zip_values(&self, a: Var, b: Var, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    /// `exp(clamp(a, lo, hi))`; the gradient is zero where clamping applied.
    pub fn exp_clamped(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi).exp());
        self.push(Op::ExpClamped(a, lo, hi), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p)[0],
            None => return Err(Error::ShapeMismatch("concat of nothing".into())),
        };
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(shape_err("concat", [rows, cols], s));
            }
            cols += s[1];
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    fn check_grouped(&self, a: Var, mask: &Mask, group: usize, op: &str) -> Result<()> {
        let rows = self.shape(a)[0];
        if group == 0 || rows % group != 0 || mask.len() != rows {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {rows} rows, mask {}, group {group}",
                mask.len()
            )));
        }
        Ok(())
    }

    /// Row `i` becomes the mean of the other unmasked rows of its group
    /// (zero when there are none).
    pub fn neighbor_mean(&mut self, a: Var, mask: Mask, group: usize) -> Result<Var> {
        self.check_grouped(a, &mask, group, "neighbor_mean")?;
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(rows, cols);
        for g0 in (0..rows).step_by(group) {
            for i in g0..g0 + group {
                let n = (g0..g0 + group).filter(|&j| j != i && mask[j]).count();
                if n == 0 {
                    continue;
                }
                let inv = 1.0 / n as f64;
                for j in (g0..g0 + group).filter(|&j| j != i && mask[j]) {
                    let src = t.row(j);
                    for (o, &s) in out.row_mut(i).iter_mut().zip(src) {
                        *o += s;
                    }
                }
                for o in out.row_mut(i) {
                    *o *= inv;
                }
            }
        }
        Ok(self.push(Op::NeighborMean(a, mask, group), out))
    }

    /// Zeroes masked-out rows.
    pub fn mask_rows(&mut self, a: Var, mask: Mask) -> Result<Var> {
        let rows = self.shape(a)[0];
        if mask.len() != rows {
            return Err(Error::ShapeMismatch(format!(
                "mask_rows: {rows} rows, mask {}",
                mask.len()
            )));
        }
        let mut out = self.value(a).clone();
        for (r, &m) in mask.iter().enumerate() {
            if !m {
                out.row_mut(r).fill(0.0);
            }
        }
        Ok(self.push(Op::MaskRows(a, mask), out))
    }

    /// Scaled dot-product attention inside each group over unmasked keys.
    /// Masked query rows produce zeros. Softmax denominators and output
    /// sums add their terms in ascending value order, which makes the
    /// result bitwise equivariant under row permutations within a group.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Mask, group: usize) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq != sk || sv[0] != sq[0] {
            return Err(shape_err("attention", sq, sk));
        }
        self.check_grouped(q, &mask, group, "attention")?;
        let scale = 1.0 / (sq[1].max(1) as f64).sqrt();
        let weights = attention_weights(self.value(q), self.value(k), &mask, group, scale);
        let vt = self.value(v);
        let (rows, dv) = (sv[0], sv[1]);
        let mut out = Tensor::zeros(rows, dv);
        let mut terms = Vec::with_capacity(group);
        for i in 0..rows {
            if !mask[i] {
                continue;
            }
            let g0 = i - i % group;
            for c in 0..dv {
                terms.clear();
                for j in (g0..g0 + group).filter(|&j| mask[j]) {
                    terms.push(weights[i * group + (j - g0)] * vt.get(j, c));
                }
                out.set(i, c, sorted_sum(&mut terms));
            }
        }
        Ok(self.push(
            Op::Attention {
                q,
                k,
                v,
                mask,
                group,
                scale,
            },
            out,
        ))
    }

    /// Masked mean of each group, one output row per group.
    pub fn mean_pool(&mut self, a: Var, mask: Mask, group: usize) -> Result<Var> {
        self.check_grouped(a, &mask, group, "mean_pool")?;
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(rows / group, cols);
        for b in 0..rows / group {
            let members: Vec<usize> = (b * group..(b + 1) * group).filter(|&j| mask[j]).collect();
            if members.is_empty() {
                continue;
            }
            let inv = 1.0 / members.len() as f64;
            for &j in &members {
                let src = t.row(j);
                for (o, &s) in out.row_mut(b).iter_mut().zip(src) {
                    *o += s;
                }
            }
            for o in out.row_mut(b) {
                *o *= inv;
            }
        }
        Ok(self.push(Op::MeanPool(a, mask, group), out))
    }

    /// Repeats every row `group` times.
    pub fn broadcast(&mut self, a: Var, group: usize) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows() * group, t.cols());
        for r in 0..t.rows() {
            for s in 0..group {
                out.row_mut(r * group + s).copy_from_slice(t.row(r));
            }
        }
        self.push(Op::Broadcast(a, group), out)
    }

    /// Tiles a single row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != 1 {
            return Err(shape_err("repeat_rows", t.shape(), [1, t.cols()]));
        }
        let mut out = Tensor::zeros(n, t.cols());
        for r in 0..n {
            out.row_mut(r).copy_from_slice(t.row(0));
        }
        Ok(self.push(Op::RepeatRows(a), out))
    }

    /// `out[t] = a[t - k]`, zero for `t < k`.
    pub fn shift_rows(&mut self, a: Var, k: usize) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in k..t.rows() {
            out.row_mut(r).copy_from_slice(t.row(r - k));
        }
        self.push(Op::ShiftRows(a, k), out)
    }

    /// Elementwise `-log2 P(bin)` for Laplace(`mu`, `b`) bins of width
    /// `delta` centered at `y`.
    pub fn laplace_bits(&mut self, y: Var, mu: Var, b: Var, delta: Var) -> Result<Var> {
        let s = self.shape(y);
        for v in [mu, b, delta] {
            if self.shape(v) != s {
                return Err(shape_err("laplace_bits", s, self.shape(v)));
            }
        }
        let (ty, tm, tb, td) = (self.value(y), self.value(mu), self.value(b), self.value(delta));
        let data = (0..ty.len())
            .map(|i| {
                -laplace_bin_log_prob(ty.data()[i] - tm.data()[i], td.data()[i], tb.data()[i]).log_p
                    / LN_2
            })
            .collect();
        let out = Tensor::from_vec(s[0], s[1], data)?;
        Ok(self.push(Op::LaplaceBits { y, mu, b, delta }, out))
    }

    /// Elementwise `-log2 P(unit bin)` under Gaussian(`mean`, `scale`).
    pub fn gaussian_bits(&mut self, z: Var, mean: Var, scale: Var) -> Result<Var> {
        let s = self.shape(z);
        for v in [mean, scale] {
            if self.shape(v) != s {
                return Err(shape_err("gaussian_bits", s, self.shape(v)));
            }
        }
        let (tz, tm, ts) = (self.value(z), self.value(mean), self.value(scale));
        let data = (0..tz.len())
            .map(|i| -gaussian_bin_log_prob(tz.data()[i] - tm.data()[i], ts.data()[i]).log_p / LN_2)
            .collect();
        let out = Tensor::from_vec(s[0], s[1], data)?;
        Ok(self.push(Op::GaussianBits { z, mean, scale }, out))
    }

    /// Side taken by every piecewise op element: ReLU input sign, clamp
    /// region, which bin edge of a Laplace bin the mean lies past, and the
    /// Gaussian probability floor. Evaluations with equal patterns lie on the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.value(*a).data().iter().map(|&v| u8::from(v > 0.0))),
                Op::ExpClamped(a, lo, hi) => out.extend(self.value(*a).data().iter().map(|&v| {
                    if v < *lo {
                        0
                    } else if v > *hi {
                        2
                    } else {
                        1
                    }
                })),
                Op::LaplaceBits { y, mu, b: _, delta } => {
                    let (ty, tm, td) = (self.value(*y), self.value(*mu), self.value(*delta));
                    out.extend((0..ty.len()).map(|i| {
                        let u = ty.data()[i] - tm.data()[i];
                        let w = 0.5 * td.data()[i];
                        if u - w >= 0.0 {
                            0
                        } else if u + w <= 0.0 {
                            1
                        } else {
                            2
                        }
                    }));
                }
                Op::GaussianBits { z, mean, scale } => {
                    let (tz, tm, ts) = (self.value(*z), self.value(*mean), self.value(*scale));
                    out.extend((0..tz.len()).map(|i| {
                        let lp = gaussian_bin_log_prob(tz.data()[i] - tm.data()[i], ts.data()[i]);
                        u8::from(lp.d_scale == 0.0 && lp.d_offset == 0.0)
                    }));
                }
                _ => {}
            }
        }
        out
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != [1, 1] {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar root, got {:?}",
                rv.shape()
            )));
        }
        if !rv.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                detail: format!("loss value {}", rv.item()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params = HashMap::new();
        for (&id, &v) in &self.param_vars {
            if let Some(g) = &grads[v.0] {
                params.insert(id, g.clone());
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(grads, *a, matmul_bt(g, tb));
                acc(grads, *b, matmul_at(ta, g));
            }
            Op::AddBias(a, b) => {
                acc(grads, *a, g.clone());
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(grads, *b, gb);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(grads, *a, elementwise(g, tb, |x, y| x * y));
                acc(grads, *b, elementwise(g, ta, |x, y| x * y));
            }
            Op::Scale(a, c) => acc(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::Relu(a) => {
                let ta = self.value(*a);
                acc(grads, *a, elementwise(g, ta, |x, v| if v > 0.0 { x } else { 0.0 }));
            }
            Op::Sigmoid(a) => acc(grads, *a, elementwise(g, out, |x, s| x * s * (1.0 - s))),
            Op::ExpClamped(a, lo, hi) => {
                let ta = self.value(*a);
                let mut d = elementwise(g, out, |x, e| x * e);
                for (dv, &v) in d.data_mut().iter_mut().zip(ta.data()) {
                    if v < *lo || v > *hi {
                        *dv = 0.0;
                    }
                }
                acc(grads, *a, d);
            }
            Op::Concat(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    let mut d = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                    }
                    acc(grads, p, d);
                    c0 += w;
                }
            }
            Op::NeighborMean(a, mask, group) => {
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for g0 in (0..g.rows()).step_by(*group) {
                    for i in g0..g0 + group {
                        let n = (g0..g0 + group).filter(|&j| j != i && mask[j]).count();
                        if n == 0 {
                            continue;
                        }
                        let inv = 1.0 / n as f64;
                        for j in (g0..g0 + group).filter(|&j| j != i && mask[j]) {
                            for c in 0..g.cols() {
                                let v = d.get(j, c) + g.get(i, c) * inv;
                                d.set(j, c, v);
                            }
                        }
                    }
                }
                acc(grads, *a, d);
            }
            Op::MaskRows(a, mask) => {
                let mut d = g.clone();
                for (r, &m) in mask.iter().enumerate() {
                    if !m {
                        d.row_mut(r).fill(0.0);
                    }
                }
                acc(grads, *a, d);
            }
            Op::Attention {
                q,
                k,
                v,
                mask,
                group,
                scale,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let w = attention_weights(tq, tk, mask, *group, *scale);
                let (rows, dk, dv) = (tq.rows(), tq.cols(), tv.cols());
                let mut gq = Tensor::zeros(rows, dk);
                let mut gk = Tensor::zeros(rows, dk);
                let mut gv = Tensor::zeros(rows, dv);
                let mut da = vec![0.0; *group];
                for i in 0..rows {
                    if !mask[i] {
                        continue;
                    }
                    let g0 = i - i % group;
                    let gi = g.row(i);
                    let mut dot = 0.0;
                    for j in (g0..g0 + group).filter(|&j| mask[j]) {
                        let a = w[i * group + (j - g0)];
                        let vj = tv.row(j);
                        let mut s = 0.0;
                        for c in 0..dv {
                            s += gi[c] * vj[c];
                            let cur = gv.get(j, c);
                            gv.set(j, c, cur + a * gi[c]);
                        }
                        da[j - g0] = s;
                        dot += a * s;
                    }
                    for j in (g0..g0 + group).filter(|&j| mask[j]) {
                        let a = w[i * group + (j - g0)];
                        let ds = a * (da[j - g0] - dot) * scale;
                        for c in 0..dk {
                            let cq = gq.get(i, c);
                            gq.set(i, c, cq + ds * tk.get(j, c));
                            let ck = gk.get(j, c);
                            gk.set(j, c, ck + ds * tq.get(i, c));
                        }
                    }
                }
                acc(grads, *q, gq);
                acc(grads, *k, gk);
                acc(grads, *v, gv);
            }
            Op::MeanPool(a, mask, group) => {
                let rows = g.rows() * group;
                let mut d = Tensor::zeros(rows, g.cols());
                for b in 0..g.rows() {
                    let n = (b * group..(b + 1) * group).filter(|&j| mask[j]).count();
                    if n == 0 {
                        continue;
                    }
                    let inv = 1.0 / n as f64;
                    for j in (b * group..(b + 1) * group).filter(|&j| mask[j]) {
                        for (o, &v) in d.row_mut(j).iter_mut().zip(g.row(b)) {
                            *o = v * inv;
                        }
                    }
                }
                acc(grads, *a, d);
            }
            Op::Broadcast(a, group) => {
                let mut d = Tensor::zeros(g.rows() / group, g.cols());
                for r in 0..g.rows() {
                    let b = r / group;
                    for (o, &v) in d.row_mut(b).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(grads, *a, d);
            }
            Op::RepeatRows(a) => {
                let mut d = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in d.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(grads, *a, d);
            }
            Op::ShiftRows(a, k) => {
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in *k..g.rows() {
                    d.row_mut(r - k).copy_from_slice(g.row(r));
                }
                acc(grads, *a, d);
            }
            Op::LaplaceBits { y, mu, b, delta } => {
                let (ty, tm, tb, td) = (self.value(*y), self.value(*mu), self.value(*b), self.value(*delta));
                let n = ty.len();
                let (mut gy, mut gm, mut gb, mut gd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for i in 0..n {
                    let lp = laplace_bin_log_prob(ty.data()[i] - tm.data()[i], td.data()[i], tb.data()[i]);
                    let c = -g.data()[i] / LN_2;
                    gy[i] = c * lp.d_offset;
                    gm[i] = -c * lp.d_offset;
                    gb[i] = c * lp.d_scale;
                    gd[i] = c * lp.d_width;
                }
                let [r, cols] = ty.shape();
                acc(grads, *y, Tensor::from_vec(r, cols, gy).expect("shape"));
                acc(grads, *mu, Tensor::from_vec(r, cols, gm).expect("shape"));
                acc(grads, *b, Tensor::from_vec(r, cols, gb).expect("shape"));
                acc(grads, *delta, Tensor::from_vec(r, cols, gd).expect("shape"));
            }
            Op::GaussianBits { z, mean, scale } => {
                let (tz, tm, ts) = (self.value(*z), self.value(*mean), self.value(*scale));
                let n = tz.len();
                let (mut gz, mut gm, mut gs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for i in 0..n {
                    let lp = gaussian_bin_log_prob(tz.data()[i] - tm.data()[i], ts.data()[i]);
                    let c = -g.data()[i] / LN_2;
                    gz[i] = c * lp.d_offset;
                    gm[i] = -c * lp.d_offset;
                    gs[i] = c * lp.d_scale;
                }
                let [r, cols] = tz.shape();
                acc(grads, *z, Tensor::from_vec(r, cols, gz).expect("shape"));
                acc(grads, *mean, Tensor::from_vec(r, cols, gm).expect("shape"));
                acc(grads, *scale, Tensor::from_vec(r, cols, gs).expect("shape"));
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                acc(grads, *a, Tensor::filled(r, c, g.item()));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("matching shapes")
}

/// `g * b^T`
fn matmul_bt(g: &Tensor, b: &Tensor) -> Tensor {
    let (n, m, k) = (g.rows(), g.cols(), b.rows());
    let mut out = Tensor::zeros(n, k);
    let row = |(i, orow): (usize, &mut [f64])| {
        let gi = g.row(i);
        for (o, bk) in orow.iter_mut().zip(b.data().chunks_exact(m)) {
            *o = gi.iter().zip(bk).fold(0.0, |s, (x, y)| s + x * y);
        }
    };
    if k == 0 || m == 0 {
        return out;
    }
    if n * m * k >= PAR_THRESHOLD {
        out.data_mut().par_chunks_mut(k).enumerate().for_each(row);
    } else {
        out.data_mut().chunks_mut(k).enumerate().for_each(row);
    }
    out
}

/// `a^T * g`, each output entry reduced over input rows in ascending order.
fn matmul_at(a: &Tensor, g: &Tensor) -> Tensor {
    let (k, m) = (a.cols(), g.cols());
    let mut out = Tensor::zeros(k, m);
    if m == 0 {
        return out;
    }
    for (arow, grow) in a.data().chunks_exact(k.max(1)).zip(g.data().chunks_exact(m)) {
        for (&av, orow) in arow.iter().zip(out.data_mut().chunks_exact_mut(m)) {
            if av == 0.0 {
                continue;
            }
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// Softmax weights laid out as `[row][slot in group]`, zero for masked keys
/// and for masked query rows.
fn attention_weights(q: &Tensor, k: &Tensor, mask: &[bool], group: usize, scale: f64) -> Vec<f64> {
    let rows = q.rows();
    let d = q.cols();
    let mut w = vec![0.0; rows * group];
    let mut exps = Vec::with_capacity(group);
    let mut scores = vec![f64::NEG_INFINITY; group];
    for i in 0..rows {
        if !mask[i] {
            continue;
        }
        let g0 = i - i % group;
        let qi = q.row(i);
        scores.fill(f64::NEG_INFINITY);
        let mut max = f64::NEG_INFINITY;
        for j in (g0..g0 + group).filter(|&j| mask[j]) {
            let kj = k.row(j);
            let mut s = 0.0;
            for c in 0..d {
                s += qi[c] * kj[c];
            }
            s *= scale;
            scores[j - g0] = s;
            max = max.max(s);
        }
        exps.clear();
        for j in (g0..g0 + group).filter(|&j| mask[j]) {
            exps.push((scores[j - g0] - max).exp());
        }
        let mut terms = exps.clone();
        let denom = sorted_sum(&mut terms);
        let mut e = exps.iter();
        for j in (g0..g0 + group).filter(|&j| mask[j]) {
            w[i * group + (j - g0)] = e.next().expect("one per key") / denom;
        }
    }
    w
}

/// Gradients from one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for every parameter of `store`, zero where unreached.
    pub fn params(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| match self.params.get(&id) {
                Some(g) => g.clone(),
                None => {
                    let [r, c] = store.get(id).shape();
                    Tensor::zeros(r, c)
                }
            })
            .collect()
    }
}
