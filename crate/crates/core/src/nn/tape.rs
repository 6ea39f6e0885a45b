//! Define-by-run reverse-mode autodiff.
//!
//! Every op appends a node holding its value; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::conv::{self, ConvGeom};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::losses::{focal_term, FilterBank, FocalParams};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Upsample(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gap(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Slice {
        x: Var,
        start: usize,
        end: usize,
    },
    MaskMul(Var, Arc<Vec<f64>>),
    ShDot {
        t: Var,
        l: Var,
    },
    Sum(Var),
    Mse {
        a: Var,
        b: Var,
        mask: Option<Arc<Vec<f64>>>,
        count: f64,
    },
    L1 {
        a: Var,
        b: Var,
        mask: Option<Arc<Vec<f64>>>,
        count: f64,
    },
    Focal {
        p: Var,
        target: Arc<Vec<bool>>,
        mask: Option<Arc<Vec<f64>>>,
        params: FocalParams,
        count: f64,
    },
    Sf {
        a: Var,
        b: Var,
        bank: Arc<FilterBank>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to the leaf and parameter nodes
/// of a tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Gradients laid out like `store`, zero for unused parameters.
    pub fn for_params(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for &(node, param) in &self.params {
            if let Some(g) = &self.grads[node] {
                out[param].add_assign(g);
            }
        }
        out
    }
}

fn same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::State(format!(
                "node {} was not recorded on this tape; run the forward pass first",
                v.idx
            )));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, index: usize) -> Var {
        self.push(store.values()[index].clone(), Op::Param(index))
    }

    /// Records every parameter of `store` in order.
    pub fn params(&mut self, store: &ParamStore) -> Vec<Var> {
        (0..store.len()).map(|i| self.param(store, i)).collect()
    }

    /// Square convolution with `pad = k / 2`. Weights are
    /// `C_out × C_in × k × k`, bias `C_out`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let node = self.nodes.len();
        let (c, h, wd) = self.value(x).chw()?;
        let ws = self.value(w).shape().to_vec();
        let [c_out, c_in, k, k2] = ws[..] else {
            return Err(Error::shape(format!("conv2d at node {node}: weight shape {ws:?}")));
        };
        if c_in != c || k != k2 || k % 2 == 0 || self.value(b).shape() != [c_out] || stride == 0 {
            return Err(Error::shape(format!(
                "conv2d at node {node}: input {:?}, weight {ws:?}, bias {:?}",
                self.value(x).shape(),
                self.value(b).shape()
            )));
        }
        let geom = ConvGeom {
            c_in,
            c_out,
            h,
            w: wd,
            k,
            stride,
            pad: k / 2,
        };
        let (ho, wo) = geom.out_hw();
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        Ok(self.push(Tensor::new(vec![c_out, ho, wo], out)?, Op::Conv { x, w, b, geom }))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (c, h, w) = self.value(x).chw()?;
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        Ok(self.push(Tensor::new(vec![c, h2, w2], out)?, Op::Upsample(x)))
    }

    /// Channel concatenation of `C_i × H × W` tensors.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        let mut channels = 0;
        let mut hw = None;
        for &x in xs {
            self.check(x)?;
            let (c, h, w) = self.value(x).chw()?;
            if *hw.get_or_insert((h, w)) != (h, w) {
                return Err(Error::shape(format!(
                    "concat at node {}: spatial sizes differ",
                    self.nodes.len()
                )));
            }
            channels += c;
            data.extend_from_slice(self.value(x).data());
        }
        let (h, w) = hw.ok_or_else(|| Error::invalid("concat of nothing"))?;
        Ok(self.push(Tensor::new(vec![channels, h, w], data)?, Op::Concat(xs.to_vec())))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        same(va, vb, &format!("{what} at node {}", self.nodes.len()))?;
        Tensor::new(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(|v| v * s);
        Ok(self.push(t, Op::Scale(x, s)))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        Ok(self.push(t, Op::LeakyRelu(x, slope)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(sigmoid);
        Ok(self.push(t, Op::Sigmoid(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(f64::tanh);
        Ok(self.push(t, Op::Tanh(x)))
    }

    /// `C × H × W → C` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (c, h, w) = self.value(x).chw()?;
        let n = (h * w) as f64;
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / n)
            .collect();
        Ok(self.push(Tensor::new(vec![c], data)?, Op::Gap(x)))
    }

    /// `y = W x + b` with `W: M × N`, `x: N`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let [m, n] = vw.shape()[..] else {
            return Err(Error::shape(format!(
                "linear at node {}: weight must be 2-D",
                self.nodes.len()
            )));
        };
        if vx.shape() != [n] || vb.shape() != [m] {
            return Err(Error::shape(format!(
                "linear at node {}: x {:?}, w {:?}, b {:?}",
                self.nodes.len(),
                vx.shape(),
                vw.shape(),
                vb.shape()
            )));
        }
        let data = (0..m)
            .map(|i| {
                vb.data()[i]
                    + vw.data()[i * n..(i + 1) * n]
                        .iter()
                        .zip(vx.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        Ok(self.push(Tensor::new(vec![m], data)?, Op::Linear { x, w, b }))
    }

    /// Channels `start..end` of a `C × H × W` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.check(x)?;
        let (c, h, w) = self.value(x).chw()?;
        if start >= end || end > c {
            return Err(Error::shape(format!(
                "slice at node {}: {start}..{end} of {c} channels",
                self.nodes.len()
            )));
        }
        let data = self.value(x).data()[start * h * w..end * h * w].to_vec();
        Ok(self.push(Tensor::new(vec![end - start, h, w], data)?, Op::Slice { x, start, end }))
    }

    /// Multiplies every channel by an `H × W` mask.
    pub fn mask_mul(&mut self, x: Var, mask: Arc<Vec<f64>>) -> Result<Var> {
        self.check(x)?;
        let (c, h, w) = self.value(x).chw()?;
        if mask.len() != h * w {
            return Err(Error::shape(format!(
                "mask at node {}: size mismatch",
                self.nodes.len()
            )));
        }
        let mut data = self.value(x).data().to_vec();
        for ch in 0..c {
            for (v, m) in data[ch * h * w..(ch + 1) * h * w].iter_mut().zip(mask.iter()) {
                *v *= m;
            }
        }
        Ok(self.push(Tensor::new(vec![c, h, w], data)?, Op::MaskMul(x, mask)))
    }

    /// Shading `S[c] = Σ_k T[k]·L[9c + k]` from a `9 × H × W` transport map
    /// and a 27-vector light.
    pub fn sh_dot(&mut self, t: Var, l: Var) -> Result<Var> {
        self.check(t)?;
        self.check(l)?;
        let (k, h, w) = self.value(t).chw()?;
        if k != 9 || self.value(l).shape() != [27] {
            return Err(Error::shape(format!(
                "sh_dot at node {}: transport {:?}, light {:?}",
                self.nodes.len(),
                self.value(t).shape(),
                self.value(l).shape()
            )));
        }
        let n = h * w;
        let (vt, vl) = (self.value(t).data(), self.value(l).data());
        let mut out = vec![0.0; 3 * n];
        for c in 0..3 {
            let plane = &mut out[c * n..(c + 1) * n];
            for j in 0..9 {
                let lv = vl[c * 9 + j];
                for (o, tv) in plane.iter_mut().zip(&vt[j * n..(j + 1) * n]) {
                    *o += tv * lv;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![3, h, w], out)?, Op::ShDot { t, l }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x)))
    }

    fn region(&self, x: Var, mask: &Option<Arc<Vec<f64>>>, what: &str) -> Result<(usize, f64)> {
        let t = self.value(x);
        let (c, hw) = match t.shape() {
            [c, h, w] => (*c, h * w),
            _ => (1, t.len()),
        };
        let count = match mask {
            Some(m) if m.len() != hw => {
                return Err(Error::shape(format!(
                    "{what} at node {}: mask size mismatch",
                    self.nodes.len()
                )))
            }
            Some(m) => m.iter().filter(|&&v| v != 0.0).count() * c,
            None => t.len(),
        };
        if count == 0 {
            return Err(Error::EmptyRegion(format!(
                "{what} at node {}: empty region",
                self.nodes.len()
            )));
        }
        Ok((hw, count as f64))
    }

    /// Mean squared difference over masked pixels and all channels.
    pub fn mse(&mut self, a: Var, b: Var, mask: Option<Arc<Vec<f64>>>) -> Result<Var> {
        let d = self.binary(a, b, "mse", |x, y| x - y)?;
        let (hw, count) = self.region(a, &mask, "mse")?;
        let s: f64 = d
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * v * mask.as_ref().map_or(1.0, |m| m[i % hw]))
            .sum();
        Ok(self.push(Tensor::scalar(s / count), Op::Mse { a, b, mask, count }))
    }

    /// Mean absolute difference over masked pixels and all channels.
    pub fn l1(&mut self, a: Var, b: Var, mask: Option<Arc<Vec<f64>>>) -> Result<Var> {
        let d = self.binary(a, b, "l1", |x, y| x - y)?;
        let (hw, count) = self.region(a, &mask, "l1")?;
        let s: f64 = d
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v.abs() * mask.as_ref().map_or(1.0, |m| m[i % hw]))
            .sum();
        Ok(self.push(Tensor::scalar(s / count), Op::L1 { a, b, mask, count }))
    }

    /// Mean focal loss of a `1 × H × W` probability map.
    pub fn focal(
        &mut self,
        p: Var,
        target: Arc<Vec<bool>>,
        mask: Option<Arc<Vec<f64>>>,
        params: FocalParams,
    ) -> Result<Var> {
        self.check(p)?;
        let (c, _, _) = self.value(p).chw()?;
        if c != 1 || target.len() != self.value(p).len() {
            return Err(Error::shape(format!(
                "focal at node {}: expects 1 × H × W",
                self.nodes.len()
            )));
        }
        let (_, count) = self.region(p, &mask, "focal")?;
        let s: f64 = self
            .value(p)
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.as_ref().is_none_or(|m| m[*i] != 0.0))
            .map(|(i, &v)| focal_term(v, target[i], params).0)
            .sum();
        Ok(self.push(
            Tensor::scalar(s / count),
            Op::Focal {
                p,
                target,
                mask,
                params,
                count,
            },
        ))
    }

    /// Multiscale LoG energy of `a − b`.
    pub fn sf(&mut self, a: Var, b: Var, bank: Arc<FilterBank>) -> Result<Var> {
        let d = self.binary(a, b, "sf", |x, y| x - y)?;
        let (c, h, w) = d.chw()?;
        let (e, _) = bank.energy(d.data(), c, h, w, false);
        Ok(self.push(Tensor::scalar(e), Op::Sf { a, b, bank }))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, node {} has shape {:?}",
                loss.idx,
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let acc = |grads: &mut Vec<Option<Tensor>>, v: Var, g: Tensor| match &mut grads[v.idx] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        };
        for i in (0..=loss.idx).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let val = |v: Var| &self.nodes[v.idx].value;
            let like = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape().to_vec(), data).unwrap();
            match &node.op {
                Op::Leaf | Op::Param(_) => unreachable!(),
                Op::Conv { x, w, b, geom } => {
                    let dx = conv::backward_input(geom, gy.data(), val(*w).data());
                    let (dw, db) = conv::backward_params(geom, gy.data(), val(*x).data());
                    acc(&mut grads, *x, like(*x, dx));
                    acc(&mut grads, *w, like(*w, dw));
                    acc(&mut grads, *b, like(*b, db));
                }
                Op::Upsample(x) => {
                    let (c, h, w) = val(*x).chw().unwrap();
                    let (h2, w2) = (2 * h, 2 * w);
                    let mut dx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                dx[(ch * h + y / 2) * w + xx / 2] += gy.data()[(ch * h2 + y) * w2 + xx];
                            }
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = val(x).len();
                        acc(&mut grads, x, like(x, gy.data()[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, gy.map(|v| -v));
                    acc(&mut grads, *a, gy);
                }
                Op::Mul(a, b) => {
                    let da = gy.data().iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                    let db = gy.data().iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                    acc(&mut grads, *a, like(*a, da));
                    acc(&mut grads, *b, like(*b, db));
                }
                Op::Scale(x, s) => acc(&mut grads, *x, gy.map(|v| v * s)),
                Op::LeakyRelu(x, slope) => {
                    let d = gy
                        .data()
                        .iter()
                        .zip(val(*x).data())
                        .map(|(g, v)| if *v > 0.0 { *g } else { g * slope })
                        .collect();
                    acc(&mut grads, *x, like(*x, d));
                }
                Op::Sigmoid(x) => {
                    let d = gy
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    acc(&mut grads, *x, like(*x, d));
                }
                Op::Tanh(x) => {
                    let d = gy
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    acc(&mut grads, *x, like(*x, d));
                }
                Op::Gap(x) => {
                    let (c, h, w) = val(*x).chw().unwrap();
                    let n = (h * w) as f64;
                    let mut d = vec![0.0; c * h * w];
                    for ch in 0..c {
                        d[ch * h * w..(ch + 1) * h * w].fill(gy.data()[ch] / n);
                    }
                    acc(&mut grads, *x, like(*x, d));
                }
                Op::Linear { x, w, b } => {
                    let (m, n) = (val(*w).shape()[0], val(*w).shape()[1]);
                    let (vx, vw) = (val(*x).data(), val(*w).data());
                    let mut dx = vec![0.0; n];
                    let mut dw = vec![0.0; m * n];
                    for i in 0..m {
                        let g = gy.data()[i];
                        for j in 0..n {
                            dx[j] += g * vw[i * n + j];
                            dw[i * n + j] = g * vx[j];
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                    acc(&mut grads, *w, like(*w, dw));
                    acc(&mut grads, *b, gy);
                }
                Op::Slice { x, start, end } => {
                    let (_, h, w) = val(*x).chw().unwrap();
                    let mut d = vec![0.0; val(*x).len()];
                    d[start * h * w..end * h * w].copy_from_slice(gy.data());
                    acc(&mut grads, *x, like(*x, d));
                }
                Op::MaskMul(x, mask) => {
                    let hw = mask.len();
                    let d = gy.data().iter().enumerate().map(|(i, g)| g * mask[i % hw]).collect();
                    acc(&mut grads, *x, like(*x, d));
                }
                Op::ShDot { t, l } => {
                    let (_, h, w) = val(*t).chw().unwrap();
                    let n = h * w;
                    let (vt, vl) = (val(*t).data(), val(*l).data());
                    let g = gy.data();
                    let mut dt = vec![0.0; 9 * n];
                    let mut dl = vec![0.0; 27];
                    for c in 0..3 {
                        let gp = &g[c * n..(c + 1) * n];
                        for j in 0..9 {
                            let tp = &vt[j * n..(j + 1) * n];
                            dl[c * 9 + j] = gp.iter().zip(tp).map(|(a, b)| a * b).sum();
                            let lv = vl[c * 9 + j];
                            for (d, gv) in dt[j * n..(j + 1) * n].iter_mut().zip(gp) {
                                *d += gv * lv;
                            }
                        }
                    }
                    acc(&mut grads, *t, like(*t, dt));
                    acc(&mut grads, *l, like(*l, dl));
                }
                Op::Sum(x) => {
                    let g = gy.item();
                    acc(&mut grads, *x, Tensor::filled(val(*x).shape(), g));
                }
                Op::Mse { a, b, mask, count } | Op::L1 { a, b, mask, count } => {
                    let squared = matches!(node.op, Op::Mse { .. });
                    let k = gy.item() / count;
                    let hw = mask.as_ref().map_or(1, |m| m.len());
                    let d: Vec<f64> = val(*a)
                        .data()
                        .iter()
                        .zip(val(*b).data())
                        .enumerate()
                        .map(|(i, (x, y))| {
                            let m = mask.as_ref().map_or(1.0, |m| m[i % hw]);
                            let diff = x - y;
                            let dd = if squared {
                                2.0 * diff
                            } else {
                                diff.signum() * (diff != 0.0) as u8 as f64
                            };
                            k * m * dd
                        })
                        .collect();
                    acc(&mut grads, *b, like(*b, d.iter().map(|v| -v).collect()));
                    acc(&mut grads, *a, like(*a, d));
                }
                Op::Focal {
                    p,
                    target,
                    mask,
                    params,
                    count,
                } => {
                    let k = gy.item() / count;
                    let d = val(*p)
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let m = mask.as_ref().map_or(1.0, |m| m[i]);
                            if m == 0.0 {
                                0.0
                            } else {
                                k * m * focal_term(v, target[i], *params).1
                            }
                        })
                        .collect();
                    acc(&mut grads, *p, like(*p, d));
                }
                Op::Sf { a, b, bank } => {
                    let d: Vec<f64> = val(*a).data().iter().zip(val(*b).data()).map(|(x, y)| x - y).collect();
                    let (c, h, w) = val(*a).chw().unwrap();
                    let (_, g) = bank.energy(&d, c, h, w, true);
                    let g: Vec<f64> = g.unwrap().into_iter().map(|v| v * gy.item()).collect();
                    acc(&mut grads, *b, like(*b, g.iter().map(|v| -v).collect()));
                    acc(&mut grads, *a, like(*a, g));
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((i, p)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            params,
        })
    }
}
