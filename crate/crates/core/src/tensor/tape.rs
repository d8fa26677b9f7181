use std::hash::{DefaultHasher, Hash, Hasher};

use super::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// Per-cell gradient route of the spatial broadcast-add.
#[derive(Debug)]
struct ExciteRoute {
    argmax: Vec<usize>,
    coeff: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Concat(Var, Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Vec<f64>,
    },
    Bce {
        pred: Var,
        target: Vec<f64>,
    },
    SpatialAdd {
        input: Var,
        route: Option<ExciteRoute>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order and every op only refers to
/// earlier nodes, so a single reverse sweep is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Consumes the tape and returns the tensor behind `v`.
    pub fn into_value(mut self, v: Var) -> Tensor {
        self.nodes.swap_remove(v.0).value
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite output from {op:?}");
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 2-D cross-correlation with zero padding. `input` is C×H×W, `kernels`
    /// O×C×K×K and `bias` has O values.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let x = self.value(input);
        let (c, h, w) = x.chw()?;
        let kt = self.value(kernels);
        let [o, kc, k, k2] = kt.shape()[..] else {
            return Err(Error::shape(
                "conv2d",
                format!("kernels must be O×C×K×K, got {:?}", kt.shape()),
            ));
        };
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, kernels expect {kc}"),
            ));
        }
        if k != k2 || k == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be square, got {k}×{k2}")));
        }
        if self.value(bias).len() != o {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} values for {o} output channels", self.value(bias).len()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} exceeds padded input {}×{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            c,
            h,
            w,
            o,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(x.data(), &geom);
        let p = ho * wo;
        let mut out = Vec::with_capacity(o * p);
        for &b in self.value(bias).data() {
            out.extend(std::iter::repeat_n(b, p));
        }
        gemm::matmul_acc(kt.data(), &cols, &mut out, o, c * k * k, p);
        let value = Tensor::new([o, ho, wo], out)?;
        let rg = self.needs(&[input, kernels, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// 2×2 max pool, stride 2. Odd extents keep the partial window.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = t.chw()?;
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let src = t.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        let y = 2 * oy + dy;
                        if y >= h {
                            continue;
                        }
                        for dx in 0..2 {
                            let xx = 2 * ox + dx;
                            if xx >= w {
                                continue;
                            }
                            let idx = base + y * w + xx;
                            if best == usize::MAX || src[idx] > best_v {
                                best = idx;
                                best_v = src[idx];
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new([c, ho, wo], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MaxPool2 { input: x, argmax }, rg))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = t.chw()?;
        let (h2, w2) = (2 * h, 2 * w);
        let src = t.data();
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let srow = &src[ch * h * w + (y / 2) * w..][..w];
                let drow = &mut out[ch * h2 * w2 + y * w2..][..w2];
                for (xx, d) in drow.iter_mut().enumerate() {
                    *d = srow[xx / 2];
                }
            }
        }
        let value = Tensor::new([c, h2, w2], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Upsample2(x), rg))
    }

    /// Stacks `a` then `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ca, ha, wa) = ta.chw()?;
        let (cb, hb, wb) = tb.chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("spatial extents {ha}×{wa} and {hb}×{wb} differ"),
            ));
        }
        let mut out = Vec::with_capacity(ta.len() + tb.len());
        out.extend_from_slice(ta.data());
        out.extend_from_slice(tb.data());
        let value = Tensor::new([ca + cb, ha, wa], out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape(), out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `Σ wᵢ·xᵢ` against constant weights of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != weights.shape() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{:?} vs weights {:?}", t.shape(), weights.shape()),
            ));
        }
        let s = t.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input: x,
                weights: weights.data().to_vec(),
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy with predictions clamped to `[ε, 1−ε]`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(
                "bce_loss",
                format!("pred {:?} vs target {:?}", p.shape(), target.shape()),
            ));
        }
        if p.is_empty() {
            return Err(Error::shape("bce_loss", "empty prediction"));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let value = Tensor::scalar(total / p.len() as f64);
        let rg = self.needs(&[pred]);
        Ok(self.push(
            value,
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// `out(c,i,j) = x(c,i,j) + field(i,j)`.
    ///
    /// Cells where the field is exactly zero are copied untouched. With a
    /// route, the gradient of each cell's added term additionally flows to
    /// `argmax[cell]` scaled by `coeff[cell]`; `field` must then equal
    /// `coeff · x(argmax, cell)`.
    pub fn spatial_add(&mut self, x: Var, field: &[f64], route: Option<(Vec<usize>, Vec<f64>)>) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = t.chw()?;
        let hw = h * w;
        if field.len() != hw {
            return Err(Error::shape(
                "spatial_add",
                format!("field has {} cells, tensor is {h}×{w}", field.len()),
            ));
        }
        if let Some((argmax, coeff)) = &route {
            if argmax.len() != hw || coeff.len() != hw || argmax.iter().any(|&a| a >= c) {
                return Err(Error::shape("spatial_add", "malformed gradient route"));
            }
        }
        let mut out = t.data().to_vec();
        for ch in 0..c {
            for (o, &e) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(field) {
                if e != 0.0 {
                    *o += e;
                }
            }
        }
        let value = Tensor::new([c, h, w], out)?;
        let rg = self.needs(&[x]);
        let route = route.map(|(argmax, coeff)| ExciteRoute { argmax, coeff });
        Ok(self.push(value, Op::SpatialAdd { input: x, route }, rg))
    }

    /// Reverse sweep from a scalar `loss`, populating `grad` on every
    /// reachable differentiable tensor.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        self.nodes[loss.0].value.set_grad(vec![1.0])?;
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = node.value.grad() else { continue };
            backprop(before, &node.op, &node.value, g);
        }
        Ok(())
    }

    /// Hash of every data-dependent branch taken (relu signs, pool and
    /// excitation argmaxes). Two passes with equal signatures evaluated the
    /// same piecewise-smooth branch.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.value(*x).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                Op::SpatialAdd { route: Some(r), .. } => r.argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

const BCE_EPS: f64 = 1e-7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(nodes: &mut [Node], v: Var, contrib: Vec<f64>) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    node.value.accumulate_grad(contrib);
}

fn backprop(nodes: &mut [Node], op: &Op, out: &Tensor, g: &[f64]) {
    match op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            kernels,
            bias,
            geom,
            cols,
        } => {
            let ConvGeom { c, o, k, .. } = *geom;
            let p = geom.ho * geom.wo;
            let ckk = c * k * k;
            if nodes[bias.0].requires_grad {
                let gb = g.chunks_exact(p).map(|row| row.iter().sum()).collect();
                accumulate(nodes, *bias, gb);
            }
            if nodes[kernels.0].requires_grad {
                let mut gw = vec![0.0; o * ckk];
                gemm::matmul_nt_acc(g, cols, &mut gw, o, p, ckk);
                accumulate(nodes, *kernels, gw);
            }
            if nodes[input.0].requires_grad {
                let w = nodes[kernels.0].value.data();
                let mut wt = vec![0.0; ckk * o];
                for oo in 0..o {
                    for kk in 0..ckk {
                        wt[kk * o + oo] = w[oo * ckk + kk];
                    }
                }
                let mut gcols = vec![0.0; ckk * p];
                gemm::matmul_acc(&wt, g, &mut gcols, ckk, o, p);
                let gx = col2im(&gcols, geom);
                accumulate(nodes, *input, gx);
            }
        }
        Op::Relu(x) => {
            let gx = nodes[x.0]
                .value
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                .collect();
            accumulate(nodes, *x, gx);
        }
        Op::MaxPool2 { input, argmax } => {
            let mut gx = vec![0.0; nodes[input.0].value.len()];
            for (&a, &gi) in argmax.iter().zip(g) {
                gx[a] += gi;
            }
            accumulate(nodes, *input, gx);
        }
        Op::Upsample2(x) => {
            let (c, h, w) = nodes[x.0].value.chw().expect("rank 3");
            let w2 = 2 * w;
            let mut gx = vec![0.0; c * h * w];
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let base = ch * 4 * h * w + 2 * y * w2 + 2 * xx;
                        gx[ch * h * w + y * w + xx] = g[base] + g[base + 1] + g[base + w2] + g[base + w2 + 1];
                    }
                }
            }
            accumulate(nodes, *x, gx);
        }
        Op::Concat(a, b) => {
            let na = nodes[a.0].value.len();
            accumulate(nodes, *a, g[..na].to_vec());
            accumulate(nodes, *b, g[na..].to_vec());
        }
        Op::Sigmoid(x) => {
            let gx = out.data().iter().zip(g).map(|(&y, &gi)| gi * y * (1.0 - y)).collect();
            accumulate(nodes, *x, gx);
        }
        Op::Add(a, b) => {
            accumulate(nodes, *a, g.to_vec());
            accumulate(nodes, *b, g.to_vec());
        }
        Op::Scale(x, f) => {
            accumulate(nodes, *x, g.iter().map(|gi| gi * f).collect());
        }
        Op::Sum(x) => {
            let n = nodes[x.0].value.len();
            accumulate(nodes, *x, vec![g[0]; n]);
        }
        Op::WeightedSum { input, weights } => {
            accumulate(nodes, *input, weights.iter().map(|w| w * g[0]).collect());
        }
        Op::Bce { pred, target } => {
            let p = nodes[pred.0].value.data();
            let n = p.len() as f64;
            let gx = p
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                        return 0.0;
                    }
                    g[0] * ((p - t) / (p * (1.0 - p))) / n
                })
                .collect();
            accumulate(nodes, *pred, gx);
        }
        Op::SpatialAdd { input, route } => {
            let mut gx = g.to_vec();
            if let Some(r) = route {
                let hw = r.argmax.len();
                let c = g.len() / hw;
                for cell in 0..hw {
                    let coeff = r.coeff[cell];
                    if coeff == 0.0 {
                        continue;
                    }
                    let upstream: f64 = (0..c).map(|ch| g[ch * hw + cell]).sum();
                    gx[r.argmax[cell] * hw + cell] += coeff * upstream;
                }
            }
            accumulate(nodes, *input, gx);
        }
    }
}

fn im2col(x: &[f64], geom: &ConvGeom) -> Vec<f64> {
    let ConvGeom {
        c,
        h,
        w,
        k,
        stride,
        pad,
        ho,
        wo,
        ..
    } = *geom;
    let p = ho * wo;
    let mut cols = vec![0.0; c * k * k * p];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ch * k + ki) * k + kj) * p..][..p];
                for oy in 0..ho {
                    let y = (oy * stride + ki) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &x[ch * h * w + y as usize * w..][..w];
                    let dst = &mut row[oy * wo..][..wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let xx = (ox * stride + kj) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            *d = src[xx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], geom: &ConvGeom) -> Vec<f64> {
    let ConvGeom {
        c,
        h,
        w,
        k,
        stride,
        pad,
        ho,
        wo,
        ..
    } = *geom;
    let p = ho * wo;
    let mut x = vec![0.0; c * h * w];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ch * k + ki) * k + kj) * p..][..p];
                for oy in 0..ho {
                    let y = (oy * stride + ki) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut x[ch * h * w + y as usize * w..][..w];
                    for (ox, &v) in row[oy * wo..][..wo].iter().enumerate() {
                        let xx = (ox * stride + kj) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[xx as usize] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = tape.leaf(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.leaf(t(&[1], &[0.0]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn ones_kernel_with_padding_counts_neighbours() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([1, 3, 3], 1.0));
        let k = tape.leaf(Tensor::full([1, 1, 3, 3], 1.0));
        let b = tape.leaf(t(&[1], &[0.0]));
        let y = tape.conv2d(x, k, b, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([2, 4, 5], |i| i as f64 * 0.3 - 2.0));
        let k = tape.leaf(Tensor::zeros([3, 2, 3, 3]));
        let b = tape.leaf(t(&[3], &[0.5, -1.25, 2.0]));
        let y = tape.conv2d(x, k, b, 2, 1).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[3, 2, 3]);
        for (i, v) in out.data().iter().enumerate() {
            assert_eq!(*v, [0.5, -1.25, 2.0][i / 6]);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2, 3, 3]));
        let k = tape.leaf(Tensor::zeros([1, 3, 1, 1]));
        let b = tape.leaf(Tensor::zeros([1]));
        assert!(matches!(tape.conv2d(x, k, b, 1, 0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([1, 2, 2]));
        let k = tape.leaf(Tensor::zeros([1, 1, 5, 5]));
        let b = tape.leaf(Tensor::zeros([1]));
        assert!(tape.conv2d(x, k, b, 1, 1).is_err());
        assert!(tape.conv2d(x, k, b, 1, 2).is_ok());
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 2.0, 0.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0, 0.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn maxpool_routes_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2, 2], &[1., 2., 3., 4.]));
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0., 0., 0., 1.]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([1, 2, 2], 7.0));
        let y = tape.maxpool2(x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn maxpool_keeps_partial_windows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([1, 3, 3], |i| i as f64));
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[4., 5., 7., 8.]);
    }

    #[test]
    fn upsample_replicates_and_sums_back() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 1], &[5.0]));
        let y = tape.upsample2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0; 4]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_fn([2, 2, 3], |i| i as f64));
        let b = tape.leaf(Tensor::zeros([0, 2, 3]));
        let y = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(y), tape.value(a));
        let c = tape.leaf(Tensor::zeros([1, 3, 2]));
        assert!(tape.concat_channels(a, c).is_err());
    }

    #[test]
    fn sigmoid_at_zero_and_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!(sigmoid(-700.0).is_finite());
    }

    #[test]
    fn bce_closed_forms() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::full([2, 2], 1.0));
        let l = tape.bce_loss(p, &Tensor::full([2, 2], 1.0)).unwrap();
        let v = tape.value(l).item().unwrap();
        assert!(v > 0.0 && v <= 1e-6);

        let p = tape.leaf(Tensor::full([3], 0.5));
        let l = tape.bce_loss(p, &t(&[3], &[0.0, 1.0, 1.0])).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        assert!(tape.bce_loss(p, &Tensor::zeros([4])).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn linear_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([2, 3], |i| i as f64 - 2.5));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([2, 3], |i| i as f64 - 2.5));
        let y = tape.scale(x, 2.0);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0; 6]);
    }

    #[test]
    fn unreachable_and_constant_nodes_get_no_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([2], 1.0));
        let unused = tape.leaf(Tensor::full([2], 3.0));
        let c = tape.constant(Tensor::full([2], 2.0));
        let y = tape.add(x, c).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(unused).is_none());
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([2], 1.5));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }
}
