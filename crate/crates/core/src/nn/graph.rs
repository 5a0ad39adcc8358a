//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! is a valid topological order. The sweep releases each node's value and
//! gradient as soon as it has been propagated, which keeps peak memory close
//! to the forward activations alone.

use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<F>,
        inv_std: Vec<F>,
        /// Batch statistics (true) or frozen running statistics (false).
        batch_stats: bool,
    },
    Mish(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleChannels {
        x: Var,
        gate: Var,
    },
    ScaleSpatial {
        x: Var,
        gate: Var,
    },
    GlobalAvgPool(Var),
    GlobalMaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    ChannelMean(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<u32>,
    },
    Concat(Vec<Var>),
    SliceBatch {
        x: Var,
        start: usize,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2(Var),
}

struct Node<F> {
    value: Option<Tensor<F>>,
    shape: [usize; 4],
    grad: Option<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Biased variance used for normalization.
    pub var: Vec<F>,
    /// Elements reduced per channel.
    pub count: usize,
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        let shape = value.shape();
        self.nodes.push(Node {
            value: Some(value),
            shape,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Value of a node. Panics if the backward sweep already released it.
    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("node value released by backward")
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<F>> {
        self.nodes[v.0].grad.take()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x) || self.rg(w) || b.map(|b| self.rg(b)).unwrap_or(false);
        self.push(out, Op::Conv { x, w, b, geom }, rg)
    }

    /// Batch normalization over (N, H, W) with batch statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> (Var, BatchStats<F>) {
        let xv = self.value(x);
        let [n, c, _, _] = xv.shape();
        let plane = xv.plane();
        let count = n * plane;
        let cnt = F::from_usize(count).unwrap();
        let mut mean = vec![F::zero(); c];
        let mut var = vec![F::zero(); c];
        for ch in 0..c {
            let mut s = F::zero();
            for s_ in 0..n {
                let off = (s_ * c + ch) * plane;
                s += xv.data()[off..off + plane].iter().copied().sum::<F>();
            }
            let m = s / cnt;
            let mut q = F::zero();
            for s_ in 0..n {
                let off = (s_ * c + ch) * plane;
                for &v in &xv.data()[off..off + plane] {
                    let d = v - m;
                    q += d * d;
                }
            }
            mean[ch] = m;
            var[ch] = q / cnt;
        }
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let stats = BatchStats {
            mean: mean.clone(),
            var,
            count,
        };
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats: true,
            },
            rg,
        );
        (v, stats)
    }

    /// Batch normalization with frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
        eps: F,
    ) -> Var {
        let mean = running_mean.to_vec();
        let inv_std: Vec<F> = running_var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats: false,
            },
            rg,
        )
    }

    fn bn_apply(&self, x: Var, gamma: Var, beta: Var, mean: &[F], inv_std: &[F]) -> Tensor<F> {
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let [n, c, _, _] = xv.shape();
        let plane = xv.plane();
        let mut out = xv.clone();
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                let scale = g[ch] * inv_std[ch];
                let shift = b[ch] - mean[ch] * scale;
                for v in &mut out.data_mut()[off..off + plane] {
                    *v = *v * scale + shift;
                }
            }
        }
        out
    }

    fn unary(&mut self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn mish(&mut self, x: Var) -> Var {
        self.unary(x, kernels::mish, Op::Mish(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(F::zero()), Op::Relu(x))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(av.shape(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x [N, C, H, W] · gate [N, C, 1, 1]`.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Var {
        let (xv, gv) = (self.value(x), self.value(gate));
        let [n, c, _, _] = xv.shape();
        assert_eq!(gv.shape(), [n, c, 1, 1], "channel gate shape");
        let plane = xv.plane();
        let mut out = xv.clone();
        for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let g = gv.data()[k];
            for v in chunk {
                *v *= g;
            }
        }
        let rg = self.rg(x) || self.rg(gate);
        self.push(out, Op::ScaleChannels { x, gate }, rg)
    }

    /// `x [N, C, H, W] · gate [N, 1, H, W]`.
    pub fn scale_spatial(&mut self, x: Var, gate: Var) -> Var {
        let (xv, gv) = (self.value(x), self.value(gate));
        let [n, c, h, w] = xv.shape();
        assert_eq!(gv.shape(), [n, 1, h, w], "spatial gate shape");
        let plane = h * w;
        let mut out = xv.clone();
        for s in 0..n {
            let g = gv.sample(s);
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for (v, &gg) in out.data_mut()[off..off + plane].iter_mut().zip(g) {
                    *v *= gg;
                }
            }
        }
        let rg = self.rg(x) || self.rg(gate);
        self.push(out, Op::ScaleSpatial { x, gate }, rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, _, _] = xv.shape();
        let plane = xv.plane();
        let inv = F::one() / F::from_usize(plane).unwrap();
        let data = xv.data().chunks(plane).map(|p| p.iter().copied().sum::<F>() * inv).collect();
        let out = Tensor::from_vec([n, c, 1, 1], data);
        let rg = self.rg(x);
        self.push(out, Op::GlobalAvgPool(x), rg)
    }

    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, _, _] = xv.shape();
        let plane = xv.plane();
        let mut data = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for p in xv.data().chunks(plane) {
            let (mut bi, mut bv) = (0usize, p[0]);
            for (i, &v) in p.iter().enumerate().skip(1) {
                if v > bv {
                    bv = v;
                    bi = i;
                }
            }
            data.push(bv);
            argmax.push(bi as u32);
        }
        let out = Tensor::from_vec([n, c, 1, 1], data);
        let rg = self.rg(x);
        self.push(out, Op::GlobalMaxPool { x, argmax }, rg)
    }

    /// Mean over channels: `[N, C, H, W] -> [N, 1, H, W]`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let plane = h * w;
        let inv = F::one() / F::from_usize(c).unwrap();
        let mut out = Tensor::zeros([n, 1, h, w]);
        for s in 0..n {
            let src = xv.sample(s);
            let dst = out.sample_mut(s);
            for ch in 0..c {
                for (d, &v) in dst.iter_mut().zip(&src[ch * plane..(ch + 1) * plane]) {
                    *d += v;
                }
            }
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::ChannelMean(x), rg)
    }

    /// Max over channels, keeping the winning channel per pixel.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let plane = h * w;
        let mut out = Tensor::zeros([n, 1, h, w]);
        let mut argmax = vec![0u32; n * plane];
        for s in 0..n {
            let src = xv.sample(s);
            let dst = out.sample_mut(s);
            dst.copy_from_slice(&src[..plane]);
            let am = &mut argmax[s * plane..(s + 1) * plane];
            for ch in 1..c {
                for (p, &v) in src[ch * plane..(ch + 1) * plane].iter().enumerate() {
                    if v > dst[p] {
                        dst[p] = v;
                        am[p] = ch as u32;
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::ChannelMax { x, argmax }, rg)
    }

    /// Concatenation along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.value(parts[0]).shape();
        let (n, h, w) = (first[0], first[2], first[3]);
        let plane = h * w;
        let total_c: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Tensor::zeros([n, total_c, h, w]);
        for s in 0..n {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!((pv.n(), pv.h(), pv.w()), (n, h, w), "concat shape");
                let len = pv.c() * plane;
                out.sample_mut(s)[off..off + len].copy_from_slice(pv.sample(s));
                off += len;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_batch(start, len);
        let rg = self.rg(x);
        self.push(out, Op::SliceBatch { x, start }, rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        assert!(start + len <= c, "channel slice out of range");
        let plane = h * w;
        let mut out = Tensor::zeros([n, len, h, w]);
        for s in 0..n {
            out.sample_mut(s)
                .copy_from_slice(&xv.sample(s)[start * plane..(start + len) * plane]);
        }
        let rg = self.rg(x);
        self.push(out, Op::SliceChannels { x, start }, rg)
    }

    pub fn max_pool_3x3_s2(&mut self, x: Var) -> Var {
        let (out, argmax) = kernels::max_pool_3x3_s2(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::MaxPool { x, argmax }, rg)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = kernels::upsample2(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Upsample2(x), rg)
    }

    /// Backpropagates `seed` (the gradient of the objective with respect to
    /// `root`) through the tape. Leaf gradients remain available through
    /// [`Graph::grad`]; intermediate values are released.
    pub fn backward(&mut self, root: Var, seed: Tensor<F>) {
        assert_eq!(seed.shape(), self.shape(root), "seed gradient shape");
        self.nodes[root.0].grad = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                self.nodes[i].value = None;
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let contributions = self.propagate(i, &op, g);
            for (v, t) in contributions {
                self.accumulate(v, t);
            }
            self.nodes[i].value = None;
        }
    }

    fn accumulate(&mut self, v: Var, g: Tensor<F>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    fn propagate(&self, i: usize, op: &Op<F>, g: Tensor<F>) -> Vec<(Var, Tensor<F>)> {
        let mut out = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let (need_dx, need_dw) = (self.rg(*x), self.rg(*w));
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.value(*x), self.value(*w), &g, *geom, need_dx, need_dw);
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if need_dw {
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let xv = self.value(*x);
                let gam = self.value(*gamma).data();
                let [n, c, _, _] = xv.shape();
                let plane = xv.plane();
                let m = F::from_usize(n * plane).unwrap();
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * plane;
                        let xs = &xv.data()[off..off + plane];
                        let gs = &g.data()[off..off + plane];
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        let mut sg = F::zero();
                        let mut sgx = F::zero();
                        for (&xx, &gg) in xs.iter().zip(gs) {
                            sg += gg;
                            sgx += gg * (xx - mu) * is;
                        }
                        dbeta[ch] += sg;
                        dgamma[ch] += sgx;
                    }
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            let xs = &xv.data()[off..off + plane];
                            let gs = &g.data()[off..off + plane];
                            let d = &mut dx.data_mut()[off..off + plane];
                            let (mu, is) = (mean[ch], inv_std[ch]);
                            let k = gam[ch] * is;
                            if *batch_stats {
                                let mean_g = dbeta[ch] / m;
                                let mean_gx = dgamma[ch] / m;
                                for ((dd, &xx), &gg) in d.iter_mut().zip(xs).zip(gs) {
                                    let xhat = (xx - mu) * is;
                                    *dd = k * (gg - mean_g - xhat * mean_gx);
                                }
                            } else {
                                for (dd, &gg) in d.iter_mut().zip(gs) {
                                    *dd = k * gg;
                                }
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                out.push((*gamma, Tensor::from_vec([1, c, 1, 1], dgamma)));
                out.push((*beta, Tensor::from_vec([1, c, 1, 1], dbeta)));
            }
            Op::Mish(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gg)| gg * kernels::mish_grad(v))
                    .collect();
                out.push((*x, Tensor::from_vec(xv.shape(), data)));
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.as_ref().unwrap();
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gg)| gg * s * (F::one() - s))
                    .collect();
                out.push((*x, Tensor::from_vec(y.shape(), data)));
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.as_ref().unwrap();
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&t, &gg)| gg * (F::one() - t * t))
                    .collect();
                out.push((*x, Tensor::from_vec(y.shape(), data)));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gg)| if v > F::zero() { gg } else { F::zero() })
                    .collect();
                out.push((*x, Tensor::from_vec(xv.shape(), data)));
            }
            Op::Add(a, b) => {
                if self.rg(*a) && self.rg(*b) {
                    out.push((*a, g.clone()));
                }
                if self.rg(*b) {
                    out.push((*b, g));
                } else {
                    out.push((*a, g));
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*b) {
                    out.push((*b, g.map(|v| -v)));
                }
                out.push((*a, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&gg, &y)| gg * y).collect();
                    out.push((*a, Tensor::from_vec(g.shape(), d)));
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&gg, &x)| gg * x).collect();
                    out.push((*b, Tensor::from_vec(g.shape(), d)));
                }
            }
            Op::ScaleChannels { x, gate } => {
                let (xv, gv) = (self.value(*x), self.value(*gate));
                let plane = xv.plane();
                if self.rg(*gate) {
                    let d = g
                        .data()
                        .chunks(plane)
                        .zip(xv.data().chunks(plane))
                        .map(|(gg, xx)| gg.iter().zip(xx).map(|(&a, &b)| a * b).sum::<F>())
                        .collect();
                    out.push((*gate, Tensor::from_vec(gv.shape(), d)));
                }
                if self.rg(*x) {
                    let mut dx = g;
                    for (k, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
                        let s = gv.data()[k];
                        for v in chunk {
                            *v *= s;
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::ScaleSpatial { x, gate } => {
                let (xv, gv) = (self.value(*x), self.value(*gate));
                let [n, c, h, w] = xv.shape();
                let plane = h * w;
                if self.rg(*gate) {
                    let mut dg = Tensor::zeros(gv.shape());
                    for s in 0..n {
                        let dst = dg.sample_mut(s);
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            for ((d, &gg), &xx) in dst
                                .iter_mut()
                                .zip(&g.data()[off..off + plane])
                                .zip(&xv.data()[off..off + plane])
                            {
                                *d += gg * xx;
                            }
                        }
                    }
                    out.push((*gate, dg));
                }
                if self.rg(*x) {
                    let mut dx = g;
                    for s in 0..n {
                        let gs = gv.sample(s);
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            for (v, &gg) in dx.data_mut()[off..off + plane].iter_mut().zip(gs) {
                                *v *= gg;
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.shape(*x);
                let plane = shape[2] * shape[3];
                let inv = F::one() / F::from_usize(plane).unwrap();
                let mut dx = Tensor::zeros(shape);
                for (k, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
                    chunk.fill(g.data()[k] * inv);
                }
                out.push((*x, dx));
            }
            Op::GlobalMaxPool { x, argmax } => {
                let shape = self.shape(*x);
                let plane = shape[2] * shape[3];
                let mut dx = Tensor::zeros(shape);
                for (k, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
                    chunk[argmax[k] as usize] = g.data()[k];
                }
                out.push((*x, dx));
            }
            Op::ChannelMean(x) => {
                let shape = self.shape(*x);
                let [n, c, h, w] = shape;
                let plane = h * w;
                let inv = F::one() / F::from_usize(c).unwrap();
                let mut dx = Tensor::zeros(shape);
                for s in 0..n {
                    let gs = g.sample(s);
                    let dst = dx.sample_mut(s);
                    for ch in 0..c {
                        for (d, &gg) in dst[ch * plane..(ch + 1) * plane].iter_mut().zip(gs) {
                            *d = gg * inv;
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::ChannelMax { x, argmax } => {
                let shape = self.shape(*x);
                let [n, _, h, w] = shape;
                let plane = h * w;
                let mut dx = Tensor::zeros(shape);
                for s in 0..n {
                    let gs = g.sample(s);
                    let am = &argmax[s * plane..(s + 1) * plane];
                    let dst = dx.sample_mut(s);
                    for p in 0..plane {
                        dst[am[p] as usize * plane + p] = gs[p];
                    }
                }
                out.push((*x, dx));
            }
            Op::Concat(parts) => {
                let [n, _, h, w] = g.shape();
                let plane = h * w;
                let mut off = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.rg(p) {
                        let mut d = Tensor::zeros([n, c, h, w]);
                        for s in 0..n {
                            d.sample_mut(s)
                                .copy_from_slice(&g.sample(s)[off..off + c * plane]);
                        }
                        out.push((p, d));
                    }
                    off += c * plane;
                }
            }
            Op::SliceBatch { x, start } => {
                let shape = self.shape(*x);
                let mut dx = Tensor::zeros(shape);
                let s = g.sample_len();
                dx.data_mut()[start * s..start * s + g.numel()].copy_from_slice(g.data());
                out.push((*x, dx));
            }
            Op::SliceChannels { x, start } => {
                let shape = self.shape(*x);
                let [n, _, h, w] = shape;
                let plane = h * w;
                let len = g.c();
                let mut dx = Tensor::zeros(shape);
                for s in 0..n {
                    dx.sample_mut(s)[start * plane..(start + len) * plane].copy_from_slice(g.sample(s));
                }
                out.push((*x, dx));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, kernels::max_pool_backward(&g, argmax, self.shape(*x))));
            }
            Op::Upsample2(x) => {
                out.push((*x, kernels::upsample2_backward(&g)));
            }
        }
        out
    }
}
