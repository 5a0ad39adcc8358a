//! Raw tensor kernels shared by the autograd graph and the inference path.

use super::tensor::{gemm, MatLayout, Real, Tensor};

/// Stride, zero padding and dilation of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const POINTWISE: Self = Self {
        stride: 1,
        pad: 0,
        dilation: 1,
    };

    /// Size-preserving geometry for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            pad: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    pub fn strided(kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            pad: (kernel - 1) / 2,
            dilation: 1,
        }
    }

    pub fn out_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.pad;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn l(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom == ConvGeom::POINTWISE
    }
}

fn conv_dims<F: Real>(x: &Tensor<F>, w: &Tensor<F>, geom: ConvGeom) -> ConvDims {
    let [_, c, h, wd] = x.shape();
    let [_, wc, kh, kw] = w.shape();
    assert_eq!(c, wc, "conv input channels {c} vs kernel {wc}");
    let ho = geom
        .out_size(h, kh)
        .unwrap_or_else(|| panic!("conv kernel {kh} does not fit height {h} with {geom:?}"));
    let wo = geom
        .out_size(wd, kw)
        .unwrap_or_else(|| panic!("conv kernel {kw} does not fit width {wd} with {geom:?}"));
    ConvDims {
        c,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
        geom,
    }
}

/// Unfolds one sample `[C, H, W]` into columns `[C·KH·KW, Ho·Wo]`.
fn im2col<F: Real>(x: &[F], d: &ConvDims, cols: &mut [F]) {
    let (s, p, dil) = (d.geom.stride, d.geom.pad as isize, d.geom.dilation);
    let l = d.l();
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let out = &mut cols[row * l..(row + 1) * l];
                for oh in 0..d.ho {
                    let ih = (oh * s) as isize - p + (ki * dil) as isize;
                    let dst = &mut out[oh * d.wo..(oh + 1) * d.wo];
                    if ih < 0 || ih >= d.h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                    let off = (kj * dil) as isize - p;
                    if s == 1 {
                        // contiguous run, clipped at both ends
                        let lo = (-off).clamp(0, d.wo as isize) as usize;
                        let hi = (d.w as isize - off).clamp(0, d.wo as isize) as usize;
                        dst[..lo].fill(F::zero());
                        if hi > lo {
                            let a = (lo as isize + off) as usize;
                            dst[lo..hi].copy_from_slice(&src[a..a + (hi - lo)]);
                        }
                        dst[hi.max(lo)..].fill(F::zero());
                    } else {
                        for (ow, v) in dst.iter_mut().enumerate() {
                            let iw = (ow * s) as isize + off;
                            *v = if iw < 0 || iw >= d.w as isize {
                                F::zero()
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[C, H, W]`.
fn col2im<F: Real>(cols: &[F], d: &ConvDims, x: &mut [F]) {
    let (s, p, dil) = (d.geom.stride, d.geom.pad as isize, d.geom.dilation);
    let l = d.l();
    for c in 0..d.c {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src_row = &cols[row * l..(row + 1) * l];
                for oh in 0..d.ho {
                    let ih = (oh * s) as isize - p + (ki * dil) as isize;
                    if ih < 0 || ih >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                    let src = &src_row[oh * d.wo..(oh + 1) * d.wo];
                    let off = (kj * dil) as isize - p;
                    if s == 1 {
                        let lo = (-off).clamp(0, d.wo as isize) as usize;
                        let hi = (d.w as isize - off).clamp(0, d.wo as isize) as usize;
                        if hi > lo {
                            let a = (lo as isize + off) as usize;
                            for (o, &g) in dst[a..a + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                *o += g;
                            }
                        }
                        continue;
                    }
                    for (ow, &g) in src.iter().enumerate() {
                        let iw = (ow * s) as isize + off;
                        if iw >= 0 && iw < d.w as isize {
                            dst[iw as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Contiguous runs of a stride-1 convolution: for every input channel,
/// kernel tap and output row, the clipped span where the tap lands inside
/// the input. Calls `f(channel, tap, input_offset, output_offset, len)`
/// with offsets into one sample's input plane stack and output plane.
fn for_each_run(d: &ConvDims, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    debug_assert_eq!(d.geom.stride, 1);
    let (p, dil) = (d.geom.pad as isize, d.geom.dilation);
    for c in 0..d.c {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let tap = ki * d.kw + kj;
                let off = (kj * dil) as isize - p;
                let lo = (-off).clamp(0, d.wo as isize) as usize;
                let hi = (d.w as isize - off).clamp(0, d.wo as isize) as usize;
                if hi <= lo {
                    continue;
                }
                for oh in 0..d.ho {
                    let ih = oh as isize - p + (ki * dil) as isize;
                    if ih < 0 || ih >= d.h as isize {
                        continue;
                    }
                    let src = c * d.h * d.w + ih as usize * d.w + (lo as isize + off) as usize;
                    f(c, tap, src, oh * d.wo + lo, hi - lo);
                }
            }
        }
    }
}

/// Single-output-channel stride-1 convolutions skip the column buffer and
/// accumulate shifted rows directly; the GEMM would degenerate to a
/// matrix-vector product there.
fn direct_ok(d: &ConvDims, o: usize) -> bool {
    o == 1 && d.geom.stride == 1 && !d.pointwise()
}

fn direct_forward<F: Real>(xs: &[F], w: &[F], d: &ConvDims, ys: &mut [F]) {
    let taps = d.kh * d.kw;
    for_each_run(d, |c, tap, si, oi, len| {
        let k = w[c * taps + tap];
        for (y, &x) in ys[oi..oi + len].iter_mut().zip(&xs[si..si + len]) {
            *y += k * x;
        }
    });
}

fn direct_backward<F: Real>(xs: &[F], w: &[F], dys: &[F], d: &ConvDims, dw: Option<&mut [F]>, dx: Option<&mut [F]>) {
    let taps = d.kh * d.kw;
    if let Some(dw) = dw {
        for_each_run(d, |c, tap, si, oi, len| {
            let dot: F = dys[oi..oi + len].iter().zip(&xs[si..si + len]).map(|(&g, &x)| g * x).sum();
            dw[c * taps + tap] += dot;
        });
    }
    if let Some(dx) = dx {
        for_each_run(d, |c, tap, si, oi, len| {
            let k = w[c * taps + tap];
            for (g, &dy) in dx[si..si + len].iter_mut().zip(&dys[oi..oi + len]) {
                *g += k * dy;
            }
        });
    }
}

/// Cross-correlation of `x [N, C, H, W]` with `w [O, C, KH, KW]` plus an
/// optional per-channel bias `[1, O, 1, 1]`.
pub fn conv2d_forward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    geom: ConvGeom,
) -> Tensor<F> {
    let d = conv_dims(x, w, geom);
    let o = w.n();
    let n = x.n();
    let (k, l) = (d.k(), d.l());
    let mut out = Tensor::zeros([n, o, d.ho, d.wo]);
    let direct = direct_ok(&d, o);
    let mut cols = if d.pointwise() || direct {
        Vec::new()
    } else {
        vec![F::zero(); k * l]
    };
    for s in 0..n {
        let xs = x.sample(s);
        if direct {
            direct_forward(xs, w.data(), &d, out.sample_mut(s));
            if let Some(bias) = bias {
                let b = bias.data()[0];
                out.sample_mut(s).iter_mut().for_each(|v| *v += b);
            }
            continue;
        }
        let b: &[F] = if d.pointwise() {
            xs
        } else {
            im2col(xs, &d, &mut cols);
            &cols
        };
        gemm(
            F::one(),
            w.data(),
            MatLayout::row_major(o, k),
            b,
            MatLayout::row_major(k, l),
            F::zero(),
            out.sample_mut(s),
            MatLayout::row_major(o, l),
        );
        if let Some(bias) = bias {
            let ys = out.sample_mut(s);
            for (oc, &bv) in bias.data().iter().enumerate() {
                for v in &mut ys[oc * l..(oc + 1) * l] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, kernel and bias.
pub fn conv2d_backward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dy: &Tensor<F>,
    geom: ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let d = conv_dims(x, w, geom);
    let o = w.n();
    let n = x.n();
    let (k, l) = (d.k(), d.l());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([1, o, 1, 1]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = if d.pointwise() || !need_dw {
        Vec::new()
    } else {
        vec![F::zero(); k * l]
    };
    let mut dcols = if need_dx && !d.pointwise() {
        vec![F::zero(); k * l]
    } else {
        Vec::new()
    };
    let direct = direct_ok(&d, o);
    for s in 0..n {
        let dys = dy.sample(s);
        for (oc, acc) in db.data_mut().iter_mut().enumerate() {
            *acc += dys[oc * l..(oc + 1) * l].iter().copied().sum::<F>();
        }
        if direct {
            let dws = need_dw.then_some(dw.data_mut());
            let dxs = dx.as_mut().map(|t| t.sample_mut(s));
            direct_backward(x.sample(s), w.data(), dys, &d, dws, dxs);
            continue;
        }
        if need_dw {
            let xs = x.sample(s);
            let b: &[F] = if d.pointwise() {
                xs
            } else {
                im2col(xs, &d, &mut cols);
                &cols
            };
            // dW[o, k] += dY[o, l] · cols[k, l]ᵀ
            gemm(
                F::one(),
                dys,
                MatLayout::row_major(o, l),
                b,
                MatLayout::transposed(k, l),
                F::one(),
                dw.data_mut(),
                MatLayout::row_major(o, k),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = dx.sample_mut(s);
            if d.pointwise() {
                gemm(
                    F::one(),
                    w.data(),
                    MatLayout::transposed(o, k),
                    dys,
                    MatLayout::row_major(o, l),
                    F::zero(),
                    dxs,
                    MatLayout::row_major(k, l),
                );
            } else {
                gemm(
                    F::one(),
                    w.data(),
                    MatLayout::transposed(o, k),
                    dys,
                    MatLayout::row_major(o, l),
                    F::zero(),
                    &mut dcols,
                    MatLayout::row_major(k, l),
                );
                col2im(&dcols, &d, dxs);
            }
        }
    }
    (dx, dw, db)
}

/// 3×3 max pooling with stride 2 and one cell of (ignored) padding.
/// Returns the output and the flat in-plane argmax of each output cell.
pub fn max_pool_3x3_s2<F: Real>(x: &Tensor<F>) -> (Tensor<F>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let plane_in = h * w;
    let plane_out = ho * wo;
    for nc in 0..n * c {
        let src = &x.data()[nc * plane_in..(nc + 1) * plane_in];
        let dst = &mut out.data_mut()[nc * plane_out..(nc + 1) * plane_out];
        let am = &mut arg[nc * plane_out..(nc + 1) * plane_out];
        for oh in 0..ho {
            for ow in 0..wo {
                let (best, best_idx) = if oh >= 1 && ow >= 1 && 2 * oh + 1 < h && 2 * ow + 1 < w {
                    // interior window: no bounds checks, row-major scan order
                    let base = (2 * oh - 1) * w + 2 * ow - 1;
                    let mut best = src[base];
                    let mut best_idx = base;
                    for di in 0..3 {
                        let row = base + di * w;
                        for idx in row..row + 3 {
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    (best, best_idx)
                } else {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0usize;
                    for di in 0..3 {
                        let ih = (2 * oh + di) as isize - 1;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for dj in 0..3 {
                            let iw = (2 * ow + dj) as isize - 1;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let idx = ih as usize * w + iw as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    (best, best_idx)
                };
                dst[oh * wo + ow] = best;
                am[oh * wo + ow] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward<F: Real>(dy: &Tensor<F>, argmax: &[u32], input_shape: [usize; 4]) -> Tensor<F> {
    let mut dx = Tensor::zeros(input_shape);
    let plane_in = input_shape[2] * input_shape[3];
    let plane_out = dy.plane();
    for nc in 0..input_shape[0] * input_shape[1] {
        let g = &dy.data()[nc * plane_out..(nc + 1) * plane_out];
        let a = &argmax[nc * plane_out..(nc + 1) * plane_out];
        let dst = &mut dx.data_mut()[nc * plane_in..(nc + 1) * plane_in];
        for (&gv, &idx) in g.iter().zip(a) {
            dst[idx as usize] += gv;
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let (wo, plane_out) = (2 * w, 4 * h * w);
    for nc in 0..n * c {
        let src = &x.data()[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out.data_mut()[nc * plane_out..(nc + 1) * plane_out];
        for i in 0..2 * h {
            for j in 0..wo {
                dst[i * wo + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<F: Real>(dy: &Tensor<F>) -> Tensor<F> {
    let [n, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for nc in 0..n * c {
        let src = &dy.data()[nc * h2 * w2..(nc + 1) * h2 * w2];
        let dst = &mut dx.data_mut()[nc * h * w..(nc + 1) * h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                dst[(i / 2) * w + j / 2] += src[i * w2 + j];
            }
        }
    }
    dx
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    // log(1 + e^x) without overflow
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// `tanh(softplus(x))` and `sigmoid(x)` from a single exponential, using
/// `tanh(ln(1 + e)) = n / (n + 2)` with `n = e (e + 2)`.
#[inline]
fn mish_parts<F: Real>(x: F) -> (F, F) {
    let two = F::one() + F::one();
    // beyond 20 both factors equal 1 to working precision
    let xc = x.min(F::of(20.0));
    let e = xc.exp_fast();
    let n = e * (e + two);
    let t = n / (n + two);
    let sig = e / (F::one() + e);
    if x > F::of(20.0) {
        (F::one(), F::one())
    } else {
        (t, sig)
    }
}

#[inline]
pub fn mish<F: Real>(x: F) -> F {
    x * mish_parts(x).0
}

#[inline]
pub fn mish_grad<F: Real>(x: F) -> F {
    let (t, sig) = mish_parts(x);
    t + x * (F::one() - t * t) * sig
}
