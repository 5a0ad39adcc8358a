//! The forecasting network: multi-scale encoder with reduction blocks, a
//! convolutional GRU over the encoded window, and an attention-refined
//! decoder with skip connections from the last input frame.
//!
//! Batched windows are laid out as `[B, T·C, H, W]` (frame-major channels).
//! Internally the frames are stacked time-major as `[T·B, C, H, W]` so the
//! encoder runs once over the whole window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{ParamId, ParamKind, ParamStore};
use crate::nn::{BatchStats, ConvGeom, Graph, Real, Tensor, Var};

pub const CHANNEL_NAMES: [&str; 4] = ["pressure", "time", "distance", "layout"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub window: usize,
    /// Stage widths `[c1, c2]` at full and half resolution.
    pub widths: [usize; 2],
    pub gru_width: usize,
    pub attention_ratio: usize,
    pub spatial_kernel: usize,
    pub use_multiscale: bool,
    pub use_gru: bool,
    pub use_encoder_decoder: bool,
    /// Input channels kept, in `[pressure, time, distance, layout]` order.
    /// Masked channels are zeroed before the first layer.
    pub channel_mask: [bool; 4],
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 4,
            window: 10,
            widths: [32, 64],
            gru_width: 64,
            attention_ratio: 8,
            spatial_kernel: 7,
            use_multiscale: true,
            use_gru: true,
            use_encoder_decoder: true,
            channel_mask: [true; 4],
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_channels != 4 {
            return bad(format!("input_channels must be 4, got {}", self.input_channels));
        }
        if self.window == 0 {
            return bad("window must be positive".into());
        }
        if self.widths.contains(&0) || self.gru_width == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.attention_ratio == 0 || self.widths.iter().any(|&w| w < self.attention_ratio) {
            return bad(format!(
                "stage widths {:?} must be at least the attention ratio {}",
                self.widths, self.attention_ratio
            ));
        }
        if self.use_multiscale && self.widths.iter().any(|&w| w < 3) {
            return bad("multi-scale stages need at least 3 channels".into());
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return bad("spatial attention kernel must be odd".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return bad("invalid batch-norm momentum or epsilon".into());
        }
        Ok(())
    }

    /// Checks that an `h × w` field fits the architecture.
    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        if self.use_encoder_decoder {
            if !h.is_multiple_of(4) || !w.is_multiple_of(4) {
                return Err(Error::Config(format!("spatial size {h}x{w} must be divisible by 4")));
            }
            // the dilated branches need at least a 5-cell span at H/2
            if h < 8 || w < 8 {
                return Err(Error::Config(format!("spatial size {h}x{w} is below the 8x8 minimum")));
            }
        } else if h == 0 || w == 0 {
            return Err(Error::Config("empty spatial size".into()));
        }
        Ok(())
    }
}

/// Pairs a tape with the parameter store it reads from.
pub struct Session<'a, F: Real> {
    pub graph: Graph<F>,
    store: &'a ParamStore<F>,
    vars: Vec<Option<Var>>,
    train: bool,
    grad: bool,
    bn_stats: Vec<(BatchNorm, BatchStats<F>)>,
}

impl<'a, F: Real> Session<'a, F> {
    /// `train` selects batch statistics in batch-norm layers; `grad` marks
    /// parameters as requiring gradients.
    pub fn new(store: &'a ParamStore<F>, train: bool, grad: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            vars: vec![None; store.len()],
            train,
            grad,
            bn_stats: Vec::new(),
        }
    }

    pub fn inference(store: &'a ParamStore<F>) -> Self {
        Self::new(store, false, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let rg = self.grad && self.store.get(id).kind.trainable();
        let v = self.graph.leaf(self.store.value(id).clone(), rg);
        self.vars[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.graph.leaf(t, false)
    }

    /// Gradients of every parameter touched by the graph. Call after
    /// [`Graph::backward`].
    pub fn param_grads(&mut self) -> Vec<(ParamId, Tensor<F>)> {
        let mut out = Vec::new();
        for (i, v) in self.vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = self.graph.take_grad(*v) {
                    out.push((ParamId(i), g));
                }
            }
        }
        out
    }

    /// Detaches the batch statistics of this pass so they can be folded into
    /// the store once the session no longer borrows it.
    pub fn into_stats(self) -> PendingStats<F> {
        PendingStats(self.bn_stats)
    }
}

/// Batch statistics captured by a training-mode pass.
pub struct PendingStats<F: Real>(Vec<(BatchNorm, BatchStats<F>)>);

impl<F: Real> PendingStats<F> {
    /// Folds the statistics into the running buffers with PyTorch's
    /// convention (unbiased variance).
    pub fn apply(self, store: &mut ParamStore<F>, momentum: f64) {
        let m = F::of(momentum);
        for (bn, st) in self.0 {
            let unbias = if st.count > 1 {
                F::of(st.count as f64 / (st.count as f64 - 1.0))
            } else {
                F::one()
            };
            for (r, &b) in store.value_mut(bn.mean).data_mut().iter_mut().zip(&st.mean) {
                *r = (F::one() - m) * *r + m * b;
            }
            for (r, &b) in store.value_mut(bn.var).data_mut().iter_mut().zip(&st.var) {
                *r = (F::one() - m) * *r + m * b * unbias;
            }
        }
    }
}

fn uniform_tensor<F: Real>(rng: &mut ChaCha8Rng, shape: [usize; 4], bound: f64) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::of(rng.gen_range(-bound..=bound)))
}

struct Builder<'a, F> {
    store: &'a mut ParamStore<F>,
    rng: &'a mut ChaCha8Rng,
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv {
    fn new<F: Real>(
        bd: &mut Builder<F>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let w = bd.store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            uniform_tensor(bd.rng, [cout, cin, k, k], bound),
        );
        let b = bias.then(|| bd.store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros([1, cout, 1, 1])));
        Self { w, b, geom }
    }

    pub fn apply<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        let w = s.param(self.w);
        let b = self.b.map(|b| s.param(b));
        s.graph.conv2d(x, w, b, self.geom)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    eps: f64,
}

impl BatchNorm {
    fn new<F: Real>(bd: &mut Builder<F>, name: &str, c: usize, eps: f64) -> Self {
        let shape = [1, c, 1, 1];
        Self {
            gamma: bd.store.add(format!("{name}.gamma"), ParamKind::BnScale, Tensor::full(shape, F::one())),
            beta: bd.store.add(format!("{name}.beta"), ParamKind::BnShift, Tensor::zeros(shape)),
            mean: bd.store.add(format!("{name}.running_mean"), ParamKind::RunningMean, Tensor::zeros(shape)),
            var: bd.store.add(format!("{name}.running_var"), ParamKind::RunningVar, Tensor::full(shape, F::one())),
            eps,
        }
    }

    pub fn apply<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        let g = s.param(self.gamma);
        let b = s.param(self.beta);
        let eps = F::of(self.eps);
        if s.train {
            let (y, st) = s.graph.batch_norm_train(x, g, b, eps);
            s.bn_stats.push((*self, st));
            y
        } else {
            let mean = s.store.value(self.mean).data().to_vec();
            let var = s.store.value(self.var).data().to_vec();
            s.graph.batch_norm_eval(x, g, b, &mean, &var, eps)
        }
    }
}

/// Channel attention followed by spatial attention.
#[derive(Clone, Debug)]
pub struct Cbam {
    pub fc1: Conv,
    pub fc2: Conv,
    pub spatial: Conv,
}

impl Cbam {
    fn new<F: Real>(bd: &mut Builder<F>, name: &str, c: usize, ratio: usize, kernel: usize) -> Self {
        let hidden = (c / ratio).max(1);
        Self {
            fc1: Conv::new(bd, &format!("{name}.fc1"), c, hidden, 1, ConvGeom::POINTWISE, true),
            fc2: Conv::new(bd, &format!("{name}.fc2"), hidden, c, 1, ConvGeom::POINTWISE, true),
            spatial: Conv::new(bd, &format!("{name}.spatial"), 2, 1, kernel, ConvGeom::same(kernel, 1), true),
        }
    }

    fn mlp<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        let h = self.fc1.apply(s, x);
        let h = s.graph.relu(h);
        self.fc2.apply(s, h)
    }

    /// Returns the refined features plus the channel and spatial gates.
    pub fn apply_with_gates<F: Real>(&self, s: &mut Session<F>, x: Var) -> (Var, Var, Var) {
        let avg = s.graph.global_avg_pool(x);
        let max = s.graph.global_max_pool(x);
        let a = self.mlp(s, avg);
        let m = self.mlp(s, max);
        let logits = s.graph.add(a, m);
        let cgate = s.graph.sigmoid(logits);
        let x1 = s.graph.scale_channels(x, cgate);
        let mean = s.graph.channel_mean(x1);
        let mx = s.graph.channel_max(x1);
        let pooled = s.graph.concat(&[mean, mx]);
        let sl = self.spatial.apply(s, pooled);
        let sgate = s.graph.sigmoid(sl);
        (s.graph.scale_spatial(x1, sgate), cgate, sgate)
    }

    pub fn apply<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        self.apply_with_gates(s, x).0
    }
}

/// Three parallel receptive-field branches fused by a 1×1 convolution.
///
/// The leading 1×1 convolutions of the branches share one input, so they
/// are stored as a single convolution whose output channels are split
/// between the branches.
#[derive(Clone, Debug)]
pub struct MultiScale {
    widths: [usize; 3],
    entry: Conv,
    b1: BatchNorm,
    b2: (Conv, BatchNorm),
    b3: (Conv, Conv, BatchNorm),
    fuse: Conv,
    cbam: Cbam,
}

/// Branch widths: equal thirds, remainder to the leading branches.
pub fn branch_widths(width: usize) -> [usize; 3] {
    let (q, r) = (width / 3, width % 3);
    [q + usize::from(r > 0), q + usize::from(r > 1), q]
}

impl MultiScale {
    fn new<F: Real>(bd: &mut Builder<F>, name: &str, cin: usize, width: usize, cfg: &ModelConfig) -> Self {
        let widths = branch_widths(width);
        let [w1, w2, w3] = widths;
        let pw = ConvGeom::POINTWISE;
        let eps = cfg.bn_eps;
        Self {
            widths,
            entry: Conv::new(bd, &format!("{name}.entry"), cin, width, 1, pw, false),
            b1: BatchNorm::new(bd, &format!("{name}.b1.bn"), w1, eps),
            b2: (
                Conv::new(bd, &format!("{name}.b2.dilated"), w2, w2, 3, ConvGeom::same(3, 2), false),
                BatchNorm::new(bd, &format!("{name}.b2.bn"), w2, eps),
            ),
            b3: (
                Conv::new(bd, &format!("{name}.b3.conv"), w3, w3, 3, ConvGeom::same(3, 1), false),
                Conv::new(bd, &format!("{name}.b3.dilated"), w3, w3, 3, ConvGeom::same(3, 2), false),
                BatchNorm::new(bd, &format!("{name}.b3.bn"), w3, eps),
            ),
            fuse: Conv::new(bd, &format!("{name}.fuse"), width, width, 1, pw, true),
            cbam: Cbam::new(bd, &format!("{name}.cbam"), width, cfg.attention_ratio, cfg.spatial_kernel),
        }
    }

    /// The three branch outputs before concatenation.
    pub fn branches<F: Real>(&self, s: &mut Session<F>, x: Var) -> [Var; 3] {
        let [w1, w2, w3] = self.widths;
        let e = self.entry.apply(s, x);
        let e1 = s.graph.slice_channels(e, 0, w1);
        let e2 = s.graph.slice_channels(e, w1, w2);
        let e3 = s.graph.slice_channels(e, w1 + w2, w3);
        let y1 = self.b1.apply(s, e1);
        let y2 = self.b2.0.apply(s, e2);
        let y2 = self.b2.1.apply(s, y2);
        let y3 = self.b3.0.apply(s, e3);
        let y3 = self.b3.1.apply(s, y3);
        let y3 = self.b3.2.apply(s, y3);
        [y1, y2, y3]
    }

    pub fn apply<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        let br = self.branches(s, x);
        let cat = s.graph.concat(&br);
        let f = self.fuse.apply(s, cat);
        let f = s.graph.mish(f);
        self.cbam.apply(s, f)
    }

    pub fn cbam(&self) -> &Cbam {
        &self.cbam
    }
}

/// 3×3 convolution, batch norm, Mish and attention.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    conv: Conv,
    bn: BatchNorm,
    cbam: Cbam,
}

impl ConvBlock {
    fn new<F: Real>(bd: &mut Builder<F>, name: &str, cin: usize, cout: usize, cfg: &ModelConfig) -> Self {
        Self {
            conv: Conv::new(bd, &format!("{name}.conv"), cin, cout, 3, ConvGeom::same(3, 1), false),
            bn: BatchNorm::new(bd, &format!("{name}.bn"), cout, cfg.bn_eps),
            cbam: Cbam::new(bd, &format!("{name}.cbam"), cout, cfg.attention_ratio, cfg.spatial_kernel),
        }
    }

    pub fn apply<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        let y = self.conv.apply(s, x);
        let y = self.bn.apply(s, y);
        let y = s.graph.mish(y);
        self.cbam.apply(s, y)
    }
}

#[derive(Clone, Debug)]
pub enum Stage {
    MultiScale(MultiScale),
    Plain(ConvBlock),
}

impl Stage {
    pub fn apply<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        match self {
            Stage::MultiScale(m) => m.apply(s, x),
            Stage::Plain(b) => b.apply(s, x),
        }
    }
}

/// Stride-2 reduction: max pool, conv branch and conv-1×1-1×1 branch,
/// summed element-wise. The two strided 3×3 convolutions read the same
/// input and are stored as one convolution with `2c` outputs.
#[derive(Clone, Debug)]
pub struct Reduction {
    channels: usize,
    entry: Conv,
    b2: BatchNorm,
    b3: (Conv, Conv, BatchNorm),
}

impl Reduction {
    fn new<F: Real>(bd: &mut Builder<F>, name: &str, c: usize, cfg: &ModelConfig) -> Self {
        let pw = ConvGeom::POINTWISE;
        Self {
            channels: c,
            entry: Conv::new(bd, &format!("{name}.entry"), c, 2 * c, 3, ConvGeom::strided(3, 2), false),
            b2: BatchNorm::new(bd, &format!("{name}.b2.bn"), c, cfg.bn_eps),
            b3: (
                Conv::new(bd, &format!("{name}.b3.pw1"), c, c, 1, pw, false),
                Conv::new(bd, &format!("{name}.b3.pw2"), c, c, 1, pw, false),
                BatchNorm::new(bd, &format!("{name}.b3.bn"), c, cfg.bn_eps),
            ),
        }
    }

    pub fn branches<F: Real>(&self, s: &mut Session<F>, x: Var) -> [Var; 3] {
        let c = self.channels;
        let y1 = s.graph.max_pool_3x3_s2(x);
        let e = self.entry.apply(s, x);
        let e2 = s.graph.slice_channels(e, 0, c);
        let e3 = s.graph.slice_channels(e, c, c);
        let y2 = self.b2.apply(s, e2);
        let y3 = self.b3.0.apply(s, e3);
        let y3 = self.b3.1.apply(s, y3);
        let y3 = self.b3.2.apply(s, y3);
        [y1, y2, y3]
    }

    pub fn apply<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        let [a, b, c] = self.branches(s, x);
        let ab = s.graph.add(a, b);
        s.graph.add(ab, c)
    }

    /// The strided convolution shared by the two convolutional branches:
    /// output channels `0..c` feed the single-conv branch, `c..2c` the
    /// 1×1 chain.
    pub fn entry(&self) -> &Conv {
        &self.entry
    }
}

/// Convolutional GRU cell. The input convolution produces the update,
/// reset and candidate pre-activations at once.
#[derive(Clone, Debug)]
pub struct ConvGru {
    pub x_conv: Conv,
    pub h_conv: Conv,
    pub hh_conv: Conv,
    pub hidden: usize,
}

/// One GRU update with its gate fields.
pub struct GruStep {
    pub h: Var,
    pub z: Var,
    pub r: Var,
}

impl ConvGru {
    fn new<F: Real>(bd: &mut Builder<F>, name: &str, cin: usize, hidden: usize) -> Self {
        let g = ConvGeom::same(3, 1);
        Self {
            x_conv: Conv::new(bd, &format!("{name}.x"), cin, 3 * hidden, 3, g, true),
            h_conv: Conv::new(bd, &format!("{name}.h"), hidden, 2 * hidden, 3, g, true),
            hh_conv: Conv::new(bd, &format!("{name}.hh"), hidden, hidden, 3, g, true),
            hidden,
        }
    }

    /// Input pre-activations for a batch of frames.
    pub fn input_gates<F: Real>(&self, s: &mut Session<F>, x: Var) -> Var {
        self.x_conv.apply(s, x)
    }

    /// Advances the hidden state given precomputed input gates.
    pub fn step<F: Real>(&self, s: &mut Session<F>, xg: Var, h: Var) -> GruStep {
        let hd = self.hidden;
        let hg = self.h_conv.apply(s, h);
        let xz = s.graph.slice_channels(xg, 0, hd);
        let xr = s.graph.slice_channels(xg, hd, hd);
        let xh = s.graph.slice_channels(xg, 2 * hd, hd);
        let hz = s.graph.slice_channels(hg, 0, hd);
        let hr = s.graph.slice_channels(hg, hd, hd);
        let zl = s.graph.add(xz, hz);
        let z = s.graph.sigmoid(zl);
        let rl = s.graph.add(xr, hr);
        let r = s.graph.sigmoid(rl);
        let rh = s.graph.mul(r, h);
        let ch = self.hh_conv.apply(s, rh);
        let cl = s.graph.add(xh, ch);
        let cand = s.graph.tanh(cl);
        // (1 − z)·h + z·h̃ written as h + z·(h̃ − h)
        let d = s.graph.sub(cand, h);
        let zd = s.graph.mul(z, d);
        let h = s.graph.add(h, zd);
        GruStep { h, z, r }
    }

    /// Runs the cell over a sequence of input gates from a zero state.
    pub fn run<F: Real>(&self, s: &mut Session<F>, gates: &[Var]) -> Var {
        let [b, _, hh, ww] = s.graph.shape(gates[0]);
        let mut h = s.input(Tensor::zeros([b, self.hidden, hh, ww]));
        for &xg in gates {
            h = self.step(s, xg, h).h;
        }
        h
    }
}

#[derive(Clone, Debug)]
enum Body {
    EncoderDecoder {
        ms1: Stage,
        red1: Reduction,
        ms2: Stage,
        red2: Reduction,
        gru: Option<ConvGru>,
        dec1: ConvBlock,
        dec2: ConvBlock,
        out: Conv,
    },
    Pointwise {
        embed: Conv,
        gru: Option<ConvGru>,
        out: Conv,
    },
}

/// Encoder activations for a batch of frames.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub skip_full: Var,
    pub skip_half: Option<Var>,
    pub bottleneck: Var,
    pub gru_gates: Option<Var>,
}

/// Encoder activations of one frame, detached from any tape.
#[derive(Clone, Debug)]
pub struct FrameFeatures<F> {
    pub skip_full: Tensor<F>,
    pub skip_half: Option<Tensor<F>>,
    pub bottleneck: Tensor<F>,
    pub gru_gates: Option<Tensor<F>>,
}

#[derive(Clone, Debug)]
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    body: Body,
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bd = Builder {
            store: &mut params,
            rng: &mut rng,
        };
        let c = &config;
        let [c1, c2] = c.widths;
        let cin = c.input_channels;
        let stage = |bd: &mut Builder<F>, name: &str, i: usize, o: usize| {
            if c.use_multiscale {
                Stage::MultiScale(MultiScale::new(bd, name, i, o, c))
            } else {
                Stage::Plain(ConvBlock::new(bd, name, i, o, c))
            }
        };
        let body = if c.use_encoder_decoder {
            let ms1 = stage(&mut bd, "enc.ms1", cin, c1);
            let red1 = Reduction::new(&mut bd, "enc.red1", c1, c);
            let ms2 = stage(&mut bd, "enc.ms2", c1, c2);
            let red2 = Reduction::new(&mut bd, "enc.red2", c2, c);
            let gru = c.use_gru.then(|| ConvGru::new(&mut bd, "gru", c2, c.gru_width));
            let bottleneck = if c.use_gru { c.gru_width } else { c2 };
            let dec1 = ConvBlock::new(&mut bd, "dec1", bottleneck + c2, c2, c);
            let dec2 = ConvBlock::new(&mut bd, "dec2", c2 + c1, c1, c);
            let out = Conv::new(&mut bd, "out", c1, 1, 1, ConvGeom::POINTWISE, true);
            Body::EncoderDecoder {
                ms1,
                red1,
                ms2,
                red2,
                gru,
                dec1,
                dec2,
                out,
            }
        } else {
            let embed = Conv::new(&mut bd, "embed", cin, c1, 1, ConvGeom::POINTWISE, true);
            let gru = c.use_gru.then(|| ConvGru::new(&mut bd, "gru", c1, c.gru_width));
            let head = if c.use_gru { c.gru_width } else { c1 };
            let out = Conv::new(&mut bd, "out", head, 1, 1, ConvGeom::POINTWISE, true);
            Body::Pointwise { embed, gru, out }
        };
        Ok(Self { config, params, body })
    }

    pub fn gru(&self) -> Option<&ConvGru> {
        match &self.body {
            Body::EncoderDecoder { gru, .. } | Body::Pointwise { gru, .. } => gru.as_ref(),
        }
    }

    /// First multi-scale stage, when the encoder is present.
    pub fn first_stage(&self) -> Option<&Stage> {
        match &self.body {
            Body::EncoderDecoder { ms1, .. } => Some(ms1),
            Body::Pointwise { .. } => None,
        }
    }

    pub fn first_reduction(&self) -> Option<&Reduction> {
        match &self.body {
            Body::EncoderDecoder { red1, .. } => Some(red1),
            Body::Pointwise { .. } => None,
        }
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            body: self.body.clone(),
        }
    }

    /// Zeroes masked input channels in place on a `[N, C, H, W]` tensor.
    pub fn apply_channel_mask(&self, frames: &mut Tensor<F>) {
        let plane = frames.plane();
        let c = frames.c();
        for (k, chunk) in frames.data_mut().chunks_mut(plane).enumerate() {
            if !self.config.channel_mask[k % c] {
                chunk.fill(F::zero());
            }
        }
    }

    /// Encodes a batch of single frames `[N, C, H, W]`.
    pub fn encode(&self, s: &mut Session<F>, x: Var) -> Encoded {
        match &self.body {
            Body::EncoderDecoder {
                ms1, red1, ms2, red2, gru, ..
            } => {
                let f1 = ms1.apply(s, x);
                let r1 = red1.apply(s, f1);
                let f2 = ms2.apply(s, r1);
                let r2 = red2.apply(s, f2);
                let gates = gru.as_ref().map(|g| g.input_gates(s, r2));
                Encoded {
                    skip_full: f1,
                    skip_half: Some(f2),
                    bottleneck: r2,
                    gru_gates: gates,
                }
            }
            Body::Pointwise { embed, gru, .. } => {
                let e = embed.apply(s, x);
                let e = s.graph.mish(e);
                let gates = gru.as_ref().map(|g| g.input_gates(s, e));
                Encoded {
                    skip_full: e,
                    skip_half: None,
                    bottleneck: e,
                    gru_gates: gates,
                }
            }
        }
    }

    /// Recurrent core and decoder. `gates` holds the GRU input gates of each
    /// window frame in time order; `last` is the encoding of the final frame.
    pub fn head(&self, s: &mut Session<F>, gates: &[Var], last: &Encoded) -> Var {
        match &self.body {
            Body::EncoderDecoder {
                gru, dec1, dec2, out, ..
            } => {
                let core = match gru {
                    Some(g) => g.run(s, gates),
                    None => last.bottleneck,
                };
                let u1 = s.graph.upsample2(core);
                let c1 = s.graph.concat(&[u1, last.skip_half.expect("encoder-decoder skip")]);
                let d1 = dec1.apply(s, c1);
                let u2 = s.graph.upsample2(d1);
                let c2 = s.graph.concat(&[u2, last.skip_full]);
                let d2 = dec2.apply(s, c2);
                out.apply(s, d2)
            }
            Body::Pointwise { gru, out, .. } => {
                let core = match gru {
                    Some(g) => g.run(s, gates),
                    None => last.bottleneck,
                };
                out.apply(s, core)
            }
        }
    }

    /// Reorders `[B, T·C, H, W]` windows into masked time-major frames
    /// `[T·B, C, H, W]`.
    pub fn time_major(&self, window: &Tensor<F>) -> Result<Tensor<F>> {
        let [b, tc, h, w] = window.shape();
        let (t, c) = (self.config.window, self.config.input_channels);
        if tc != t * c {
            return Err(Error::Shape(format!(
                "window channel dimension is {tc}, expected T·C = {t}·{c} = {}",
                t * c
            )));
        }
        if b == 0 {
            return Err(Error::Shape("window batch dimension is 0".into()));
        }
        self.config.check_spatial(h, w)?;
        let frame = c * h * w;
        let mut out = Tensor::zeros([t * b, c, h, w]);
        for bi in 0..b {
            let src = window.sample(bi);
            for ti in 0..t {
                out.sample_mut(ti * b + bi).copy_from_slice(&src[ti * frame..(ti + 1) * frame]);
            }
        }
        self.apply_channel_mask(&mut out);
        Ok(out)
    }

    /// Predicts the next normalized pressure frame `[B, 1, H, W]`.
    pub fn forward(&self, s: &mut Session<F>, window: &Tensor<F>) -> Result<Var> {
        let b = window.n();
        let t = self.config.window;
        let x = self.time_major(window)?;
        let x = s.input(x);
        let enc = self.encode(s, x);
        let mut gates = Vec::new();
        if let Some(g) = enc.gru_gates {
            for ti in 0..t {
                gates.push(s.graph.slice_batch(g, ti * b, b));
            }
        }
        let at = (t - 1) * b;
        let last = Encoded {
            skip_full: s.graph.slice_batch(enc.skip_full, at, b),
            skip_half: enc.skip_half.map(|v| s.graph.slice_batch(v, at, b)),
            bottleneck: s.graph.slice_batch(enc.bottleneck, at, b),
            gru_gates: None,
        };
        Ok(self.head(s, &gates, &last))
    }

    /// Evaluation-mode prediction without gradient tracking.
    pub fn predict(&self, window: &Tensor<F>) -> Result<Tensor<F>> {
        let mut s = Session::inference(&self.params);
        let y = self.forward(&mut s, window)?;
        Ok(s.graph.value(y).clone())
    }

    /// Evaluation-mode encoding of one frame `[1, C, H, W]` (mask applied
    /// here), detached for reuse across overlapping windows.
    pub fn encode_frame(&self, frame: &Tensor<F>) -> FrameFeatures<F> {
        let mut x = frame.clone();
        self.apply_channel_mask(&mut x);
        let mut s = Session::inference(&self.params);
        let x = s.input(x);
        let e = self.encode(&mut s, x);
        let g = &s.graph;
        FrameFeatures {
            skip_full: g.value(e.skip_full).clone(),
            skip_half: e.skip_half.map(|v| g.value(v).clone()),
            bottleneck: g.value(e.bottleneck).clone(),
            gru_gates: e.gru_gates.map(|v| g.value(v).clone()),
        }
    }

    /// Evaluation-mode prediction from cached per-frame encodings, oldest
    /// first. Equal to [`Model::predict`] on the corresponding window.
    pub fn predict_from_features(&self, frames: &[&FrameFeatures<F>]) -> Result<Tensor<F>> {
        if frames.len() != self.config.window {
            return Err(Error::Shape(format!(
                "{} cached frames, window is {}",
                frames.len(),
                self.config.window
            )));
        }
        let mut s = Session::inference(&self.params);
        let gates: Vec<Var> = frames
            .iter()
            .filter_map(|f| f.gru_gates.clone())
            .map(|t| s.input(t))
            .collect();
        let lf = frames[frames.len() - 1];
        let last = Encoded {
            skip_full: s.input(lf.skip_full.clone()),
            skip_half: lf.skip_half.clone().map(|t| s.input(t)),
            bottleneck: s.input(lf.bottleneck.clone()),
            gru_gates: None,
        };
        let y = self.head(&mut s, &gates, &last);
        Ok(s.graph.value(y).clone())
    }

    /// Writes an `f32` checkpoint.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.params.cast::<f32>().save(&self.config, path)
    }
}

impl Model<f32> {
    /// Loads a checkpoint, rebuilding the architecture from its stored
    /// config and validating every tensor shape.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(crate::nn::params::read_checkpoint_config(path)?)?;
        let mut model = Self::new(config, 0)?;
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| crate::binio::with_path(e, path))?);
        model.params.read_checkpoint_into(&mut f)?;
        Ok(model)
    }
}
