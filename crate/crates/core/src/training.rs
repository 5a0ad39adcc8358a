//! Composite data + Scharr-gradient loss and the teacher-forced training loop.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowSet;
use crate::error::{Error, Result};
use crate::network::{Model, Session};
use crate::nn::{Adam, AdamConfig, ParamStore, Real, Tensor};

/// Horizontal derivative kernel, rows indexed by y.
pub const SCHARR_X: [[f64; 3]; 3] = [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]];
/// Vertical derivative kernel, rows indexed by y.
pub const SCHARR_Y: [[f64; 3]; 3] = [[-3.0, -10.0, -3.0], [0.0, 0.0, 0.0], [3.0, 10.0, 3.0]];

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Cross-correlation of an `h × w` row-major field with a 3×3 kernel under
/// replicate padding.
pub fn correlate3<F: Real>(p: &[F], h: usize, w: usize, k: &[[f64; 3]; 3]) -> Vec<F> {
    let kk: Vec<F> = k.iter().flatten().map(|&v| F::of(v)).collect();
    let mut out = vec![F::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = F::zero();
            for a in 0..3 {
                let yy = clamp_idx(y as isize + a as isize - 1, h);
                for b in 0..3 {
                    let xx = clamp_idx(x as isize + b as isize - 1, w);
                    acc += kk[a * 3 + b] * p[yy * w + xx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Adjoint of [`correlate3`]: scatters `u` back through the kernel taps,
/// accumulating into `out`.
fn correlate3_adjoint<F: Real>(u: &[F], h: usize, w: usize, k: &[[f64; 3]; 3], out: &mut [F]) {
    let kk: Vec<F> = k.iter().flatten().map(|&v| F::of(v)).collect();
    for y in 0..h {
        for x in 0..w {
            let g = u[y * w + x];
            if g == F::zero() {
                continue;
            }
            for a in 0..3 {
                let yy = clamp_idx(y as isize + a as isize - 1, h);
                for b in 0..3 {
                    let xx = clamp_idx(x as isize + b as isize - 1, w);
                    out[yy * w + xx] += kk[a * 3 + b] * g;
                }
            }
        }
    }
}

/// Scharr derivatives `(Gx, Gy)` of a row-major `h × w` field.
pub fn scharr_gradients<F: Real>(p: &[F], h: usize, w: usize) -> Result<(Vec<F>, Vec<F>)> {
    if h < 3 || w < 3 {
        return Err(Error::shape(format!("Scharr gradients need at least 3x3, got {h}x{w}")));
    }
    if p.len() != h * w {
        return Err(Error::shape(format!("field has {} values, expected {h}x{w}", p.len())));
    }
    Ok((correlate3(p, h, w, &SCHARR_X), correlate3(p, h, w, &SCHARR_Y)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub grad: f64,
    pub total: f64,
}

fn check_pair<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.c() != 1 {
        return Err(Error::shape(format!("loss expects one channel, got {}", pred.c())));
    }
    Ok(())
}

fn sign<F: Real>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Loss value and, when requested, its gradient with respect to `pred`.
/// The gradient uses `sign(0) = 0` at the kinks of the absolute values.
fn loss_impl<F: Real>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Tensor<F>>)> {
    check_pair(pred, target)?;
    let [n, _, h, w] = pred.shape();
    let cells = h * w;
    let count = (n * cells) as f64;
    let mut sum_abs = 0.0;
    let mut sum_grad = 0.0;
    let mut dpred = want_grad.then(|| Tensor::zeros(pred.shape()));
    let c_data = F::of(cfg.lambda1 / count);
    let c_grad = F::of(cfg.lambda2 / count);
    for s in 0..n {
        // both operators are linear, so differentiate the residual once
        let d: Vec<F> = pred.sample(s).iter().zip(target.sample(s)).map(|(&a, &b)| a - b).collect();
        let (gx, gy) = scharr_gradients(&d, h, w)?;
        sum_abs += d.iter().map(|v| v.abs().to_f64().unwrap()).sum::<f64>();
        sum_grad += gx.iter().chain(&gy).map(|v| v.abs().to_f64().unwrap()).sum::<f64>();
        if let Some(dp) = dpred.as_mut() {
            let out = dp.sample_mut(s);
            let sx: Vec<F> = gx.iter().map(|&v| sign(v) * c_grad).collect();
            let sy: Vec<F> = gy.iter().map(|&v| sign(v) * c_grad).collect();
            correlate3_adjoint(&sx, h, w, &SCHARR_X, out);
            correlate3_adjoint(&sy, h, w, &SCHARR_Y, out);
            for (o, &v) in out.iter_mut().zip(&d) {
                *o += sign(v) * c_data;
            }
        }
    }
    let data = sum_abs / count;
    let grad = sum_grad / count;
    Ok((
        LossBreakdown {
            data,
            grad,
            total: cfg.lambda1 * data + cfg.lambda2 * grad,
        },
        dpred,
    ))
}

/// `L_total = λ1 · mean|pred − true| + λ2 · (mean|∇x pred − ∇x true| + mean|∇y pred − ∇y true|)`
/// over `[N, 1, H, W]` fields.
pub fn composite_loss<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(loss_impl(pred, target, cfg, false)?.0)
}

pub fn composite_loss_with_grad<F: Real>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Tensor<F>)> {
    let (l, g) = loss_impl(pred, target, cfg, true)?;
    Ok((l, g.expect("gradient requested")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    /// Write `checkpoint_<iter>.bin` every this many iterations (0 = never).
    pub checkpoint_every: usize,
    /// Held-out evaluation period in iterations (0 = never).
    pub eval_every: usize,
    /// Stop once the evaluation-mode one-step data loss over the training
    /// samples falls below this value, checked every `eval_every`.
    pub target_data_loss: Option<f64>,
    /// Cap on samples used for each evaluation pass (0 = all).
    pub eval_max_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 1e-3,
            batch_size: 32,
            iterations: 1000,
            shuffle_seed: 0,
            init_seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            target_data_loss: None,
            eval_max_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || self.batch_size == 0 {
            return Err(Error::config("learning rate and batch size must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub data: f64,
    pub grad: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Evaluation-mode one-step loss over the training samples.
    pub train: LossBreakdown,
    pub held_out: Option<LossBreakdown>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    pub evals: Vec<EvalRecord>,
    pub iterations_run: usize,
    /// Iteration whose weights were kept (best held-out loss, else last).
    pub selected_iteration: usize,
    pub reached_target: bool,
    /// Wall-clock duration; written to `timing.json`, not the report.
    #[serde(skip)]
    pub seconds: f64,
}

/// Sample order for one epoch.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Batches in training order: each epoch is a fresh shuffle, and batches
/// never straddle epochs (the last one of an epoch may be short).
pub struct BatchSchedule {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSchedule {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            n,
            batch,
            seed,
            epoch: 0,
            order: epoch_order(n, seed, 0),
            pos: 0,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.epoch += 1;
            self.order = epoch_order(self.n, self.seed, self.epoch);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.n);
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        b
    }
}

/// Evaluation-mode one-step loss over (up to `max` evenly spaced) samples.
pub fn evaluate_one_step(model: &Model<f32>, set: &WindowSet, loss: &LossConfig, max: usize) -> Result<LossBreakdown> {
    let n = set.len();
    let idx: Vec<usize> = if max == 0 || max >= n {
        (0..n).collect()
    } else {
        (0..max).map(|k| k * n / max).collect()
    };
    let mut acc = LossBreakdown::default();
    for chunk in idx.chunks(8) {
        let (x, y) = set.batch(chunk);
        let pred = model.predict(&x)?;
        let l = composite_loss(&pred, &y, loss)?;
        let wgt = chunk.len() as f64 / idx.len() as f64;
        acc.data += l.data * wgt;
        acc.grad += l.grad * wgt;
        acc.total += l.total * wgt;
    }
    Ok(acc)
}

/// One optimizer step on a batch. Returns the training-mode loss, which is
/// computed before the update.
pub fn train_step(
    model: &mut Model<f32>,
    adam: &mut Adam<f32>,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    loss: &LossConfig,
) -> Result<LossBreakdown> {
    let momentum = model.config.bn_momentum;
    let (l, grads, stats) = {
        let mut s = Session::new(&model.params, true, true);
        let pred = model.forward(&mut s, x)?;
        let (l, dpred) = composite_loss_with_grad(s.graph.value(pred), y, loss)?;
        if !l.total.is_finite() {
            return Ok(l);
        }
        s.graph.backward(pred, dpred);
        let grads = s.param_grads();
        (l, grads, s.into_stats())
    };
    adam.step(&mut model.params, &grads);
    stats.apply(&mut model.params, momentum);
    Ok(l)
}

/// Output locations of a training run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn loss_csv(&self) -> PathBuf {
        self.root.join("loss.csv")
    }

    pub fn evals_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn weights(&self) -> PathBuf {
        self.root.join("weights.bin")
    }

    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.root.join(format!("checkpoint_{iteration:06}.bin"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("train_report.json")
    }
}

/// Teacher-forced training with Adam. Writes the loss history, checkpoints
/// and final weights under `run` when given.
pub fn train(
    model: &mut Model<f32>,
    train_set: &WindowSet,
    held_out: Option<&WindowSet>,
    cfg: &TrainConfig,
    loss: &LossConfig,
    run: Option<&RunDir>,
) -> Result<TrainReport> {
    cfg.validate()?;
    loss.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let start = Instant::now();
    let mut adam = Adam::new(cfg.adam());
    let mut sched = BatchSchedule::new(train_set.len(), cfg.batch_size, cfg.shuffle_seed);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut csv = match run {
        Some(r) => {
            std::fs::create_dir_all(&r.root)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(r.loss_csv())?);
            writeln!(f, "iteration,l_data,l_grad,l_total")?;
            Some(f)
        }
        None => None,
    };
    for it in 1..=cfg.iterations {
        let idx = sched.next_batch();
        let (x, y) = train_set.batch(&idx);
        let before = model.params.clone();
        let l = train_step(model, &mut adam, &x, &y, loss)?;
        if !l.total.is_finite() {
            if let Some(r) = run {
                before.save(&model.config, &r.checkpoint(it - 1))?;
            }
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        drop(before);
        let rec = LossRecord {
            iteration: it,
            data: l.data,
            grad: l.grad,
            total: l.total,
        };
        log::debug!("iter {it}: data {:.6e} grad {:.6e} total {:.6e}", l.data, l.grad, l.total);
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{},{:e},{:e},{:e}", it, l.data, l.grad, l.total)?;
        }
        report.history.push(rec);
        report.iterations_run = it;
        if let (Some(r), true) = (run, cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) {
            model.save(&r.checkpoint(it))?;
        }
        if cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.iterations) {
            let tr = evaluate_one_step(model, train_set, loss, cfg.eval_max_samples)?;
            let ho = match held_out {
                Some(h) if !h.is_empty() => Some(evaluate_one_step(model, h, loss, cfg.eval_max_samples)?),
                _ => None,
            };
            log::info!(
                "iter {it}: eval train L_data {:.4e}{}",
                tr.data,
                ho.map(|h| format!(", held-out L_total {:.4e}", h.total)).unwrap_or_default()
            );
            report.evals.push(EvalRecord {
                iteration: it,
                train: tr,
                held_out: ho,
            });
            if let Some(h) = ho {
                if best.as_ref().is_none_or(|b| h.total < b.0) {
                    best = Some((h.total, it, model.params.clone()));
                }
            }
            if cfg.target_data_loss.is_some_and(|t| tr.data < t) {
                report.reached_target = true;
                break;
            }
        }
    }
    report.selected_iteration = report.iterations_run;
    if let Some((_, it, params)) = best {
        if !report.reached_target {
            model.params.copy_from(&params)?;
            report.selected_iteration = it;
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    if let Some(f) = csv.as_mut() {
        f.flush()?;
    }
    if let Some(r) = run {
        model.save(&r.weights())?;
        crate::binio::write_json(&r.report(), &report)?;
        crate::binio::write_json(&r.root.join("timing.json"), &serde_json::json!({ "seconds": report.seconds }))?;
        write_evals_csv(&r.evals_csv(), &report.evals)?;
    }
    Ok(report)
}

fn write_evals_csv(path: &Path, evals: &[EvalRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,train_l_data,train_l_total,heldout_l_data,heldout_l_total")?;
    for e in evals {
        let (hd, ht) = e
            .held_out
            .map(|h| (format!("{:e}", h.data), format!("{:e}", h.total)))
            .unwrap_or_default();
        writeln!(f, "{},{:e},{:e},{hd},{ht}", e.iteration, e.train.data, e.train.total)?;
    }
    f.flush()?;
    Ok(())
}
