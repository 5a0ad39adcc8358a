use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

pub struct Adam<F> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor<F>>>,
    v: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from `(param, gradient)` pairs. Parameters without
    /// a gradient this step keep their moments untouched.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Tensor<F>)]) {
        self.step += 1;
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        let c = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let (ob1, ob2) = (F::one() - b1, F::one() - b2);
        let wd = F::of(c.weight_decay);
        let step_size = F::of(c.lr / bc1);
        let inv_sqrt_bc2 = F::of(1.0 / bc2.sqrt());
        let eps = F::of(c.eps);
        for (id, g) in grads {
            debug_assert!(store.get(*id).kind.trainable());
            let shape = g.shape();
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(shape));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(shape));
            let theta = store.value_mut(*id);
            for (((p, &gg), mm), vv) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gg = gg + wd * *p;
                *mm = b1 * *mm + ob1 * gg;
                *vv = b2 * *vv + ob2 * gg * gg;
                *p -= step_size * *mm / (vv.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
    }
}
