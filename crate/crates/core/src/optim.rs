//! SGD with momentum, coupled weight decay and step learning-rate decay.
//!
//! ```text
//! lr = lr0 · decay_factor^⌊epoch / decay_every⌋
//! v  ← β·v + (g + wd·p)
//! p  ← p − lr·v
//! ```

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_factor: 0.1,
            decay_every: 10,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "need optim.lr0 > 0 and 0 ≤ optim.momentum < 1 (got {}, {})",
                self.lr0, self.momentum
            )));
        }
        if self.weight_decay < 0.0 || self.decay_factor <= 0.0 || self.decay_every == 0 {
            return Err(Error::InvalidConfig(
                "optim.weight_decay must be ≥ 0, optim.decay_factor > 0, optim.decay_every ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub cfg: OptimConfig,
    velocity: Vec<Tensor<f32>>,
}

impl Sgd {
    /// Zero momentum buffers shaped like every parameter in `store`.
    pub fn new(cfg: OptimConfig, store: &ParamStore) -> Self {
        let velocity = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { cfg, velocity }
    }

    /// One update of every parameter. `grads` follows the store's order.
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor<f32>], epoch: usize) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::InvalidInput(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::InvalidShape(format!(
                    "gradient of {} has shape {:?}, parameter {:?}",
                    store.name(id),
                    g.shape(),
                    store.get(id).shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
        }
        let lr = self.cfg.lr(epoch) as f32;
        let beta = self.cfg.momentum as f32;
        let wd = self.cfg.weight_decay as f32;
        let ids: Vec<_> = store.ids().collect();
        for ((id, g), v) in ids.into_iter().zip(grads).zip(&mut self.velocity) {
            let p = store.get_mut(id);
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = beta * *vv + (gv + wd * *pv);
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}
