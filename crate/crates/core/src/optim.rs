//! ADAM optimizer and the shared mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 512,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return invalid("ADAM step must be positive");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return invalid(format!("ADAM {name} must be in (0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return invalid("ADAM epsilon must be positive");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        Ok(())
    }
}

/// Per-epoch losses of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean mini-batch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss; entry 0 is the initialization.
    pub valid_loss: Vec<f64>,
    /// Epoch whose parameters were returned (0 = initialization).
    pub best_epoch: usize,
    pub steps: usize,
}

/// A differentiable training objective over a fixed set of samples.
pub trait Objective<T: Real> {
    fn n_train(&self) -> usize;

    /// Mean loss over `batch` (training sample ordinals); writes the
    /// gradient of that mean into `grad`, which arrives zeroed.
    fn loss_grad(&mut self, params: &[T], batch: &[usize], grad: &mut [T]) -> T;

    fn valid_loss(&mut self, params: &[T]) -> T;
}

/// Called after every optimizer step with the global step count. Returns
/// true when it changed the active mask.
pub type StepHook<'a, T> = dyn FnMut(usize, &mut [T], &mut [bool]) -> bool + 'a;

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn update(&mut self, cfg: &AdamConfig, params: &mut [T], grad: &[T], active: &[bool]) {
        self.t += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let (lr, eps) = (T::lit(cfg.step), T::lit(cfg.epsilon));
        for i in 0..params.len() {
            if !active[i] {
                params[i] = T::zero();
                continue;
            }
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] = params[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Mini-batch ADAM with per-epoch validation, early stopping and
/// best-validation parameter selection. Inactive parameters are held at 0.
pub fn run_adam<T: Real, O: Objective<T>>(
    params: &mut [T],
    active: &mut [bool],
    obj: &mut O,
    cfg: &AdamConfig,
    mut hook: Option<&mut StepHook<'_, T>>,
) -> Result<TrainTrace> {
    cfg.validate()?;
    assert_eq!(params.len(), active.len());
    for (p, &a) in params.iter_mut().zip(active.iter()) {
        if !a {
            *p = T::zero();
        }
    }
    let mut trace = TrainTrace::default();
    let init_val = obj.valid_loss(params).f64();
    trace.valid_loss.push(init_val);
    if cfg.max_epochs == 0 {
        return Ok(trace);
    }
    if !init_val.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            trace: trace.valid_loss,
        });
    }
    let n = obj.n_train();
    if n == 0 {
        return invalid("no training samples");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![T::zero(); params.len()];
    let mut adam = Adam::new(params.len());
    let mut best = (init_val, params.to_vec(), active.to_vec(), 0usize);
    let mut stale = 0usize;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let loss = obj.loss_grad(params, batch, &mut grad).f64();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                trace.train_loss.push(f64::NAN);
                return Err(Error::Diverged {
                    epoch,
                    trace: trace.train_loss,
                });
            }
            epoch_loss += loss;
            batches += 1;
            adam.update(cfg, params, &grad, active);
            trace.steps += 1;
            if let Some(h) = hook.as_deref_mut() {
                if h(trace.steps, params, active) {
                    // Earlier snapshots have a different sparsity pattern.
                    best.0 = f64::INFINITY;
                    stale = 0;
                }
            }
        }
        trace.train_loss.push(epoch_loss / batches as f64);
        let val = obj.valid_loss(params).f64();
        trace.valid_loss.push(val);
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                trace: trace.valid_loss,
            });
        }
        if val < best.0 {
            best = (val, params.to_vec(), active.to_vec(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if best.0.is_finite() {
        params.copy_from_slice(&best.1);
        active.copy_from_slice(&best.2);
        trace.best_epoch = best.3;
    } else {
        trace.best_epoch = trace.valid_loss.len() - 1;
    }
    Ok(trace)
}
