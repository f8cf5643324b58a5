//! Adam and reduce-on-plateau learning-rate scheduling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step, in place. A non-finite gradient entry
/// leaves both state and parameters untouched.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grad.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: state {}, params {}, gradient {}",
            state.m.len(),
            params.len(),
            grad.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {}",
            grad[i]
        )));
    }
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = 1.0 - math::powi(state.beta1, t);
    let c2 = 1.0 - math::powi(state.beta2, t);
    let (b1, b2) = (state.beta1, state.beta2);
    for i in 0..params.len() {
        let g = grad[i];
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        params[i] -= state.lr * (m / c1) / (math::sqrt(v / c2) + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    pub best_metric: f64,
    pub bad_count: u32,
    pub patience: u32,
    pub factor: f64,
    pub min_lr: f64,
    pub rel_threshold: f64,
}

impl PlateauState {
    pub fn new(patience: u32, factor: f64, min_lr: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::Parameter(format!(
                "plateau factor {factor} outside (0, 1)"
            )));
        }
        if !(min_lr >= 0.0) {
            return Err(Error::Parameter(format!("min_lr {min_lr} is negative")));
        }
        Ok(PlateauState {
            best_metric: f64::INFINITY,
            bad_count: 0,
            patience,
            factor,
            min_lr,
            rel_threshold: 1e-4,
        })
    }
}

/// Feeds one metric observation and returns the (possibly reduced) learning rate.
pub fn plateau_step(state: &mut PlateauState, lr: f64, metric: f64) -> f64 {
    if metric < state.best_metric * (1.0 - state.rel_threshold) {
        state.best_metric = metric;
        state.bad_count = 0;
        return lr;
    }
    state.bad_count += 1;
    if state.bad_count > state.patience {
        state.bad_count = 0;
        let reduced = lr * state.factor;
        return if reduced > state.min_lr {
            reduced
        } else {
            state.min_lr.min(lr)
        };
    }
    lr
}
