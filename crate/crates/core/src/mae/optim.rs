//! Warm-up cosine schedule and the AdamW optimizer.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Gradients, MaeError, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Target learning rate λ_t.
    pub lambda_t: f64,
    /// Warm-up steps N_w.
    pub warmup: usize,
    /// Total iterations N_iter.
    pub n_iter: usize,
}

impl ScheduleConfig {
    pub fn reference(n_iter: usize) -> Self {
        Self { lambda_t: 2.5e-4, warmup: 5, n_iter }
    }

    pub fn validate(&self) -> Result<(), MaeError> {
        if self.warmup >= self.n_iter {
            return Err(MaeError::BadSchedule(format!(
                "need 0 <= N_w < N_iter, got N_w = {}, N_iter = {}",
                self.warmup, self.n_iter
            )));
        }
        if !(self.lambda_t > 0.0 && self.lambda_t.is_finite()) {
            return Err(MaeError::BadSchedule("lambda_t must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate at iteration `i`: linear ramp `(i/N_w)·λ_t` below `N_w`,
/// then `0.5·λ_t·(1 + cos(π(i−N_w)/(N_iter−N_w)))`.
pub fn lr_at(i: usize, s: &ScheduleConfig) -> Result<f64, MaeError> {
    s.validate()?;
    if i > s.n_iter {
        return Err(MaeError::ScheduleRange { i, n_iter: s.n_iter });
    }
    if i < s.warmup {
        return Ok(i as f64 / s.warmup as f64 * s.lambda_t);
    }
    let frac = (i - s.warmup) as f64 / (s.n_iter - s.warmup) as f64;
    Ok(0.5 * s.lambda_t * (1.0 + (PI * frac).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// Step counter and first/second moments, one buffer per parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub config: AdamWConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(params: &ModelParams, config: AdamWConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        Self { step: 0, config, m: zeros.clone(), v: zeros }
    }

    fn check(&self, params: &ModelParams) -> Result<(), MaeError> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(MaeError::Layout(format!(
                "optimizer state has {} entries, parameters {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((e, m), v) in params.entries().iter().zip(&self.m).zip(&self.v) {
            if m.len() != e.tensor.len() || v.len() != e.tensor.len() {
                return Err(MaeError::ShapeMismatch {
                    name: format!("moments of {}", e.name),
                    got: vec![m.len(), v.len()],
                    expected: vec![e.tensor.len(), e.tensor.len()],
                });
            }
        }
        Ok(())
    }
}

/// One AdamW update with decoupled weight decay:
/// `w ← w − lr·wd·w − lr·m̂/(√v̂ + eps)`. Frozen entries are left untouched;
/// decay applies only to entries flagged `decay`.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimState,
    lr: f64,
) -> Result<(), MaeError> {
    state.check(params)?;
    for (pe, ge) in params.entries().iter().zip(grads.entries()) {
        if pe.name != ge.name || pe.tensor.dims() != ge.tensor.dims() {
            return Err(MaeError::ShapeMismatch {
                name: pe.name.clone(),
                got: ge.tensor.dims().to_vec(),
                expected: pe.tensor.dims().to_vec(),
            });
        }
    }
    if grads.len() != params.len() {
        return Err(MaeError::Layout("gradient map does not mirror parameters".into()));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..params.len() {
        let (trainable, decay) = (params.entries()[i].trainable, params.entries()[i].decay);
        if !trainable {
            continue;
        }
        let g = grads.entries()[i].tensor.data();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let w = params.data_mut(i);
        for j in 0..w.len() {
            if decay {
                w[j] -= lr * c.weight_decay * w[j];
            }
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            w[j] -= lr * mh / (vh.sqrt() + c.eps);
        }
    }
    Ok(())
}
