//! AdamW: bias-corrected adaptive moments with weight decay applied
//! directly to the parameters, plus the linear learning-rate decay policy.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("gradient count {grads} does not match parameter count {params}")]
    Count { params: usize, grads: usize },
    #[error("gradient for {name} has shape {grad:?}, parameter has {param:?}")]
    Shape {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("invalid optimizer setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    /// Learning rate reached at the last step of linear decay.
    pub lr_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_end: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = self.lr > 0.0
            && self.lr_end >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && [self.lr, self.lr_end, self.eps, self.weight_decay]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(OptimError::Invalid(format!("{self:?}")))
        }
    }

    /// Linear decay from `lr` at step 1 to `lr_end` at step `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.lr;
        }
        let progress = (step.clamp(1, total) - 1) as f64 / (total - 1) as f64;
        self.lr + (self.lr_end - self.lr) * progress
    }
}

/// Moment accumulators aligned with a [`ParamStore`]'s name order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub step_count: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    /// Whether decoupled decay applies to each parameter.
    decays: Vec<bool>,
}

impl OptimState {
    /// Fresh state. Weight decay is applied to prunable tensors only, the
    /// same set the prior acts on.
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        Self {
            config,
            step_count: 0,
            first: params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect(),
            decays: params.iter().map(|p| p.prunable).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }
}

/// One AdamW update at learning rate `lr`. `grads` is aligned with the
/// store's name order.
pub fn optim_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimState,
    lr: f64,
) -> Result<(), OptimError> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(OptimError::Count {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensor.shape() != g.shape() {
            return Err(OptimError::Shape {
                name: p.name.clone(),
                param: p.tensor.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
    }
    state.step_count += 1;
    let cfg = state.config;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let decay = if state.decays[i] {
            1.0 - lr * cfg.weight_decay
        } else {
            1.0
        };
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, theta) in p.tensor.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *theta = *theta * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(values), true).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = store(vec![0.5, -1.5]);
        let mut st = OptimState::new(AdamWConfig::default(), &p);
        optim_step(&mut p, &[Tensor::zeros(&[2])], &mut st, 1e-3).unwrap();
        assert_eq!(p.get("w").unwrap().tensor.data(), &[0.5, -1.5]);
    }

    #[test]
    fn decoupled_decay_scales() {
        let mut p = store(vec![0.5, -1.5]);
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..AdamWConfig::default()
        };
        let mut st = OptimState::new(cfg, &p);
        optim_step(&mut p, &[Tensor::zeros(&[2])], &mut st, 0.1).unwrap();
        let f = 1.0 - 0.1 * 0.01;
        assert_eq!(p.get("w").unwrap().tensor.data(), &[0.5 * f, -1.5 * f]);
        // decay never reaches the accumulators
        assert!(st.first_moments()[0].data().iter().all(|&x| x == 0.0));
        assert!(st.second_moments()[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε) ≈ lr·sign(g)
        let mut p = store(vec![1.0]);
        let mut st = OptimState::new(AdamWConfig::default(), &p);
        optim_step(&mut p, &[Tensor::vector(vec![0.37])], &mut st, 0.01).unwrap();
        let moved = 1.0 - p.get("w").unwrap().tensor.data()[0];
        let expected = 0.01 * 0.37 / (0.37 + 1e-8);
        assert!((moved - expected).abs() < 1e-15);
    }

    #[test]
    fn non_prunable_tensors_skip_decay() {
        let mut p = ParamStore::new();
        p.insert("gain", Tensor::vector(vec![2.0]), false).unwrap();
        let cfg = AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut st = OptimState::new(cfg, &p);
        optim_step(&mut p, &[Tensor::zeros(&[1])], &mut st, 0.1).unwrap();
        assert_eq!(p.get("gain").unwrap().tensor.data(), &[2.0]);
    }

    #[test]
    fn deterministic_sequences() {
        let run = || {
            let mut p = store(vec![0.3, -0.2, 0.9]);
            let mut st = OptimState::new(AdamWConfig::default(), &p);
            for k in 0..50 {
                let g = Tensor::vector(vec![(k as f64).sin(), 0.1, -(k as f64) * 1e-3]);
                optim_step(&mut p, &[g], &mut st, 1e-2).unwrap();
            }
            p.get("w").unwrap().tensor.clone()
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = store(vec![0.0, 0.0]);
        let mut st = OptimState::new(AdamWConfig::default(), &p);
        let err = optim_step(&mut p, &[Tensor::zeros(&[3])], &mut st, 1e-3).unwrap_err();
        assert!(matches!(err, OptimError::Shape { .. }));
        let err = optim_step(&mut p, &[], &mut st, 1e-3).unwrap_err();
        assert!(matches!(err, OptimError::Count { .. }));
    }

    #[test]
    fn linear_lr_decay() {
        let cfg = AdamWConfig {
            lr: 5e-5,
            lr_end: 5e-6,
            ..AdamWConfig::default()
        };
        assert_eq!(cfg.lr_at(1, 11), 5e-5);
        assert!((cfg.lr_at(11, 11) - 5e-6).abs() < 1e-20);
        assert!((cfg.lr_at(6, 11) - 2.75e-5).abs() < 1e-18);
    }
}
