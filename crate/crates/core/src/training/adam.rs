use super::TrainError;
use crate::model::{ParamGroup, Parameter};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(format!("adam eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update at step `t` (1-based), in place.
pub fn adam_update<T: Scalar>(
    theta: &mut [T],
    m: &mut [T],
    v: &mut [T],
    grad: &[T],
    lr: f64,
    cfg: &AdamConfig,
    t: u64,
) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + c1 * g;
        v[i] = b2 * v[i] + c2 * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over the parameters of a fixed set of groups; other parameters are
/// never written.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    config: AdamConfig,
    lr: f64,
    groups: Vec<ParamGroup>,
    step: u64,
    /// Indexed like the model's parameters; empty for parameters outside `groups`.
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Parameter<T>], groups: &[ParamGroup], lr: f64, config: AdamConfig) -> Self {
        let zeros = |p: &Parameter<T>| {
            if groups.contains(&p.group()) {
                vec![T::zero(); p.values.len()]
            } else {
                Vec::new()
            }
        };
        Self {
            config,
            lr,
            groups: groups.to_vec(),
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn covers(&self, group: ParamGroup) -> bool {
        self.groups.contains(&group)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads` is indexed like `params`, and every covered
    /// parameter must have a gradient of matching length.
    pub fn step(&mut self, params: &mut [Parameter<T>], grads: &[Option<Vec<T>>]) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TrainError::Config(format!(
                "optimizer built for {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if self.covers(p.group()) && g.as_ref().is_none_or(|g| g.len() != p.values.len()) {
                return Err(TrainError::MissingGradient(p.name.clone()));
            }
        }
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            if let (true, Some(g)) = (self.covers(p.group()), &grads[i]) {
                adam_update(
                    &mut p.values,
                    &mut self.m[i],
                    &mut self.v[i],
                    g,
                    self.lr,
                    &self.config,
                    self.step,
                );
            }
        }
        Ok(())
    }
}
