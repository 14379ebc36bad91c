use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("optimizer.lr", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("optimizer.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer.beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("optimizer.eps", "must be > 0"));
        }
        Ok(())
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to a list of parameter tensors. Nothing is modified on error.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape(
                "gradients are not congruent with parameters".into(),
            ));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        if self.config.kind == OptimizerKind::Adam {
            if self.m.is_empty() {
                self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                self.v = self.m.clone();
            } else if self.m.len() != grads.len()
                || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len())
            {
                return Err(Error::Contract(
                    "optimizer state belongs to a different parameter set".into(),
                ));
            }
        }

        self.step += 1;
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig {
                    beta1, beta2, eps, ..
                } = self.config;
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One optimizer step on a single network.
pub fn optimizer_step(
    params: &mut MlpParams,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    if !grads.is_congruent(params) {
        return Err(Error::Shape("gradients do not match network".into()));
    }
    let g = grads.tensors();
    state.step(&mut params.tensors_mut(), &g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_matches_definition() {
        let mut p = vec![1.0];
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1));
        s.step(&mut [p.as_mut_slice()], &[&[2.0]]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_bit_identical() {
        let orig = vec![0.123456789, -3.5e-7, 42.0];
        let mut p = orig.clone();
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.37));
        s.step(&mut [p.as_mut_slice()], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            orig.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps) for any nonzero g
        for &g in &[1e-3, 0.5, 7.0, -250.0] {
            let mut p = vec![0.0];
            let mut s = OptimizerState::new(OptimizerConfig::adam(0.01));
            s.step(&mut [p.as_mut_slice()], &[&[g]]).unwrap();
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!((p[0].abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn non_finite_gradient_is_surfaced() {
        let mut p = vec![1.0, 2.0];
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.1));
        let err = s.step(&mut [p.as_mut_slice()], &[&[f64::NAN, 0.0]]);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![1.0, 2.0];
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1));
        assert!(s.step(&mut [p.as_mut_slice()], &[&[1.0]]).is_err());
    }
}
