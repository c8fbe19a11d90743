use serde::{Deserialize, Serialize};

use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected adaptive-moment update, in place.
///
/// Rejects the step (leaving parameters and state untouched) if any gradient
/// entry is non-finite.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NumericsError> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(NumericsError::DimensionMismatch {
            what: "adam step",
            expected: params.len(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(NumericsError::Diverged("non-finite gradient".into()));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3, AdamConfig::default());
        for _ in 0..50 {
            adam_step(&mut p, &[0.0; 3], &mut s, 0.1).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3, AdamConfig::default());
        adam_step(&mut p, &[3.0, -0.5, 1e-3], &mut s, 0.01).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
        assert!((p[2] + 0.01).abs() < 1e-7);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = vec![1.0, -0.7, 0.4, 0.25];
        let mut s = AdamState::new(4, AdamConfig::default());
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam_step(&mut p, &g, &mut s, 1e-2).unwrap();
        }
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = vec![1.0, 1.0];
        let mut s = AdamState::new(2, AdamConfig::default());
        let err = adam_step(&mut p, &[f64::NAN, 0.0], &mut s, 0.1).unwrap_err();
        assert!(matches!(err, NumericsError::Diverged(_)));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(s.steps(), 0);
    }
}
