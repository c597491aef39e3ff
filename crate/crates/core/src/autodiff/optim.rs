//! Adam with cosine learning-rate decay.

use ndarray::ArrayD;

use crate::error::{PatError, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OptimState {
    first_moment: Vec<ArrayD<f64>>,
    second_moment: Vec<ArrayD<f64>>,
    step: u64,
    base_lr: f64,
    horizon: u64,
}

impl OptimState {
    pub fn new(params: &[ArrayD<f64>], base_lr: f64, horizon: u64) -> OptimState {
        OptimState {
            first_moment: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            second_moment: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            step: 0,
            base_lr,
            horizon: horizon.max(1),
        }
    }

    /// base * 0.5 * (1 + cos(pi t / horizon)); exactly base at t = 0 and
    /// exactly 0 at t = horizon (clamped beyond).
    pub fn learning_rate(&self) -> f64 {
        let t = self.step.min(self.horizon) as f64;
        if self.step >= self.horizon {
            return 0.0;
        }
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t / self.horizon as f64).cos())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over matching parameter/gradient lists. A non-finite
/// gradient rejects the whole step and leaves parameters untouched.
pub fn adam_step(state: &mut OptimState, params: &mut [ArrayD<f64>], grads: &[ArrayD<f64>]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(PatError::Invalid(format!(
            "adam_step: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(PatError::shape(
                "adam_step",
                format!("{:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(PatError::NonFinite("gradient".into()));
        }
    }
    let lr = state.learning_rate();
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPS);
            });
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![ArrayD::from_elem(IxDyn(&[3]), 1.5)];
        let grads = vec![ArrayD::zeros(IxDyn(&[3]))];
        let mut state = OptimState::new(&params, 1e-3, 100);
        adam_step(&mut state, &mut params, &grads).unwrap();
        assert!(params[0].iter().all(|&v| v == 1.5));
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        let mut params = vec![ArrayD::from_elem(IxDyn(&[]), 1.0)];
        let grads = vec![ArrayD::from_elem(IxDyn(&[]), 1.0)];
        let mut state = OptimState::new(&params, 2e-4, 1000);
        adam_step(&mut state, &mut params, &grads).unwrap();
        let delta = 1.0 - params[0][[]];
        assert!((delta - 2e-4).abs() < 1e-8, "first step {delta}");
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut params = vec![ArrayD::from_elem(IxDyn(&[2]), 1.0)];
        let grads = vec![ArrayD::from_elem(IxDyn(&[2]), f64::NAN)];
        let mut state = OptimState::new(&params, 1e-3, 10);
        assert!(adam_step(&mut state, &mut params, &grads).is_err());
        assert!(params[0].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cosine_schedule_endpoints_are_exact() {
        let params = vec![ArrayD::zeros(IxDyn(&[1]))];
        let mut state = OptimState::new(&params, 3e-4, 10);
        assert_eq!(state.learning_rate(), 3e-4);
        state.step = 10;
        assert_eq!(state.learning_rate(), 0.0);
        state.step = 25;
        assert_eq!(state.learning_rate(), 0.0);
    }

    #[test]
    fn quadratic_bowl_is_minimized() {
        // f(w) = sum((w - 3)^2); Adam should reach the optimum closely.
        let mut params = vec![ArrayD::from_elem(IxDyn(&[4]), 10.0)];
        let mut state = OptimState::new(&params, 0.05, 4000);
        for _ in 0..2000 {
            let g = params[0].mapv(|w| 2.0 * (w - 3.0));
            adam_step(&mut state, &mut params, &[g]).unwrap();
        }
        let err: f64 = params[0].iter().map(|w| (w - 3.0).powi(2)).sum();
        assert!(err <= 1e-6, "distance from optimum {err}");
    }
}
