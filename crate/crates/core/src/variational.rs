//! Classical model-based reconstruction: proximal operators, proximal
//! gradient descent and PDHG, over either the reference operator or the
//! fast pair.
//!
//! The solved problem is min_x 1/2 |F x - y|^2 + lambda R(x); the dual
//! proximal step (q + sigma(Fx - y)) / (1 + sigma) corresponds to that data
//! weight, so the l2-regularized minimizer satisfies
//! (F^T F + 2 lambda I) x = F^T y.

use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{PatError, Result};
use crate::field::l2_norm;
use crate::linop::FieldOp;
use crate::trace::FixedPointTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    /// Indicator of the nonnegative orthant.
    NonNeg,
    /// Squared l2 norm.
    L2,
    /// l1 norm.
    L1,
}

impl Regularizer {
    pub fn parse(tag: &str) -> Result<Regularizer> {
        match tag {
            "nonneg" => Ok(Regularizer::NonNeg),
            "l2" => Ok(Regularizer::L2),
            "l1" => Ok(Regularizer::L1),
            other => Err(PatError::Invalid(format!("unknown regularizer tag: {other}"))),
        }
    }

    pub fn value(&self, x: &Array2<f64>) -> f64 {
        match self {
            Regularizer::NonNeg => 0.0,
            Regularizer::L2 => x.iter().map(|v| v * v).sum(),
            Regularizer::L1 => x.iter().map(|v| v.abs()).sum(),
        }
    }
}

/// Exact proximal maps: nonneg -> max(x, 0); l2 -> x / (1 + 2 t);
/// l1 -> soft threshold at t, where t = lambda * alpha >= 0.
pub fn prox(reg: Regularizer, threshold: f64, x: &Array2<f64>) -> Result<Array2<f64>> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(PatError::Invalid(format!(
            "prox: threshold must be >= 0, got {threshold}"
        )));
    }
    Ok(match reg {
        Regularizer::NonNeg => x.mapv(|v| v.max(0.0)),
        Regularizer::L2 => x.mapv(|v| v / (1.0 + 2.0 * threshold)),
        Regularizer::L1 => x.mapv(|v| v.signum() * (v.abs() - threshold).max(0.0)),
    })
}

/// Dual-space proximal step (q + sigma * residual) / (1 + sigma).
pub fn dual_prox(q: &Array2<f64>, residual: &Array2<f64>, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(PatError::Invalid(format!("dual_prox: sigma must be > 0, got {sigma}")));
    }
    Ok((q + &(residual * sigma)) / (1.0 + sigma))
}

/// Forward/backward operator handles; `forward` may be a learned correction
/// and is therefore not required to be linear.
pub struct VariationalProblem {
    pub forward: Box<dyn Fn(&Array2<f64>) -> Array2<f64> + Send + Sync>,
    pub back: Box<dyn Fn(&Array2<f64>) -> Array2<f64> + Send + Sync>,
    pub data: Array2<f64>,
    pub reg: Regularizer,
    /// Regularization weight, >= 0.
    pub weight: f64,
    /// Operator norm estimate used for step-size checks.
    pub norm_estimate: f64,
}

impl VariationalProblem {
    pub fn new(
        forward: Box<dyn Fn(&Array2<f64>) -> Array2<f64> + Send + Sync>,
        back: Box<dyn Fn(&Array2<f64>) -> Array2<f64> + Send + Sync>,
        data: Array2<f64>,
        reg: Regularizer,
        weight: f64,
        domain: (usize, usize),
    ) -> Result<VariationalProblem> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(PatError::Invalid(format!("lambda must be >= 0, got {weight}")));
        }
        let mut prob = VariationalProblem {
            forward,
            back,
            data,
            reg,
            weight,
            norm_estimate: 0.0,
        };
        prob.norm_estimate = prob.estimate_norm(domain, 50)?;
        Ok(prob)
    }

    pub fn from_field_op(
        op: Arc<dyn FieldOp>,
        data: Array2<f64>,
        reg: Regularizer,
        weight: f64,
    ) -> Result<VariationalProblem> {
        if data.dim() != op.range_shape() {
            return Err(PatError::shape(
                "VariationalProblem",
                format!("{:?}", op.range_shape()),
                format!("{:?}", data.dim()),
            ));
        }
        let domain = op.domain_shape();
        let fwd = Arc::clone(&op);
        let adj = Arc::clone(&op);
        VariationalProblem::new(
            Box::new(move |x| fwd.apply(x)),
            Box::new(move |y| adj.apply_transpose(y)),
            data,
            reg,
            weight,
            domain,
        )
    }

    /// Power iteration on back(forward(.)); 50 iterations by default. For a
    /// true adjoint pair this is the operator norm; for an approximate pair
    /// it is the heuristic used in step-size checks.
    fn estimate_norm(&self, domain: (usize, usize), iters: usize) -> Result<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut v = Array2::from_shape_fn(domain, |_| rng.gen::<f64>() - 0.5);
        let n = l2_norm(&v);
        if n == 0.0 {
            return Ok(0.0);
        }
        v.mapv_inplace(|x| x / n);
        let mut estimate: f64 = 0.0;
        for _ in 0..iters {
            let next = (self.back)(&(self.forward)(&v));
            estimate = v
                .iter()
                .zip(next.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .max(0.0);
            let nn = l2_norm(&next);
            if nn == 0.0 || !nn.is_finite() {
                return Ok(estimate.max(0.0).sqrt());
            }
            v = next / nn;
        }
        Ok(estimate.sqrt())
    }

    /// J(x) = 1/2 |F x - y|^2 + lambda R(x).
    pub fn objective(&self, x: &Array2<f64>) -> f64 {
        let r = (self.forward)(x) - &self.data;
        0.5 * r.iter().map(|v| v * v).sum::<f64>() + self.weight * self.reg.value(x)
    }
}

/// Step sizes and iteration limits shared by the classical solvers and the
/// fixed-point machinery.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Dual step, > 0.
    pub sigma: f64,
    /// Primal step (also the proximal-gradient step), > 0.
    pub tau: f64,
    /// Over-relaxation in [0, 1], applied to the primal.
    pub theta: f64,
    /// Maximum iterations, >= 1.
    pub max_iters: usize,
    /// Stop when the relative primal residual falls below this.
    pub tol: f64,
    /// Anderson memory, >= 1.
    pub memory: usize,
    /// Anderson regularization; None selects 1e-10 tr(H^T H)/m.
    pub anderson_reg: Option<f64>,
}

impl SolverConfig {
    pub fn new(sigma: f64, tau: f64, max_iters: usize) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            sigma,
            tau,
            theta: 1.0,
            max_iters,
            tol: 0.0,
            memory: 5,
            anderson_reg: None,
        };
        cfg.validate()
    }

    pub fn validate(self) -> Result<SolverConfig> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(PatError::Invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(PatError::Invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(PatError::Invalid(format!("theta must be in [0,1], got {}", self.theta)));
        }
        if self.max_iters == 0 {
            return Err(PatError::Invalid("max_iters must be >= 1".into()));
        }
        if self.memory == 0 {
            return Err(PatError::Invalid("memory must be >= 1".into()));
        }
        Ok(self)
    }
}

fn relative_change(next: &Array2<f64>, prev: &Array2<f64>) -> f64 {
    let num = next
        .iter()
        .zip(prev.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    num / l2_norm(next).max(1e-300)
}

fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Proximal gradient descent x <- prox(x - tau * back(forward(x) - y)).
/// The objective must be monotone nonincreasing; five consecutive increases
/// abort with the trace attached.
pub fn proximal_gradient(
    prob: &VariationalProblem,
    cfg: &SolverConfig,
    x0: &Array2<f64>,
) -> Result<(Array2<f64>, FixedPointTrace)> {
    let cfg = cfg.validate()?;
    let gamma = cfg.tau;
    let mut trace = FixedPointTrace::new();
    let l2 = prob.norm_estimate * prob.norm_estimate;
    if gamma > 1.0 / l2.max(1e-300) {
        trace
            .warnings
            .push(format!("step {gamma} exceeds 1/L^2 = {}", 1.0 / l2));
        trace.unstable = true;
    }
    let mut x = x0.clone();
    let mut last_obj = prob.objective(&x);
    let mut increases = 0usize;
    for _ in 0..cfg.max_iters {
        let t0 = Instant::now();
        let grad = (prob.back)(&(&(prob.forward)(&x) - &prob.data));
        let candidate = prox(prob.reg, prob.weight * gamma, &(&x - &(grad * gamma)))?;
        if !all_finite(&candidate) {
            return Err(PatError::SolverDiverged {
                reason: "non-finite iterate in proximal gradient".into(),
                trace: Box::new(trace),
            });
        }
        let obj = prob.objective(&candidate);
        let r = relative_change(&candidate, &x);
        trace.push(r, 0.0, obj, t0.elapsed().as_secs_f64());
        if obj > last_obj + 1e-12 {
            increases += 1;
            if increases >= 5 {
                trace.unstable = true;
                return Err(PatError::SolverDiverged {
                    reason: "objective increased 5 consecutive iterations".into(),
                    trace: Box::new(trace),
                });
            }
        } else {
            increases = 0;
        }
        last_obj = obj;
        x = candidate;
        if cfg.tol > 0.0 && r <= cfg.tol {
            break;
        }
    }
    Ok((x, trace))
}

/// Primal-dual hybrid gradient for the saddle formulation; dual prox is the
/// data-fit resolvent, primal prox the regularizer's. Convergence requires
/// sigma tau L^2 < 1 with theta = 1; violating it sets a warning and the
/// `unstable` flag but still runs.
pub fn pdhg(
    prob: &VariationalProblem,
    cfg: &SolverConfig,
    x0: &Array2<f64>,
    q0: &Array2<f64>,
) -> Result<(Array2<f64>, FixedPointTrace)> {
    let cfg = cfg.validate()?;
    let mut trace = FixedPointTrace::new();
    let l = prob.norm_estimate;
    let product = cfg.sigma * cfg.tau * l * l;
    if product >= 1.0 {
        trace.warnings.push(format!(
            "sigma*tau*L^2 = {product:.3} violates the step rule (< 1 required)"
        ));
        trace.unstable = true;
    }
    let mut x = x0.clone();
    let mut x_relaxed = x0.clone();
    let mut q = q0.clone();
    for _ in 0..cfg.max_iters {
        let t0 = Instant::now();
        let residual = (prob.forward)(&x_relaxed) - &prob.data;
        let q_next = dual_prox(&q, &residual, cfg.sigma)?;
        let step = &x - &((prob.back)(&q_next) * cfg.tau);
        let x_next = prox(prob.reg, prob.weight * cfg.tau, &step)?;
        if !all_finite(&x_next) || !all_finite(&q_next) {
            return Err(PatError::SolverDiverged {
                reason: "non-finite iterate in PDHG".into(),
                trace: Box::new(trace),
            });
        }
        let r = relative_change(&x_next, &x);
        let d = relative_change(&q_next, &q);
        x_relaxed = &x_next + &((&x_next - &x) * cfg.theta);
        let obj = prob.objective(&x_next);
        trace.push(r, d, obj, t0.elapsed().as_secs_f64());
        x = x_next;
        q = q_next;
        if cfg.tol > 0.0 && r <= cfg.tol {
            break;
        }
    }
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::IdentityOp;
    use ndarray::array;

    #[test]
    fn prox_nonneg_projects() {
        let x = array![[-1.0, 2.0]];
        let p = prox(Regularizer::NonNeg, 0.3, &x).unwrap();
        assert_eq!(p, array![[0.0, 2.0]]);
    }

    #[test]
    fn prox_l1_soft_thresholds() {
        let x = array![[0.3, -2.0]];
        let p = prox(Regularizer::L1, 0.5, &x).unwrap();
        assert!((p[[0, 0]] - 0.0).abs() < 1e-15);
        assert!((p[[0, 1]] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn prox_l2_shrinks() {
        let x = array![[4.0]];
        let p = prox(Regularizer::L2, 0.5, &x).unwrap();
        assert!((p[[0, 0]] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn prox_rejects_negative_threshold() {
        assert!(prox(Regularizer::L1, -1.0, &array![[1.0]]).is_err());
    }

    #[test]
    fn dual_prox_formulas() {
        let zero = Array2::zeros((1, 2));
        assert_eq!(dual_prox(&zero, &zero, 1.0).unwrap(), zero);
        let q = Array2::ones((1, 2));
        let r = Array2::ones((1, 2));
        // Fixed point of the map at q = residual = 1.
        assert_eq!(dual_prox(&q, &r, 1.0).unwrap(), q);
        let two = &r * 2.0;
        let got = dual_prox(&zero, &two, 1.0).unwrap();
        assert_eq!(got, r);
    }

    #[test]
    fn proximal_gradient_identity_least_squares() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let y = Array2::from_shape_fn((4, 4), |_| rng.gen::<f64>());
        let prob = VariationalProblem::from_field_op(
            Arc::new(IdentityOp((4, 4))),
            y.clone(),
            Regularizer::NonNeg,
            0.0,
        )
        .unwrap();
        let cfg = SolverConfig::new(1.0, 0.9, 200).unwrap();
        let (x, trace) = proximal_gradient(&prob, &cfg, &Array2::zeros((4, 4))).unwrap();
        assert!(l2_norm(&(&x - &y)) <= 1e-8, "residual {}", l2_norm(&(&x - &y)));
        // Monotone objective.
        for w in trace.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn proximal_gradient_from_optimum_stays_put() {
        let y = Array2::from_elem((3, 3), 0.7);
        let prob = VariationalProblem::from_field_op(
            Arc::new(IdentityOp((3, 3))),
            y.clone(),
            Regularizer::NonNeg,
            0.0,
        )
        .unwrap();
        let cfg = SolverConfig::new(1.0, 0.5, 10).unwrap();
        let (_, trace) = proximal_gradient(&prob, &cfg, &y).unwrap();
        assert!(trace.primal_res.iter().all(|&r| r <= 1e-10));
    }
}
