//! Model-corrected learned primal-dual reconstruction.
//!
//! One iteration couples a dual-space correction net applied to the fast
//! forward output with a learned primal update around the fast inverse:
//!
//!   q_{k+1} = (q_k + sigma (F(A_fast x_k, y) - y)) / (1 + sigma)
//!   x_{k+1} = G(x_k - tau A_inv q_{k+1}, x_k)
//!
//! The dual net F sees (fast-forward output, measured data) and corrects the
//! first channel; the primal net G sees the plain primal step as its
//! residual channel with the previous iterate as context, so freshly
//! initialized nets reproduce classical PDHG-style updates exactly.
//!
//! The same step runs three ways: unrolled with backprop through all
//! iterations, as an Anderson-accelerated fixed-point iteration trained by
//! implicit differentiation of the fixed-point equation, and as a hybrid of
//! the two.

mod anderson;
mod train;

pub use anderson::{anderson_update, AndersonBuffer, AndersonState};
pub use train::{identity_model, train, LogRow, TrainConfig, TrainLog, TrainMethod, TrainSample};

use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, ArrayD};

use crate::autodiff::{DiffTensor, NetBinding, NetParams, Tape};
use crate::error::{PatError, Result};
use crate::fastops::{
    fast_forward_raw, fast_inverse_raw, FastForwardOp, FastInverseOp, KSpacePlan,
};
use crate::field::{l2_norm, Image, SensorData};
use crate::linop::FieldOp;
use crate::trace::FixedPointTrace;

/// Correction (dual-space) and update (primal-space) networks, weights
/// shared across all iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct NetPair {
    pub correction: NetParams,
    pub update: NetParams,
}

/// Reconstruction-time configuration of the learned primal-dual iteration.
#[derive(Debug, Clone, Copy)]
pub struct PdConfig {
    pub sigma: f64,
    pub tau: f64,
    /// Iteration count K; 0 returns the initial reconstruction.
    pub iterations: usize,
    /// Anderson memory (1 = plain fixed-point iteration).
    pub memory: usize,
    /// Anderson regularization; None selects 1e-10 tr(H^T H)/m.
    pub anderson_reg: Option<f64>,
    /// Optional early stop on the relative primal residual.
    pub residual_tol: Option<f64>,
    /// Multiplier on the initial reconstruction A_inv y, compensating the
    /// limited-view energy loss.
    pub input_scale: f64,
}

impl PdConfig {
    /// Defaults tied to the plan's measured forward scale:
    /// sigma = tau = 1/(10 L), 10 iterations, memory 5, input scale 4.
    ///
    /// L is the plan's typical gain, not the converged power-iteration
    /// norm: the latter is dominated by a thin set of near-singular
    /// band-weight modes and would collapse the steps to the point where
    /// the data-consistency updates have no effect. The primal round trip
    /// goes through the reciprocal weighting, so its gain stays O(1) and
    /// the iteration remains stable at these steps.
    pub fn for_plan(plan: &KSpacePlan) -> PdConfig {
        let l = plan.typical_gain().max(1e-12);
        PdConfig {
            sigma: 1.0 / (10.0 * l),
            tau: 1.0 / (10.0 * l),
            iterations: 10,
            memory: 5,
            anderson_reg: None,
            residual_tol: None,
            input_scale: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(PatError::Invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(PatError::Invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.memory == 0 {
            return Err(PatError::Invalid("memory must be >= 1".into()));
        }
        Ok(())
    }
}

fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
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

/// One model-corrected primal-dual step; pure function of its inputs.
pub fn pd_step(
    x: &Array2<f64>,
    q: &Array2<f64>,
    y: &Array2<f64>,
    nets: &NetPair,
    plan: &KSpacePlan,
    sigma: f64,
    tau: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let ax = fast_forward_raw(plan, x);
    let corrected = nets.correction.apply(&[&ax, y])?;
    let q_next = (q + &((&corrected - y) * sigma)) * (1.0 / (1.0 + sigma));
    let back = fast_inverse_raw(plan, &q_next);
    let primal_step = x - &(back * tau);
    let x_next = nets.update.apply(&[&primal_step, x])?;
    if !all_finite(&x_next) || !all_finite(&q_next) {
        return Err(PatError::NonFinite("pd_step".into()));
    }
    Ok((x_next, q_next))
}

/// Tape version of [`pd_step`] against pre-bound net parameters.
pub(crate) fn pd_step_tape(
    tape: &mut Tape,
    nets: &NetPair,
    bind_correction: &NetBinding,
    bind_update: &NetBinding,
    x: DiffTensor,
    q: DiffTensor,
    y: DiffTensor,
    fwd_op: &Arc<dyn FieldOp>,
    inv_op: &Arc<dyn FieldOp>,
    sigma: f64,
    tau: f64,
) -> Result<(DiffTensor, DiffTensor)> {
    let ax = tape.linear(x, Arc::clone(fwd_op))?;
    let corrected = nets
        .correction
        .forward_bound(tape, bind_correction, &[ax, y])?;
    let residual = tape.sub(corrected, y)?;
    let scaled = tape.scale(residual, sigma);
    let q_sum = tape.add(q, scaled)?;
    let q_next = tape.scale(q_sum, 1.0 / (1.0 + sigma));
    let back = tape.linear(q_next, Arc::clone(inv_op))?;
    let tau_back = tape.scale(back, tau);
    let primal_step = tape.sub(x, tau_back)?;
    let x_next = nets
        .update
        .forward_bound(tape, bind_update, &[primal_step, x])?;
    Ok((x_next, q_next))
}

fn data_fit(plan: &KSpacePlan, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let r = fast_forward_raw(plan, x) - y;
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

pub(crate) fn mcpd_run(
    y: &Array2<f64>,
    nets: &NetPair,
    plan: &KSpacePlan,
    cfg: &PdConfig,
) -> Result<(Array2<f64>, Array2<f64>, FixedPointTrace)> {
    cfg.validate()?;
    let mut x = fast_inverse_raw(plan, y) * cfg.input_scale;
    let mut q = Array2::zeros(plan.grid().data_shape());
    let mut trace = FixedPointTrace::new();
    for _ in 0..cfg.iterations {
        let t0 = Instant::now();
        let (x_next, q_next) = pd_step(&x, &q, y, nets, plan, cfg.sigma, cfg.tau)?;
        let r = relative_change(&x_next, &x);
        let d = relative_change(&q_next, &q);
        let obj = data_fit(plan, &x_next, y);
        trace.push(r, d, obj, t0.elapsed().as_secs_f64());
        x = x_next;
        q = q_next;
        if let Some(tol) = cfg.residual_tol {
            if r <= tol {
                break;
            }
        }
    }
    Ok((x, q, trace))
}

/// Model-corrected learned primal-dual: x_0 = input_scale * A_inv y,
/// q_0 = 0, then exactly K steps (or fewer when `residual_tol` is hit).
pub fn mcpd_reconstruct(
    y: &SensorData,
    nets: &NetPair,
    plan: &KSpacePlan,
    cfg: &PdConfig,
) -> Result<(Image, FixedPointTrace)> {
    check_data_grid(y, plan)?;
    let (x, _, trace) = mcpd_run(y.values(), nets, plan, cfg)?;
    Ok((Image::new(x, plan.grid())?, trace))
}

fn check_data_grid(y: &SensorData, plan: &KSpacePlan) -> Result<()> {
    if y.grid() != plan.grid() {
        return Err(PatError::shape(
            "learned reconstruction",
            format!("{:?}", plan.grid().data_shape()),
            format!("{:?}", y.grid().data_shape()),
        ));
    }
    Ok(())
}

fn flatten(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn unflatten(v: Vec<f64>, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(shape, v).expect("length preserved")
}

pub(crate) fn pddeq_run(
    y: &Array2<f64>,
    nets: &NetPair,
    plan: &KSpacePlan,
    cfg: &PdConfig,
    x0: Option<&Array2<f64>>,
    q0: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, Array2<f64>, FixedPointTrace)> {
    cfg.validate()?;
    let image_shape = plan.grid().image_shape();
    let data_shape = plan.grid().data_shape();
    let mut x = match x0 {
        Some(v) => v.clone(),
        None => fast_inverse_raw(plan, y) * cfg.input_scale,
    };
    let mut q = match q0 {
        Some(v) => v.clone(),
        None => Array2::zeros(data_shape),
    };
    let mut state = AndersonState::new(cfg.memory, cfg.anderson_reg)?;
    let mut trace = FixedPointTrace::new();
    for _ in 0..cfg.iterations {
        let t0 = Instant::now();
        let step = pd_step(&x, &q, y, nets, plan, cfg.sigma, cfg.tau);
        let (x_raw, q_raw) = match step {
            Ok(pair) => pair,
            Err(PatError::NonFinite(_)) => {
                trace.unstable = true;
                return Err(PatError::SolverDiverged {
                    reason: "non-finite iterate in PD-DEQ forward".into(),
                    trace: Box::new(trace),
                });
            }
            Err(e) => return Err(e),
        };
        // Memory 1 bypasses the mixer so the run is bit-identical to
        // repeated pd_step.
        let (x_next, q_next) = if cfg.memory == 1 {
            (x_raw, q_raw)
        } else {
            let q_mixed = state.dual.update(&flatten(&q), &flatten(&q_raw))?;
            let x_mixed = state.primal.update(&flatten(&x), &flatten(&x_raw))?;
            (unflatten(x_mixed, image_shape), unflatten(q_mixed, data_shape))
        };
        if !all_finite(&x_next) || !all_finite(&q_next) {
            trace.unstable = true;
            return Err(PatError::SolverDiverged {
                reason: "non-finite iterate in PD-DEQ forward".into(),
                trace: Box::new(trace),
            });
        }
        let r = relative_change(&x_next, &x);
        let d = relative_change(&q_next, &q);
        let obj = data_fit(plan, &x_next, y);
        trace.push(r, d, obj, t0.elapsed().as_secs_f64());
        x = x_next;
        q = q_next;
        if let Some(tol) = cfg.residual_tol {
            if r <= tol {
                break;
            }
        }
    }
    if let (Some(&first), Some(&last)) = (trace.primal_res.first(), trace.primal_res.last()) {
        if last > 10.0 * first.max(1e-300) {
            trace.unstable = true;
            trace.warnings.push("primal residuals grew over the run".into());
        }
    }
    Ok((x, q, trace))
}

/// Anderson-accelerated fixed-point iteration of [`pd_step`] on both
/// variables. `x0`/`q0` default to input_scale * A_inv y and 0.
pub fn pddeq_forward(
    y: &SensorData,
    nets: &NetPair,
    plan: &KSpacePlan,
    cfg: &PdConfig,
    x0: Option<&Image>,
    q0: Option<&SensorData>,
) -> Result<((Image, SensorData), FixedPointTrace)> {
    check_data_grid(y, plan)?;
    let (x, q, trace) = pddeq_run(
        y.values(),
        nets,
        plan,
        cfg,
        x0.map(|v| v.values()),
        q0.map(|v| v.values()),
    )?;
    Ok(((Image::new(x, plan.grid())?, SensorData::new(q, plan.grid())?), trace))
}

/// Gradient of the fixed-point reconstruction loss |x* - target|^2 (mean)
/// with respect to all net parameters, by implicit differentiation of the
/// fixed-point equation at (x*, q*): solves v = v0 + J^T v by fixed-point
/// iteration (vector-Jacobian products on a one-step tape), then seeds the
/// parameter backward pass with v*. With `jacobian_free` the truncation
/// v* = v0 is used instead.
///
/// Returns gradients in flat-parameter order, correction net first.
#[allow(clippy::too_many_arguments)]
pub fn pddeq_backward(
    x_star: &Array2<f64>,
    q_star: &Array2<f64>,
    y: &Array2<f64>,
    target: &Array2<f64>,
    nets: &NetPair,
    plan: &Arc<KSpacePlan>,
    sigma: f64,
    tau: f64,
    implicit_iters: usize,
    implicit_tol: f64,
    jacobian_free: bool,
) -> Result<Vec<ArrayD<f64>>> {
    let mut tape = Tape::new();
    let x_leaf = tape.leaf(x_star.clone().into_dyn());
    let q_const = tape.constant(q_star.clone().into_dyn());
    let y_const = tape.constant(y.clone().into_dyn());
    let bind_c = nets.correction.bind(&mut tape);
    let bind_u = nets.update.bind(&mut tape);
    let fwd_op: Arc<dyn FieldOp> = Arc::new(FastForwardOp(Arc::clone(plan)));
    let inv_op: Arc<dyn FieldOp> = Arc::new(FastInverseOp(Arc::clone(plan)));
    let (x_out, _q_out) = pd_step_tape(
        &mut tape, nets, &bind_c, &bind_u, x_leaf, q_const, y_const, &fwd_op, &inv_op, sigma, tau,
    )?;

    let n = x_star.len() as f64;
    let v0: ArrayD<f64> = ((x_star - target) * (2.0 / n)).into_dyn();
    let x_shape: Vec<usize> = v0.shape().to_vec();

    let v_star = if jacobian_free {
        v0.clone()
    } else {
        let mut v = v0.clone();
        let mut converged = false;
        for _ in 0..implicit_iters {
            let grads = tape.backward_with(x_out, &v)?;
            let jtv = grads.get_or_zeros(x_leaf, &x_shape);
            let v_next = &v0 + &jtv;
            let change = (&v_next - &v).iter().map(|d| d * d).sum::<f64>().sqrt();
            let scale = v_next.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-300);
            v = v_next;
            if change / scale <= implicit_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(PatError::ImplicitSolve {
                iterations: implicit_iters,
            });
        }
        v
    };

    let grads = tape.backward_with(x_out, &v_star)?;
    let mut out = Vec::new();
    for (w, b) in bind_c.weights.iter().zip(&bind_c.biases) {
        out.push(grads.get_or_zeros(*w, tape.shape(*w)));
        out.push(grads.get_or_zeros(*b, tape.shape(*b)));
    }
    for (w, b) in bind_u.weights.iter().zip(&bind_u.biases) {
        out.push(grads.get_or_zeros(*w, tape.shape(*w)));
        out.push(grads.get_or_zeros(*b, tape.shape(*b)));
    }
    Ok(out)
}

/// First `split.0` unrolled steps with the first net pair, then `split.1`
/// Anderson-accelerated steps with the second pair from the handed-over
/// (x, q).
pub fn hybrid_reconstruct(
    y: &SensorData,
    mcpd_nets: &NetPair,
    deq_nets: &NetPair,
    plan: &KSpacePlan,
    cfg: &PdConfig,
    split: (usize, usize),
) -> Result<(Image, (FixedPointTrace, FixedPointTrace))> {
    check_data_grid(y, plan)?;
    let stage1_cfg = PdConfig {
        iterations: split.0,
        ..*cfg
    };
    let (x1, q1, trace1) = mcpd_run(y.values(), mcpd_nets, plan, &stage1_cfg)?;
    let stage2_cfg = PdConfig {
        iterations: split.1,
        ..*cfg
    };
    let (x2, _, trace2) = pddeq_run(y.values(), deq_nets, plan, &stage2_cfg, Some(&x1), Some(&q1))?;
    Ok((Image::new(x2, plan.grid())?, (trace1, trace2)))
}

/// Post-processing baseline: one fast inverse, one net evaluation.
pub fn postprocess_reconstruct(
    y: &SensorData,
    net: &NetParams,
    plan: &KSpacePlan,
    input_scale: f64,
) -> Result<Image> {
    check_data_grid(y, plan)?;
    let x0 = fast_inverse_raw(plan, y.values()) * input_scale;
    let out = net.apply(&[&x0])?;
    Image::new(out, plan.grid())
}

/// A trained model together with its method tag.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    PostProcess(NetParams),
    McPd(NetPair),
    PdDeq(NetPair),
    Hybrid { mcpd: NetPair, deq: NetPair },
}

impl TrainedModel {
    pub fn method(&self) -> TrainMethod {
        match self {
            TrainedModel::PostProcess(_) => TrainMethod::PostProcess,
            TrainedModel::McPd(_) => TrainMethod::McPd,
            TrainedModel::PdDeq(_) => TrainMethod::PdDeq,
            TrainedModel::Hybrid { .. } => TrainMethod::Hybrid,
        }
    }

    /// Nets in checkpoint order: postproc [net]; mcpd/pddeq
    /// [correction, update]; hybrid [c1, u1, c2, u2].
    pub fn nets(&self) -> Vec<&NetParams> {
        match self {
            TrainedModel::PostProcess(n) => vec![n],
            TrainedModel::McPd(p) | TrainedModel::PdDeq(p) => vec![&p.correction, &p.update],
            TrainedModel::Hybrid { mcpd, deq } => vec![
                &mcpd.correction,
                &mcpd.update,
                &deq.correction,
                &deq.update,
            ],
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::autodiff::save_nets(path, &self.nets())
    }

    pub fn load(path: &std::path::Path, method: TrainMethod) -> Result<TrainedModel> {
        let mut nets = crate::autodiff::load_nets(path)?;
        let expected = match method {
            TrainMethod::PostProcess => 1,
            TrainMethod::McPd | TrainMethod::PdDeq => 2,
            TrainMethod::Hybrid => 4,
        };
        if nets.len() != expected {
            return Err(PatError::Invalid(format!(
                "checkpoint holds {} nets, method {method:?} needs {expected}",
                nets.len()
            )));
        }
        Ok(match method {
            TrainMethod::PostProcess => TrainedModel::PostProcess(nets.remove(0)),
            TrainMethod::McPd => TrainedModel::McPd(NetPair {
                correction: nets.remove(0),
                update: nets.remove(0),
            }),
            TrainMethod::PdDeq => TrainedModel::PdDeq(NetPair {
                correction: nets.remove(0),
                update: nets.remove(0),
            }),
            TrainMethod::Hybrid => {
                let mcpd = NetPair {
                    correction: nets.remove(0),
                    update: nets.remove(0),
                };
                let deq = NetPair {
                    correction: nets.remove(0),
                    update: nets.remove(0),
                };
                TrainedModel::Hybrid { mcpd, deq }
            }
        })
    }

    /// Reconstructs `y` with this model. The hybrid split is K/2 each when
    /// `cfg.iterations` = K.
    pub fn reconstruct(
        &self,
        y: &SensorData,
        plan: &KSpacePlan,
        cfg: &PdConfig,
    ) -> Result<(Image, FixedPointTrace)> {
        match self {
            TrainedModel::PostProcess(net) => {
                let img = postprocess_reconstruct(y, net, plan, cfg.input_scale)?;
                Ok((img, FixedPointTrace::new()))
            }
            TrainedModel::McPd(p) => mcpd_reconstruct(y, p, plan, cfg),
            TrainedModel::PdDeq(p) => {
                let ((x, _), trace) = pddeq_forward(y, p, plan, cfg, None, None)?;
                Ok((x, trace))
            }
            TrainedModel::Hybrid { mcpd, deq } => {
                let half = cfg.iterations / 2;
                let split = (cfg.iterations - half, half);
                let (x, (mut t1, t2)) = hybrid_reconstruct(y, mcpd, deq, plan, cfg, split)?;
                t1.primal_res.extend(t2.primal_res);
                t1.dual_res.extend(t2.dual_res);
                t1.objective.extend(t2.objective);
                t1.wall_clock.extend(t2.wall_clock);
                t1.unstable |= t2.unstable;
                t1.warnings.extend(t2.warnings);
                Ok((x, t1))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::NetConfig;
    use crate::fastops::build_plan;
    use crate::grid::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_plan() -> Arc<KSpacePlan> {
        build_plan(&Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap()).unwrap()
    }

    pub(crate) fn identity_nets(plan: &KSpacePlan) -> NetPair {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let correction = NetParams::init(
            &NetConfig::small(2, plan.grid().data_shape()),
            &mut rng,
        )
        .unwrap();
        let update = NetParams::init(
            &NetConfig::small(2, plan.grid().image_shape()),
            &mut rng,
        )
        .unwrap();
        NetPair { correction, update }
    }

    fn zero_nets(plan: &KSpacePlan) -> NetPair {
        let mut pair = identity_nets(plan);
        for net in [&mut pair.correction, &mut pair.update] {
            net.residual_channel = None;
            for l in &mut net.layers {
                l.weight.fill(0.0);
                l.bias.fill(0.0);
            }
        }
        pair
    }

    #[test]
    fn consistent_data_is_a_fixed_point() {
        use rand::Rng;
        let plan = small_plan();
        let nets = identity_nets(&plan);
        let g = *plan.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Array2<f64> = Array2::from_shape_fn(g.image_shape(), |_| rng.gen());
        let y = fast_forward_raw(&plan, &x);
        let q = Array2::zeros(g.data_shape());
        let (x1, q1) = pd_step(&x, &q, &y, &nets, &plan, 0.3, 0.3).unwrap();
        assert_eq!(q1, Array2::zeros(g.data_shape()));
        assert_eq!(x1, x);
    }

    #[test]
    fn zero_nets_evaluate_the_formulas() {
        use rand::Rng;
        let plan = small_plan();
        let nets = zero_nets(&plan);
        let g = *plan.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Array2::from_shape_fn(g.image_shape(), |_| rng.gen::<f64>());
        let q = Array2::from_shape_fn(g.data_shape(), |_| rng.gen::<f64>());
        let y = Array2::from_shape_fn(g.data_shape(), |_| rng.gen::<f64>());
        let sigma = 0.7;
        let (x1, q1) = pd_step(&x, &q, &y, &nets, &plan, sigma, 0.5).unwrap();
        let expected_q = (&q - &(&y * sigma)) * (1.0 / (1.0 + sigma));
        assert_eq!(q1, expected_q);
        assert!(x1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pd_step_is_deterministic() {
        use rand::Rng;
        let plan = small_plan();
        let nets = identity_nets(&plan);
        let g = *plan.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = Array2::from_shape_fn(g.image_shape(), |_| rng.gen::<f64>());
        let q = Array2::from_shape_fn(g.data_shape(), |_| rng.gen::<f64>());
        let y = Array2::from_shape_fn(g.data_shape(), |_| rng.gen::<f64>());
        let a = pd_step(&x, &q, &y, &nets, &plan, 0.2, 0.4).unwrap();
        let b = pd_step(&x, &q, &y, &nets, &plan, 0.2, 0.4).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn mcpd_zero_iterations_returns_initial_reconstruction() {
        let plan = small_plan();
        let nets = identity_nets(&plan);
        let g = *plan.grid();
        let mut y = Array2::zeros(g.data_shape());
        y[[3, 4]] = 1.0;
        let data = SensorData::new(y.clone(), &g).unwrap();
        let cfg = PdConfig {
            iterations: 0,
            input_scale: 1.0,
            ..PdConfig::for_plan(&plan)
        };
        let (img, trace) = mcpd_reconstruct(&data, &nets, &plan, &cfg).unwrap();
        assert_eq!(trace.len(), 0);
        assert_eq!(img.values(), &fast_inverse_raw(&plan, &y));
    }

    #[test]
    fn pddeq_memory_one_equals_repeated_pd_step() {
        use rand::Rng;
        let plan = small_plan();
        let nets = identity_nets(&plan);
        let g = *plan.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let y = Array2::from_shape_fn(g.data_shape(), |_| rng.gen::<f64>() * 0.1);
        let cfg = PdConfig {
            iterations: 6,
            memory: 1,
            ..PdConfig::for_plan(&plan)
        };
        let (x_deq, q_deq, _) = pddeq_run(&y, &nets, &plan, &cfg, None, None).unwrap();
        let mut x = fast_inverse_raw(&plan, &y) * cfg.input_scale;
        let mut q = Array2::zeros(g.data_shape());
        for _ in 0..6 {
            let (xn, qn) = pd_step(&x, &q, &y, &nets, &plan, cfg.sigma, cfg.tau).unwrap();
            x = xn;
            q = qn;
        }
        assert_eq!(x_deq, x);
        assert_eq!(q_deq, q);
    }

    #[test]
    fn hybrid_degenerate_splits_match_components() {
        use rand::Rng;
        let plan = small_plan();
        let nets = identity_nets(&plan);
        let g = *plan.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let y_arr = Array2::from_shape_fn(g.data_shape(), |_| rng.gen::<f64>() * 0.1);
        let y = SensorData::new(y_arr.clone(), &g).unwrap();
        let cfg = PdConfig {
            iterations: 4,
            ..PdConfig::for_plan(&plan)
        };
        // (K, 0): identical to MC-PD.
        let (hx, _) = hybrid_reconstruct(&y, &nets, &nets, &plan, &cfg, (4, 0)).unwrap();
        let (mx, _) = mcpd_reconstruct(&y, &nets, &plan, &cfg).unwrap();
        assert_eq!(hx.values(), mx.values());
        // (0, K): identical to PD-DEQ from the default start.
        let (hx, _) = hybrid_reconstruct(&y, &nets, &nets, &plan, &cfg, (0, 4)).unwrap();
        let ((dx, _), _) = pddeq_forward(&y, &nets, &plan, &cfg, None, None).unwrap();
        assert_eq!(hx.values(), dx.values());
    }

    #[test]
    fn postprocess_identity_net_returns_initial_reconstruction() {
        use rand::Rng;
        let plan = small_plan();
        let nets = identity_nets(&plan);
        let g = *plan.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let y_arr = Array2::from_shape_fn(g.data_shape(), |_| rng.gen::<f64>());
        let y = SensorData::new(y_arr.clone(), &g).unwrap();
        // Identity net (zero final conv + residual): scale 1 returns A_inv y.
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let net = NetParams::init(&NetConfig::small(1, g.image_shape()), &mut rng2).unwrap();
        let img = postprocess_reconstruct(&y, &net, &plan, 1.0).unwrap();
        assert_eq!(img.values(), &fast_inverse_raw(&plan, &y_arr));
        let _ = nets;
    }
}
