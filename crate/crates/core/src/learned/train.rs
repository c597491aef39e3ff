//! Supervised end-to-end training of the learned reconstruction methods.
//!
//! One sample per training iteration, drawn uniformly; Adam with cosine
//! learning-rate decay; MSE loss on the primal variable. MC-PD backprops
//! through all unrolled steps; PD-DEQ differentiates the fixed-point
//! equation; the hybrid alternates per step (first the unrolled loss on the
//! first net pair, then the fixed-point loss on the second pair only).

use std::sync::Arc;

use ndarray::{Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, NetConfig, NetParams, OptimState, Tape};
use crate::diagnostics::psnr;
use crate::error::{PatError, Result};
use crate::fastops::{FastForwardOp, FastInverseOp, KSpacePlan};
use crate::field::{Image, SensorData};
use crate::linop::FieldOp;

use super::{pd_step_tape, pddeq_backward, pddeq_run, NetPair, PdConfig, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMethod {
    PostProcess,
    McPd,
    PdDeq,
    Hybrid,
}

impl TrainMethod {
    pub fn parse(tag: &str) -> Result<TrainMethod> {
        match tag {
            "postproc" => Ok(TrainMethod::PostProcess),
            "mcpd" => Ok(TrainMethod::McPd),
            "pddeq" => Ok(TrainMethod::PdDeq),
            "hybrid" => Ok(TrainMethod::Hybrid),
            other => Err(PatError::Invalid(format!("unknown method: {other}"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TrainMethod::PostProcess => "postproc",
            TrainMethod::McPd => "mcpd",
            TrainMethod::PdDeq => "pddeq",
            TrainMethod::Hybrid => "hybrid",
        }
    }
}

/// A supervised pair: ground-truth image and (noisy) measured data.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub target: Image,
    pub data: SensorData,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Training iteration budget.
    pub steps: usize,
    pub base_lr: f64,
    /// Unrolled / fixed-point iteration count K.
    pub unroll: usize,
    /// Hybrid split (unrolled, fixed-point); must sum to `unroll`.
    pub hybrid_split: (usize, usize),
    /// Anderson memory for the fixed-point forward pass.
    pub memory: usize,
    pub anderson_reg: Option<f64>,
    /// Implicit backward solve budget and tolerance.
    pub implicit_iters: usize,
    pub implicit_tol: f64,
    pub jacobian_free: bool,
    /// Fraction of steps using plain (non-Anderson) forward iteration while
    /// the maps are not yet contractive.
    pub warmup_frac: f64,
    pub input_scale: f64,
    /// None selects sigma = tau = 1/(10 L) from the plan's measured norm.
    pub sigma_tau: Option<(f64, f64)>,
    pub hidden_channels: usize,
    pub conv_layers: usize,
    pub spectral_norm: bool,
    /// Validation PSNR cadence (steps).
    pub val_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: 2000 steps, lr 2e-4, K = 10, memory 5.
    pub fn desk(seed: u64) -> TrainConfig {
        TrainConfig {
            steps: 2000,
            base_lr: 2e-4,
            unroll: 10,
            hybrid_split: (5, 5),
            memory: 5,
            anderson_reg: None,
            implicit_iters: 20,
            implicit_tol: 1e-4,
            jacobian_free: false,
            warmup_frac: 0.1,
            input_scale: 4.0,
            sigma_tau: None,
            hidden_channels: 16,
            conv_layers: 3,
            spectral_norm: false,
            val_every: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(PatError::Invalid("steps must be >= 1".into()));
        }
        if self.hybrid_split.0 + self.hybrid_split.1 != self.unroll {
            return Err(PatError::Invalid(format!(
                "hybrid split {:?} must sum to unroll {}",
                self.hybrid_split, self.unroll
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(PatError::Invalid("base_lr must be > 0".into()));
        }
        Ok(())
    }

    fn pd_config(&self, plan: &KSpacePlan) -> PdConfig {
        let mut cfg = PdConfig::for_plan(plan);
        if let Some((s, t)) = self.sigma_tau {
            cfg.sigma = s;
            cfg.tau = t;
        }
        cfg.iterations = self.unroll;
        cfg.memory = self.memory;
        cfg.anderson_reg = self.anderson_reg;
        cfg.input_scale = self.input_scale;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// CSV `step,lr,train_loss,val_psnr` (empty val column off-cadence).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,lr,train_loss,val_psnr")?;
        for r in &self.rows {
            match r.val_psnr {
                Some(v) => writeln!(w, "{},{},{},{}", r.step, r.lr, r.train_loss, v)?,
                None => writeln!(w, "{},{},{},", r.step, r.lr, r.train_loss)?,
            }
        }
        Ok(())
    }
}

struct RunningMean {
    window: std::collections::VecDeque<f64>,
    cap: usize,
}

impl RunningMean {
    fn new(cap: usize) -> RunningMean {
        RunningMean {
            window: Default::default(),
            cap,
        }
    }
    fn push(&mut self, v: f64) {
        self.window.push_back(v);
        if self.window.len() > self.cap {
            self.window.pop_front();
        }
    }
    fn mean(&self) -> f64 {
        if self.window.is_empty() {
            return f64::NAN;
        }
        self.window.iter().sum::<f64>() / self.window.len() as f64
    }
}

fn init_pair(plan: &KSpacePlan, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<NetPair> {
    let data_cfg = NetConfig {
        in_channels: 2,
        hidden_channels: cfg.hidden_channels,
        conv_layers: cfg.conv_layers,
        leaky_slope: 0.2,
        residual_channel: Some(0),
        spectral_norm: false,
        field_shape: plan.grid().data_shape(),
    };
    let image_cfg = NetConfig {
        in_channels: 2,
        hidden_channels: cfg.hidden_channels,
        conv_layers: cfg.conv_layers,
        leaky_slope: 0.2,
        residual_channel: Some(0),
        // Only the primal update net is Lipschitz-constrained when the
        // spectral flag is on; the correction net stays unconstrained.
        spectral_norm: cfg.spectral_norm,
        field_shape: plan.grid().image_shape(),
    };
    Ok(NetPair {
        correction: NetParams::init(&data_cfg, rng)?,
        update: NetParams::init(&image_cfg, rng)?,
    })
}

fn pair_params(pair: &NetPair) -> Vec<ArrayD<f64>> {
    let mut p = pair.correction.flat_params();
    p.extend(pair.update.flat_params());
    p
}

fn set_pair_params(pair: &mut NetPair, params: &[ArrayD<f64>]) -> Result<()> {
    let nc = 2 * pair.correction.layers.len();
    pair.correction.set_flat_params(&params[..nc])?;
    pair.update.set_flat_params(&params[nc..])?;
    Ok(())
}

fn apply_spectral_projection(pair: &mut NetPair) -> Result<()> {
    for layer in &mut pair.update.layers {
        if layer.spectral.is_some() {
            crate::autodiff::spectral_normalize(layer)?;
        }
    }
    Ok(())
}

/// Backprop through `k` unrolled steps; returns (loss, grads in pair-param
/// order).
fn unrolled_loss_and_grads(
    pair: &NetPair,
    plan: &Arc<KSpacePlan>,
    pd: &PdConfig,
    k: usize,
    y: &Array2<f64>,
    target: &Array2<f64>,
    start: Option<(&Array2<f64>, &Array2<f64>)>,
) -> Result<(f64, Vec<ArrayD<f64>>, Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let y_const = tape.constant(y.clone().into_dyn());
    let (x0, q0) = match start {
        Some((x, q)) => (x.clone(), q.clone()),
        None => (
            crate::fastops::fast_inverse_raw(plan, y) * pd.input_scale,
            Array2::zeros(plan.grid().data_shape()),
        ),
    };
    let mut x = tape.constant(x0.into_dyn());
    let mut q = tape.constant(q0.into_dyn());
    let bind_c = pair.correction.bind(&mut tape);
    let bind_u = pair.update.bind(&mut tape);
    let fwd_op: Arc<dyn FieldOp> = Arc::new(FastForwardOp(Arc::clone(plan)));
    let inv_op: Arc<dyn FieldOp> = Arc::new(FastInverseOp(Arc::clone(plan)));
    for _ in 0..k {
        let (xn, qn) = pd_step_tape(
            &mut tape, pair, &bind_c, &bind_u, x, q, y_const, &fwd_op, &inv_op, pd.sigma, pd.tau,
        )?;
        x = xn;
        q = qn;
    }
    let target_const = tape.constant(target.clone().into_dyn());
    let loss = tape.mse(x, target_const)?;
    let loss_value = tape.value(loss)[[]];
    let grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for (w, b) in bind_c.weights.iter().zip(&bind_c.biases) {
        out.push(grads.get_or_zeros(*w, tape.shape(*w)));
        out.push(grads.get_or_zeros(*b, tape.shape(*b)));
    }
    for (w, b) in bind_u.weights.iter().zip(&bind_u.biases) {
        out.push(grads.get_or_zeros(*w, tape.shape(*w)));
        out.push(grads.get_or_zeros(*b, tape.shape(*b)));
    }
    let x_final = tape
        .value(x)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("primal is rank 2");
    let q_final = tape
        .value(q)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("dual is rank 2");
    Ok((loss_value, out, x_final, q_final))
}

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

fn validation_psnr(
    model: &TrainedModel,
    val: &[TrainSample],
    plan: &KSpacePlan,
    pd: &PdConfig,
) -> f64 {
    if val.is_empty() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for s in val {
        if let Ok((img, _)) = model.reconstruct(&s.data, plan, pd) {
            if let Ok(p) = psnr(&img, &s.target, 1.0) {
                if p.is_finite() {
                    acc += p;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        acc / count as f64
    }
}

/// Trains the given method. Deterministic for a fixed seed. A non-finite
/// loss aborts with `TrainAborted`; the caller still holds the last finite
/// model via the returned log's side channel (the CLI checkpoints every
/// `val_every` steps for that reason).
pub fn train(
    method: TrainMethod,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    plan: &Arc<KSpacePlan>,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainLog)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(PatError::Invalid("train: dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pd = cfg.pd_config(plan);
    let mut log = TrainLog::default();
    let mut running = RunningMean::new(100);
    let warmup_steps = (cfg.warmup_frac * cfg.steps as f64).floor() as usize;

    match method {
        TrainMethod::PostProcess => {
            let image_cfg = NetConfig {
                in_channels: 1,
                hidden_channels: cfg.hidden_channels,
                conv_layers: cfg.conv_layers,
                leaky_slope: 0.2,
                residual_channel: Some(0),
                spectral_norm: false,
                field_shape: plan.grid().image_shape(),
            };
            let mut net = NetParams::init(&image_cfg, &mut rng)?;
            let mut params = net.flat_params();
            let mut opt = OptimState::new(&params, cfg.base_lr, cfg.steps as u64);
            for step in 0..cfg.steps {
                let sample = &train_set[rng.gen_range(0..train_set.len())];
                let x0 = crate::fastops::fast_inverse_raw(plan, sample.data.values())
                    * pd.input_scale;
                let mut tape = Tape::new();
                let x0_const = tape.constant(x0.into_dyn());
                let binding = net.bind(&mut tape);
                let out = net.forward_bound(&mut tape, &binding, &[x0_const])?;
                let target = tape.constant(sample.target.values().clone().into_dyn());
                let loss = tape.mse(out, target)?;
                let loss_value = tape.value(loss)[[]];
                if !loss_value.is_finite() {
                    return Err(PatError::TrainAborted { step });
                }
                let grads = tape.backward(loss)?;
                let mut g = Vec::new();
                for (w, b) in binding.weights.iter().zip(&binding.biases) {
                    g.push(grads.get_or_zeros(*w, tape.shape(*w)));
                    g.push(grads.get_or_zeros(*b, tape.shape(*b)));
                }
                let lr = opt.learning_rate();
                adam_step(&mut opt, &mut params, &g)?;
                net.set_flat_params(&params)?;
                running.push(loss_value);
                if (step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps {
                    let model = TrainedModel::PostProcess(net.clone());
                    let v = validation_psnr(&model, val_set, plan, &pd);
                    log.rows.push(LogRow {
                        step: step + 1,
                        lr,
                        train_loss: running.mean(),
                        val_psnr: if v.is_finite() { Some(v) } else { None },
                    });
                }
            }
            Ok((TrainedModel::PostProcess(net), log))
        }
        TrainMethod::McPd => {
            let mut pair = init_pair(plan, cfg, &mut rng)?;
            let mut params = pair_params(&pair);
            let mut opt = OptimState::new(&params, cfg.base_lr, cfg.steps as u64);
            for step in 0..cfg.steps {
                let sample = &train_set[rng.gen_range(0..train_set.len())];
                let (loss_value, grads, _, _) = unrolled_loss_and_grads(
                    &pair,
                    plan,
                    &pd,
                    cfg.unroll,
                    sample.data.values(),
                    sample.target.values(),
                    None,
                )?;
                if !loss_value.is_finite() {
                    return Err(PatError::TrainAborted { step });
                }
                let lr = opt.learning_rate();
                adam_step(&mut opt, &mut params, &grads)?;
                set_pair_params(&mut pair, &params)?;
                apply_spectral_projection(&mut pair)?;
                if cfg.spectral_norm {
                    params = pair_params(&pair);
                }
                running.push(loss_value);
                if (step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps {
                    let model = TrainedModel::McPd(pair.clone());
                    let v = validation_psnr(&model, val_set, plan, &pd);
                    log.rows.push(LogRow {
                        step: step + 1,
                        lr,
                        train_loss: running.mean(),
                        val_psnr: if v.is_finite() { Some(v) } else { None },
                    });
                }
            }
            Ok((TrainedModel::McPd(pair), log))
        }
        TrainMethod::PdDeq => {
            let mut pair = init_pair(plan, cfg, &mut rng)?;
            let mut params = pair_params(&pair);
            let mut opt = OptimState::new(&params, cfg.base_lr, cfg.steps as u64);
            for step in 0..cfg.steps {
                let sample = &train_set[rng.gen_range(0..train_set.len())];
                let fp_cfg = PdConfig {
                    memory: if step < warmup_steps { 1 } else { cfg.memory },
                    ..pd
                };
                let (x_star, q_star, _) = pddeq_run(
                    sample.data.values(),
                    &pair,
                    plan,
                    &fp_cfg,
                    None,
                    None,
                )?;
                let loss_value = mse(&x_star, sample.target.values());
                if !loss_value.is_finite() {
                    return Err(PatError::TrainAborted { step });
                }
                let grads = match pddeq_backward(
                    &x_star,
                    &q_star,
                    sample.data.values(),
                    sample.target.values(),
                    &pair,
                    plan,
                    pd.sigma,
                    pd.tau,
                    cfg.implicit_iters,
                    cfg.implicit_tol,
                    cfg.jacobian_free,
                ) {
                    Ok(g) => g,
                    // Non-contractive phases trip the implicit-solve alarm;
                    // fall back to the truncated (Jacobian-free) gradient.
                    Err(PatError::ImplicitSolve { .. }) => pddeq_backward(
                        &x_star,
                        &q_star,
                        sample.data.values(),
                        sample.target.values(),
                        &pair,
                        plan,
                        pd.sigma,
                        pd.tau,
                        cfg.implicit_iters,
                        cfg.implicit_tol,
                        true,
                    )?,
                    Err(e) => return Err(e),
                };
                let lr = opt.learning_rate();
                adam_step(&mut opt, &mut params, &grads)?;
                set_pair_params(&mut pair, &params)?;
                apply_spectral_projection(&mut pair)?;
                if cfg.spectral_norm {
                    params = pair_params(&pair);
                }
                running.push(loss_value);
                if (step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps {
                    let model = TrainedModel::PdDeq(pair.clone());
                    let v = validation_psnr(&model, val_set, plan, &pd);
                    log.rows.push(LogRow {
                        step: step + 1,
                        lr,
                        train_loss: running.mean(),
                        val_psnr: if v.is_finite() { Some(v) } else { None },
                    });
                }
            }
            Ok((TrainedModel::PdDeq(pair), log))
        }
        TrainMethod::Hybrid => {
            let mut first = init_pair(plan, cfg, &mut rng)?;
            let mut second = init_pair(plan, cfg, &mut rng)?;
            let mut params1 = pair_params(&first);
            let mut params2 = pair_params(&second);
            let mut opt1 = OptimState::new(&params1, cfg.base_lr, cfg.steps as u64);
            let mut opt2 = OptimState::new(&params2, cfg.base_lr, cfg.steps as u64);
            let (k1, k2) = cfg.hybrid_split;
            for step in 0..cfg.steps {
                let sample = &train_set[rng.gen_range(0..train_set.len())];
                // Stage 1: unrolled loss on the first pair.
                let (loss1, grads1, x_mid, q_mid) = unrolled_loss_and_grads(
                    &first,
                    plan,
                    &pd,
                    k1,
                    sample.data.values(),
                    sample.target.values(),
                    None,
                )?;
                if !loss1.is_finite() {
                    return Err(PatError::TrainAborted { step });
                }
                let lr = opt1.learning_rate();
                adam_step(&mut opt1, &mut params1, &grads1)?;
                set_pair_params(&mut first, &params1)?;
                apply_spectral_projection(&mut first)?;
                if cfg.spectral_norm {
                    params1 = pair_params(&first);
                }
                // Stage 2: fixed-point loss on the second pair only, from
                // the handed-over state.
                let fp_cfg = PdConfig {
                    iterations: k2,
                    memory: if step < warmup_steps { 1 } else { cfg.memory },
                    ..pd
                };
                let (x_star, q_star, _) = pddeq_run(
                    sample.data.values(),
                    &second,
                    plan,
                    &fp_cfg,
                    Some(&x_mid),
                    Some(&q_mid),
                )?;
                let loss2 = mse(&x_star, sample.target.values());
                if !loss2.is_finite() {
                    return Err(PatError::TrainAborted { step });
                }
                let grads2 = match pddeq_backward(
                    &x_star,
                    &q_star,
                    sample.data.values(),
                    sample.target.values(),
                    &second,
                    plan,
                    pd.sigma,
                    pd.tau,
                    cfg.implicit_iters,
                    cfg.implicit_tol,
                    cfg.jacobian_free,
                ) {
                    Ok(g) => g,
                    Err(PatError::ImplicitSolve { .. }) => pddeq_backward(
                        &x_star,
                        &q_star,
                        sample.data.values(),
                        sample.target.values(),
                        &second,
                        plan,
                        pd.sigma,
                        pd.tau,
                        cfg.implicit_iters,
                        cfg.implicit_tol,
                        true,
                    )?,
                    Err(e) => return Err(e),
                };
                adam_step(&mut opt2, &mut params2, &grads2)?;
                set_pair_params(&mut second, &params2)?;
                apply_spectral_projection(&mut second)?;
                if cfg.spectral_norm {
                    params2 = pair_params(&second);
                }
                running.push(loss2);
                if (step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps {
                    let model = TrainedModel::Hybrid {
                        mcpd: first.clone(),
                        deq: second.clone(),
                    };
                    let v = validation_psnr(&model, val_set, plan, &pd);
                    log.rows.push(LogRow {
                        step: step + 1,
                        lr,
                        train_loss: running.mean(),
                        val_psnr: if v.is_finite() { Some(v) } else { None },
                    });
                }
            }
            Ok((
                TrainedModel::Hybrid {
                    mcpd: first,
                    deq: second,
                },
                log,
            ))
        }
    }
}

/// Convenience wrapper used by bench and tests: method-specific reconstruct
/// with untrained (identity-initialized) nets.
pub fn identity_model(method: TrainMethod, plan: &KSpacePlan, seed: u64) -> Result<TrainedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrainConfig::desk(seed);
    Ok(match method {
        TrainMethod::PostProcess => {
            let image_cfg = NetConfig {
                in_channels: 1,
                hidden_channels: cfg.hidden_channels,
                conv_layers: cfg.conv_layers,
                leaky_slope: 0.2,
                residual_channel: Some(0),
                spectral_norm: false,
                field_shape: plan.grid().image_shape(),
            };
            TrainedModel::PostProcess(NetParams::init(&image_cfg, &mut rng)?)
        }
        TrainMethod::McPd => TrainedModel::McPd(init_pair(plan, &cfg, &mut rng)?),
        TrainMethod::PdDeq => TrainedModel::PdDeq(init_pair(plan, &cfg, &mut rng)?),
        TrainMethod::Hybrid => TrainedModel::Hybrid {
            mcpd: init_pair(plan, &cfg, &mut rng)?,
            deq: init_pair(plan, &cfg, &mut rng)?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fastops::build_plan;
    use crate::grid::Grid;

    #[test]
    fn overfit_single_sample_with_postprocessing() {
        let g = Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap();
        let plan = build_plan(&g).unwrap();
        let mut x = Array2::zeros(g.image_shape());
        for j in 2..6 {
            x[[4, j]] = 0.8;
        }
        let target = Image::new(x, &g).unwrap();
        let y = crate::wave::simulate_forward(&target, &g).unwrap();
        let samples = vec![TrainSample {
            target: target.clone(),
            data: y,
        }];
        let mut cfg = TrainConfig::desk(7);
        cfg.steps = 500;
        cfg.base_lr = 2e-3;
        cfg.hidden_channels = 8;
        cfg.val_every = 250;
        let (_, log) = train(TrainMethod::PostProcess, &samples, &samples, &plan, &cfg).unwrap();
        let first = log.rows.first().unwrap().train_loss;
        let last = log.rows.last().unwrap().train_loss;
        assert!(
            last <= first / 10.0,
            "training MSE did not decrease 10x: {first} -> {last}"
        );
    }

    #[test]
    fn fixed_seed_reproduces_identical_weights() {
        let g = Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap();
        let plan = build_plan(&g).unwrap();
        let mut x = Array2::zeros(g.image_shape());
        x[[4, 4]] = 1.0;
        let target = Image::new(x, &g).unwrap();
        let y = crate::wave::simulate_forward(&target, &g).unwrap();
        let samples = vec![TrainSample {
            target,
            data: y,
        }];
        let mut cfg = TrainConfig::desk(99);
        cfg.steps = 30;
        cfg.hidden_channels = 4;
        cfg.unroll = 3;
        cfg.hybrid_split = (2, 1);
        let (m1, _) = train(TrainMethod::McPd, &samples, &[], &plan, &cfg).unwrap();
        let (m2, _) = train(TrainMethod::McPd, &samples, &[], &plan, &cfg).unwrap();
        let (TrainedModel::McPd(p1), TrainedModel::McPd(p2)) = (m1, m2) else {
            panic!("wrong model kind")
        };
        assert_eq!(p1, p2);
    }
}
