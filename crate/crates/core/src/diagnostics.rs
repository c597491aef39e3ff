//! Numerical verification of the convergence theory and image-quality
//! metrics.
//!
//! The theory checks quantify, for the corrected fast operators:
//! - how far the corrected forward is from satisfying the adjoint identity
//!   against the accurate adjoint (paired PDHG runs then measure the induced
//!   iterate deviation),
//! - the smallest epsilon with (F(Ax), h) <= (1 + epsilon)(x, A_inv h) over
//!   positive samples,
//! - the step-size coefficient (1 + epsilon) tau sigma / (1 + sigma) L_inv^2
//!   and the empirical firmly-nonexpansive inequality for the scaled normal
//!   map T,
//! - log-log residual rate fits of fixed-point traces.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PatError, Result};
use crate::fastops::{estimate_operator_norm, fast_inverse_raw, FastInverseOp, KSpacePlan};
use crate::field::{inner, l2_norm, Image};
use crate::linop::DenseMatrix;
use crate::trace::FixedPointTrace;
use crate::variational::{Regularizer, SolverConfig};

/// Measured constants of one diagnostics run, serialized as flat key=value
/// text.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsReport {
    pub adjoint_gap_mean: f64,
    pub adjoint_gap_max: f64,
    /// Operator norms: reference forward, fast forward, fast inverse.
    pub norm_reference: f64,
    pub norm_fast_forward: f64,
    pub norm_fast_inverse: f64,
    /// Lipschitz probes of the correction and update nets.
    pub correction_norm: f64,
    pub update_lipschitz: f64,
    /// Approximate-adjoint epsilon and the fraction of skipped samples.
    pub epsilon: f64,
    pub epsilon_skip_rate: f64,
    /// Step-rule coefficient (1+eps) tau sigma/(1+sigma) L_inv^2.
    pub coefficient: f64,
    /// Max dual-residual norm over the inspected trace.
    pub dual_residual_bound: f64,
    /// 1 - update_lipschitz (a lower-bound estimate, not a certificate).
    pub contraction_margin: f64,
    /// Log-log slope of the primal residuals.
    pub rate_exponent: f64,
}

impl DiagnosticsReport {
    pub fn write_key_values<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "adjoint_gap_mean={}", self.adjoint_gap_mean)?;
        writeln!(w, "adjoint_gap_max={}", self.adjoint_gap_max)?;
        writeln!(w, "norm_reference={}", self.norm_reference)?;
        writeln!(w, "norm_fast_forward={}", self.norm_fast_forward)?;
        writeln!(w, "norm_fast_inverse={}", self.norm_fast_inverse)?;
        writeln!(w, "correction_norm={}", self.correction_norm)?;
        writeln!(w, "update_lipschitz={}", self.update_lipschitz)?;
        writeln!(w, "epsilon={}", self.epsilon)?;
        writeln!(w, "epsilon_skip_rate={}", self.epsilon_skip_rate)?;
        writeln!(w, "coefficient={}", self.coefficient)?;
        writeln!(w, "dual_residual_bound={}", self.dual_residual_bound)?;
        writeln!(w, "contraction_margin={}", self.contraction_margin)?;
        writeln!(w, "rate_exponent={}", self.rate_exponent)?;
        Ok(())
    }
}

/// Result of the corrected-vs-accurate PDHG comparison.
#[derive(Debug, Clone)]
pub struct Prop1Report {
    /// max over samples of |(corr(x), h) - (x, A^T h)| / (|x||h|).
    pub adjoint_gap: f64,
    /// Per-iteration deviation |x_k(corrected) - x_k(accurate)|.
    pub iterate_deviation: Vec<f64>,
}

/// Compares PDHG driven by a corrected forward map (with the accurate
/// adjoint in the primal update) against PDHG with the accurate forward.
/// When the correction satisfies the adjoint identity exactly the iterates
/// coincide.
#[allow(clippy::too_many_arguments)]
pub fn check_prop1(
    corrected_forward: &(dyn Fn(&Array2<f64>) -> Array2<f64> + Sync),
    dense_accurate: &DenseMatrix,
    domain: (usize, usize),
    range: (usize, usize),
    y: &Array2<f64>,
    solver: &SolverConfig,
    reg: Regularizer,
    weight: f64,
    iterations: usize,
    samples: usize,
    seed: u64,
) -> Result<Prop1Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap_max: f64 = 0.0;
    for _ in 0..samples {
        let x = Array2::from_shape_fn(domain, |_| rng.gen::<f64>());
        let h = Array2::from_shape_fn(range, |_| rng.gen::<f64>());
        let lhs = inner(&corrected_forward(&x), &h);
        let hflat: Vec<f64> = h.iter().copied().collect();
        let ath = dense_accurate.matvec_transpose(&hflat);
        let rhs: f64 = x.iter().zip(ath.iter()).map(|(a, b)| a * b).sum();
        let denom = (l2_norm(&x) * l2_norm(&h)).max(1e-300);
        gap_max = gap_max.max((lhs - rhs).abs() / denom);
    }

    // Paired PDHG runs: same start, same steps, accurate adjoint in the
    // primal update for both.
    let accurate_forward = |x: &Array2<f64>| -> Array2<f64> {
        let flat: Vec<f64> = x.iter().copied().collect();
        Array2::from_shape_vec(range, dense_accurate.matvec(&flat)).expect("dense shape")
    };
    let accurate_adjoint = |h: &Array2<f64>| -> Array2<f64> {
        let flat: Vec<f64> = h.iter().copied().collect();
        Array2::from_shape_vec(domain, dense_accurate.matvec_transpose(&flat)).expect("dense shape")
    };
    let run = |fwd: &dyn Fn(&Array2<f64>) -> Array2<f64>| -> Result<Vec<Array2<f64>>> {
        let mut iterates = Vec::with_capacity(iterations);
        let mut x = Array2::zeros(domain);
        let mut x_relaxed = x.clone();
        let mut q = Array2::zeros(range);
        for _ in 0..iterations {
            let residual = fwd(&x_relaxed) - y;
            let q_next = crate::variational::dual_prox(&q, &residual, solver.sigma)?;
            let step = &x - &(accurate_adjoint(&q_next) * solver.tau);
            let x_next = crate::variational::prox(reg, weight * solver.tau, &step)?;
            x_relaxed = &x_next + &((&x_next - &x) * solver.theta);
            x = x_next;
            q = q_next;
            iterates.push(x.clone());
        }
        Ok(iterates)
    };
    let accurate_iterates = run(&accurate_forward)?;
    let corrected_iterates = run(&|x: &Array2<f64>| corrected_forward(x))?;
    let deviation = accurate_iterates
        .iter()
        .zip(corrected_iterates.iter())
        .map(|(a, b)| l2_norm(&(a - b)))
        .collect();
    Ok(Prop1Report {
        adjoint_gap: gap_max,
        iterate_deviation: deviation,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub retained: usize,
    pub skipped: usize,
}

impl EpsilonReport {
    pub fn skip_rate(&self) -> f64 {
        let total = self.retained + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }
}

/// Smallest epsilon with (corrected(x), h) <= (1 + epsilon)(x, back(h)) over
/// the retained samples; samples with non-positive right inner product are
/// skipped and counted. Errors when every sample is skipped.
pub fn measure_epsilon(
    corrected_forward: &dyn Fn(&Array2<f64>) -> Array2<f64>,
    back: &dyn Fn(&Array2<f64>) -> Array2<f64>,
    samples: &[(Array2<f64>, Array2<f64>)],
) -> Result<EpsilonReport> {
    let mut epsilon: f64 = 0.0;
    let mut retained = 0usize;
    let mut skipped = 0usize;
    for (x, h) in samples {
        let den = inner(x, &back(h));
        if den <= 0.0 {
            skipped += 1;
            continue;
        }
        let num = inner(&corrected_forward(x), h);
        epsilon = epsilon.max(num / den - 1.0);
        retained += 1;
    }
    if retained == 0 {
        return Err(PatError::Invalid(
            "measure_epsilon: every sample had non-positive inner product".into(),
        ));
    }
    Ok(EpsilonReport {
        epsilon,
        retained,
        skipped,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NonexpansiveReport {
    /// (1 + epsilon) tau sigma / (1 + sigma) * L_inv^2.
    pub coefficient: f64,
    pub coefficient_ok: bool,
    /// min over pairs of <T(x)-T(v), x-v> - |T(x)-T(v)|^2.
    pub worst_margin: f64,
    pub norm_fast_inverse: f64,
}

/// Evaluates the step-rule coefficient exactly on the measured constants and
/// empirically tests the firmly-nonexpansive inequality for
/// T(x) = tau sigma/(1+sigma) A_inv corrected(x) on random pairs.
pub fn check_nonexpansive(
    plan: &std::sync::Arc<KSpacePlan>,
    corrected_forward: &dyn Fn(&Array2<f64>) -> Array2<f64>,
    sigma: f64,
    tau: f64,
    epsilon: f64,
    pairs: usize,
    seed: u64,
) -> Result<NonexpansiveReport> {
    let inv_norm = estimate_operator_norm(&FastInverseOp(std::sync::Arc::clone(plan)), 50, seed)?;
    let coefficient = (1.0 + epsilon) * tau * sigma / (1.0 + sigma) * inv_norm * inv_norm;
    let factor = tau * sigma / (1.0 + sigma);
    let domain = plan.grid().image_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let apply_t = |x: &Array2<f64>| -> Array2<f64> {
        fast_inverse_raw(plan, &corrected_forward(x)) * factor
    };
    let mut worst = f64::INFINITY;
    for _ in 0..pairs {
        let x = Array2::from_shape_fn(domain, |_| rng.gen::<f64>());
        let v = Array2::from_shape_fn(domain, |_| rng.gen::<f64>());
        let dt = apply_t(&x) - apply_t(&v);
        let dx = &x - &v;
        let margin = inner(&dt, &dx) - inner(&dt, &dt);
        worst = worst.min(margin);
    }
    Ok(NonexpansiveReport {
        coefficient,
        coefficient_ok: coefficient <= 1.0,
        worst_margin: worst,
        norm_fast_inverse: inv_norm,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ContractionReport {
    /// Least-squares slope of log residual vs log iteration, from iteration
    /// 10 on (post burn-in).
    pub slope: f64,
    /// Fraction of steps with nonincreasing primal residual.
    pub monotone_fraction: f64,
    /// Max dual residual over the trace.
    pub dual_bound: f64,
    /// Late dual residuals stay within a factor 2 of the early ones.
    pub dual_bounded: bool,
}

/// Fits the decay rate of a fixed-point trace. Errors for traces shorter
/// than 20 iterations.
pub fn check_contraction(trace: &FixedPointTrace) -> Result<ContractionReport> {
    let n = trace.len();
    if n < 20 {
        return Err(PatError::Invalid(format!(
            "check_contraction: trace length {n} < 20"
        )));
    }
    // 1-based iteration numbers; fit from k = 10 on.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &r) in trace.primal_res.iter().enumerate() {
        let k = i + 1;
        if k >= 10 && r > 1e-300 && r.is_finite() {
            xs.push((k as f64).ln());
            ys.push(r.ln());
        }
    }
    if xs.len() < 2 {
        return Err(PatError::Invalid(
            "check_contraction: not enough positive residuals past burn-in".into(),
        ));
    }
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    let slope = num / den.max(1e-300);

    let mut monotone = 0usize;
    for w in trace.primal_res.windows(2) {
        if w[1] <= w[0] {
            monotone += 1;
        }
    }
    let monotone_fraction = monotone as f64 / (n - 1) as f64;

    let dual_bound = trace.dual_res.iter().cloned().fold(0.0f64, f64::max);
    let half = n / 2;
    let early = trace.dual_res[..half].iter().cloned().fold(0.0f64, f64::max);
    let late = trace.dual_res[half..].iter().cloned().fold(0.0f64, f64::max);
    let dual_bounded = trace.dual_res.iter().all(|d| d.is_finite()) && late <= 2.0 * early.max(1e-300);

    Ok(ContractionReport {
        slope,
        monotone_fraction,
        dual_bound,
        dual_bounded,
    })
}

/// 10 log10(range^2 / MSE); identical images give +inf.
pub fn psnr(x: &Image, reference: &Image, range: f64) -> Result<f64> {
    if x.grid() != reference.grid() {
        return Err(PatError::shape(
            "psnr",
            format!("{:?}", reference.grid().image_shape()),
            format!("{:?}", x.grid().image_shape()),
        ));
    }
    if !(range.is_finite() && range > 0.0) {
        return Err(PatError::Invalid(format!("psnr: range must be > 0, got {range}")));
    }
    let n = x.values().len() as f64;
    let mse = x
        .values()
        .iter()
        .zip(reference.values().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

/// Mean local SSIM with a uniform 7x7 window, k1 = 0.01, k2 = 0.03.
pub fn ssim(x: &Image, reference: &Image, range: f64) -> Result<f64> {
    const WINDOW: usize = 7;
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    if x.grid() != reference.grid() {
        return Err(PatError::shape(
            "ssim",
            format!("{:?}", reference.grid().image_shape()),
            format!("{:?}", x.grid().image_shape()),
        ));
    }
    let (h, w) = x.values().dim();
    if h < WINDOW || w < WINDOW {
        return Err(PatError::Invalid(format!(
            "ssim: image {h}x{w} smaller than the {WINDOW}x{WINDOW} window"
        )));
    }
    if !(range.is_finite() && range > 0.0) {
        return Err(PatError::Invalid(format!("ssim: range must be > 0, got {range}")));
    }
    let c1 = (K1 * range) * (K1 * range);
    let c2 = (K2 * range) * (K2 * range);
    let a = x.values();
    let b = reference.values();
    let inv_n = 1.0 / (WINDOW * WINDOW) as f64;
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..=h - WINDOW {
        for j in 0..=w - WINDOW {
            let mut ma = 0.0;
            let mut mb = 0.0;
            for di in 0..WINDOW {
                for dj in 0..WINDOW {
                    ma += a[[i + di, j + dj]];
                    mb += b[[i + di, j + dj]];
                }
            }
            ma *= inv_n;
            mb *= inv_n;
            let mut va = 0.0;
            let mut vb = 0.0;
            let mut cov = 0.0;
            for di in 0..WINDOW {
                for dj in 0..WINDOW {
                    let da = a[[i + di, j + dj]] - ma;
                    let db = b[[i + di, j + dj]] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va *= inv_n;
            vb *= inv_n;
            cov *= inv_n;
            let value = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            acc += value;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// 10 log10(|clean|^2 / |noisy - clean|^2); equal inputs give +inf and an
/// all-zero clean signal is an error.
pub fn snr_db(clean: &Array2<f64>, noisy: &Array2<f64>) -> Result<f64> {
    if clean.dim() != noisy.dim() {
        return Err(PatError::shape(
            "snr_db",
            format!("{:?}", clean.dim()),
            format!("{:?}", noisy.dim()),
        ));
    }
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(PatError::Invalid("snr_db: clean signal is all-zero".into()));
    }
    let noise: f64 = clean
        .iter()
        .zip(noisy.iter())
        .map(|(c, n)| (n - c) * (n - c))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn grid() -> Grid {
        Grid::new(16, 16, 106e-6, 1500.0, 50e-9, 32).unwrap()
    }

    fn image_from(values: Array2<f64>) -> Image {
        Image::new(values, &grid()).unwrap()
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = image_from(Array2::from_elem((16, 16), 0.3));
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_of_constant_offset_is_twenty_db() {
        let a = image_from(Array2::zeros((16, 16)));
        let b = image_from(Array2::from_elem((16, 16), 0.1));
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-12, "psnr {p}");
    }

    #[test]
    fn psnr_is_invariant_under_joint_rescaling() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((16, 16), |_| rng.gen::<f64>());
        let b = Array2::from_shape_fn((16, 16), |_| rng.gen::<f64>());
        let p1 = psnr(&image_from(a.clone()), &image_from(b.clone()), 1.0).unwrap();
        let p2 = psnr(&image_from(a * 5.0), &image_from(b * 5.0), 5.0).unwrap();
        assert!((p1 - p2).abs() < 1e-10);
    }

    #[test]
    fn ssim_identical_is_one_and_symmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = image_from(Array2::from_shape_fn((16, 16), |_| rng.gen::<f64>()));
        let b = image_from(Array2::from_shape_fn((16, 16), |_| rng.gen::<f64>()));
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b, 1.0).unwrap();
        let ba = ssim(&b, &a, 1.0).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_anticorrelated_is_negative() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Zero-mean random field vs its negation.
        let a = Array2::from_shape_fn((16, 16), |_| rng.gen::<f64>() - 0.5);
        let neg = a.mapv(|v| -v);
        let s = ssim(&image_from(a), &image_from(neg), 1.0).unwrap();
        assert!(s < 0.0, "ssim {s}");
    }

    #[test]
    fn ssim_small_noise_stays_high() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Array2::from_shape_fn((16, 16), |(i, j)| ((i + j) as f64 * 0.3).sin() * 0.4 + 0.5);
        let noisy = a.mapv(|v| v + 0.005 * (rng.gen::<f64>() - 0.5));
        let s = ssim(&image_from(a), &image_from(noisy), 1.0).unwrap();
        assert!(s > 0.9 && s < 1.0, "ssim {s}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let g = Grid::new(4, 4, 106e-6, 1500.0, 50e-9, 8).unwrap();
        let a = Image::zeros(&g);
        assert!(ssim(&a, &a, 1.0).is_err());
    }

    #[test]
    fn snr_examples() {
        let clean = Array2::from_elem((4, 4), 1.0);
        assert_eq!(snr_db(&clean, &clean).unwrap(), f64::INFINITY);
        // Noise with exactly 10% of the signal energy.
        let noise_amp = (0.1f64).sqrt();
        let noisy = clean.mapv(|v| v + noise_amp);
        let s = snr_db(&clean, &noisy).unwrap();
        assert!((s - 10.0).abs() < 1e-12, "snr {s}");
        let zero = Array2::zeros((4, 4));
        assert!(snr_db(&zero, &clean).is_err());
    }

    #[test]
    fn contraction_slope_recovers_synthetic_rates() {
        // r_k = 1/k has log-log slope -1.
        let mut t = FixedPointTrace::new();
        for k in 1..=100 {
            let r = 1.0 / k as f64;
            t.push(r, r * 0.1, 0.0, 0.0);
        }
        let rep = check_contraction(&t).unwrap();
        assert!((rep.slope + 1.0).abs() <= 0.05, "slope {}", rep.slope);
        assert_eq!(rep.monotone_fraction, 1.0);
        assert!(rep.dual_bounded);

        // Geometric decay is much steeper than -1 in log-log.
        let mut t = FixedPointTrace::new();
        for k in 1..=100 {
            let r = 0.5f64.powi(k);
            t.push(r, 0.0, 0.0, 0.0);
        }
        let rep = check_contraction(&t).unwrap();
        assert!(rep.slope < -2.0, "slope {}", rep.slope);
    }

    #[test]
    fn contraction_requires_20_iterations() {
        let mut t = FixedPointTrace::new();
        for k in 1..=10 {
            t.push(1.0 / k as f64, 0.0, 0.0, 0.0);
        }
        assert!(check_contraction(&t).is_err());
    }
}
