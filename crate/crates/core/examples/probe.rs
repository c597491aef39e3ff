// Scratch numerical probes used during development.

use ndarray::Array2;
use patpd_core::linop::FieldOp;
use patpd_core::fastops::{build_plan, estimate_operator_norm, FastForwardOp, FastInverseOp};
use patpd_core::field::Image;
use patpd_core::grid::Grid;
use patpd_core::wave::simulate_forward;

fn main() {
    // Causality: sharp line source, locate the early-signal culprit.
    let g = Grid::new(32, 16, 106e-6, 1500.0, 50e-9, 64).unwrap();
    let depth = 24usize;
    let mut x = Array2::zeros(g.image_shape());
    for j in 4..12 {
        x[[depth, j]] = 1.0;
    }
    let y = simulate_forward(&Image::new(x, &g).unwrap(), &g).unwrap();
    let peak = y.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k_front = (0.8 * depth as f64 * g.dx / (g.c * g.dt)).floor() as usize;
    println!("peak {peak:.4e}, k_front {k_front}");
    let mut worst = (0.0f64, 0usize, 0usize);
    for k in 0..k_front {
        for j in 0..g.nx {
            let v = y.values()[[k, j]].abs() / peak;
            if v > worst.0 {
                worst = (v, k, j);
            }
        }
    }
    println!("worst acausal {:.3e} at k={} j={}", worst.0, worst.1, worst.2);
    for k in 0..40 {
        println!("k={k:2} y[k,8] = {:+.4e}   max_j |y[k,j]| = {:.4e}", y.values()[[k, 8]],
            (0..g.nx).map(|j| y.values()[[k, j]].abs()).fold(0.0f64, f64::max));
    }

    // Max band weight and norm estimates on the standard grid.
    let g = Grid::standard();
    let plan = build_plan(&g).unwrap();
    let bmax = plan.band_weight().iter().fold(0.0f64, |m, v| m.max(*v));
    println!("max B = {bmax:.3}");
    println!("plan norm estimate = {:.4}", plan.norm_estimate());
    let fwd = FastForwardOp(plan.clone());
    let inv = FastInverseOp(plan.clone());
    for iters in [5usize, 10, 20, 50] {
        println!(
            "iters {iters:3}: |A_fast| = {:.4}",
            estimate_operator_norm(&fwd, iters, 1).unwrap()
        );
    }
    println!("|A_inv| (50) = {:.4}", estimate_operator_norm(&inv, 50, 1).unwrap());

    // Typical gain of the fast forward on random images.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let mut gains: Vec<f64> = (0..31)
        .map(|_| {
            let x = Array2::from_shape_fn(g.image_shape(), |_| rng.gen::<f64>() - 0.5);
            let nx2: f64 = x.iter().map(|v| v * v).sum::<f64>();
            let yv = fwd.apply(&x);
            let ny2: f64 = yv.iter().map(|v| v * v).sum::<f64>();
            (ny2 / nx2).sqrt()
        })
        .collect();
    gains.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("median random gain = {:.4}", gains[gains.len() / 2]);
}
