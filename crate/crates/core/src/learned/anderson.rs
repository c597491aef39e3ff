//! Anderson acceleration for fixed-point iterations.
//!
//! Given map outputs f(z_k), ..., f(z_{k-m+1}) the next iterate is the
//! convex-affine mixture sum_i alpha_i f(z_{k-i}) whose coefficients solve
//! min |H alpha|^2 subject to sum_i alpha_i = 1, where the columns of H are
//! the vectorized residuals f(z_{k-i}) - z_{k-i}. The constrained least
//! squares is solved through the (n+1)-dimensional KKT system with
//! lambda * I added to H^T H; residual columns become nearly collinear close
//! to convergence, so the default lambda is 1e-10 tr(H^T H)/m.

use std::collections::VecDeque;

use crate::error::{PatError, Result};

/// Per-variable Anderson history and mixing state.
#[derive(Debug, Clone)]
pub struct AndersonBuffer {
    memory: usize,
    reg: Option<f64>,
    iterates: VecDeque<Vec<f64>>,
    map_outputs: VecDeque<Vec<f64>>,
    /// Mixing coefficients of the most recent update (sum to 1).
    pub coefficients: Vec<f64>,
}

/// Anderson state for the primal/dual pair.
#[derive(Debug, Clone)]
pub struct AndersonState {
    pub primal: AndersonBuffer,
    pub dual: AndersonBuffer,
}

impl AndersonState {
    pub fn new(memory: usize, reg: Option<f64>) -> Result<AndersonState> {
        Ok(AndersonState {
            primal: AndersonBuffer::new(memory, reg)?,
            dual: AndersonBuffer::new(memory, reg)?,
        })
    }
}

impl AndersonBuffer {
    pub fn new(memory: usize, reg: Option<f64>) -> Result<AndersonBuffer> {
        if memory == 0 {
            return Err(PatError::Invalid("Anderson memory must be >= 1".into()));
        }
        Ok(AndersonBuffer {
            memory,
            reg,
            iterates: VecDeque::new(),
            map_outputs: VecDeque::new(),
            coefficients: Vec::new(),
        })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn clear(&mut self) {
        self.iterates.clear();
        self.map_outputs.clear();
        self.coefficients.clear();
    }

    /// Records the (iterate, map output) pair and returns the mixed next
    /// iterate. With memory 1 this is exactly the raw map output.
    pub fn update(&mut self, iterate: &[f64], map_output: &[f64]) -> Result<Vec<f64>> {
        if iterate.len() != map_output.len() {
            return Err(PatError::shape(
                "anderson_update",
                format!("{}", iterate.len()),
                format!("{}", map_output.len()),
            ));
        }
        self.iterates.push_front(iterate.to_vec());
        self.map_outputs.push_front(map_output.to_vec());
        while self.iterates.len() > self.memory {
            self.iterates.pop_back();
            self.map_outputs.pop_back();
        }
        let n = self.iterates.len();
        if n == 1 {
            self.coefficients = vec![1.0];
            return Ok(map_output.to_vec());
        }

        // Gram matrix of the residual columns.
        let residual = |i: usize| -> Vec<f64> {
            self.map_outputs[i]
                .iter()
                .zip(self.iterates[i].iter())
                .map(|(f, z)| f - z)
                .collect()
        };
        let residuals: Vec<Vec<f64>> = (0..n).map(residual).collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = residuals[i]
                    .iter()
                    .zip(residuals[j].iter())
                    .map(|(a, b)| a * b)
                    .sum();
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
        }
        let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
        let lambda = self
            .reg
            .unwrap_or(1e-10 * trace / self.memory as f64)
            .max(0.0);

        // KKT system [[2(G + lambda I), 1], [1^T, 0]] [alpha; mu] = [0; 1].
        let dim = n + 1;
        let mut a = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            for j in 0..n {
                a[i * dim + j] = 2.0 * gram[i * n + j];
            }
            a[i * dim + i] += 2.0 * lambda;
            a[i * dim + n] = 1.0;
            a[n * dim + i] = 1.0;
        }
        rhs[n] = 1.0;
        let solution = solve_dense(&mut a, &mut rhs, dim)?;
        let alpha = &solution[..n];

        let len = map_output.len();
        let mut mixed = vec![0.0; len];
        for (i, &ai) in alpha.iter().enumerate() {
            for (m, f) in mixed.iter_mut().zip(self.map_outputs[i].iter()) {
                *m += ai * f;
            }
        }
        self.coefficients = alpha.to_vec();
        Ok(mixed)
    }
}

/// Records the pair and returns the mixed next iterate; see
/// [`AndersonBuffer::update`].
pub fn anderson_update(buf: &mut AndersonBuffer, iterate: &[f64], map_output: &[f64]) -> Result<Vec<f64>> {
    buf.update(iterate, map_output)
}

/// Gaussian elimination with partial pivoting; errors on a singular pivot.
fn solve_dense(a: &mut [f64], rhs: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-306 || !best.is_finite() {
            return Err(PatError::SingularSystem);
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            rhs.swap(pivot, col);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_one_returns_raw_map_output() {
        let mut buf = AndersonBuffer::new(1, None).unwrap();
        let out = buf.update(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(out, vec![3.0, 4.0]);
        assert_eq!(buf.coefficients, vec![1.0]);
        // Stays the plain step forever.
        let out = buf.update(&[3.0, 4.0], &[5.0, 6.0]).unwrap();
        assert_eq!(out, vec![5.0, 6.0]);
    }

    #[test]
    fn affine_scalar_map_is_exact_in_two_steps() {
        // f(z) = 0.5 z + 1, fixed point 2. With memory 2 and no
        // regularization the mixture is exact for affine maps.
        let f = |z: f64| 0.5 * z + 1.0;
        let mut buf = AndersonBuffer::new(2, Some(0.0)).unwrap();
        let mut z = 0.0f64;
        let mut iterations = 0;
        for _ in 0..3 {
            let fz = f(z);
            z = buf.update(&[z], &[fz]).unwrap()[0];
            iterations += 1;
            if (z - 2.0).abs() <= 1e-12 {
                break;
            }
        }
        assert!(iterations <= 3, "took {iterations} iterations");
        assert!((z - 2.0).abs() <= 1e-12, "z = {z}");
    }

    #[test]
    fn coefficients_sum_to_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut buf = AndersonBuffer::new(4, None).unwrap();
        let mut z: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
        for _ in 0..12 {
            // Contractive linear map with a shift.
            let fz: Vec<f64> = z.iter().map(|v| 0.3 * v + 0.1).collect();
            z = buf.update(&z, &fz).unwrap();
            let s: f64 = buf.coefficients.iter().sum();
            assert!((s - 1.0).abs() <= 1e-10, "coefficient sum {s}");
        }
    }

    #[test]
    fn anderson_beats_vanilla_on_contractive_linear_map() {
        use rand::{Rng, SeedableRng};
        // Random dim-50 linear map scaled to spectral radius ~0.9 plus a
        // constant; count iterations to 1e-8 residual.
        let dim = 50;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut matrix = vec![0.0; dim * dim];
        for v in matrix.iter_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        // Normalize by power iteration to radius 0.9.
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut radius = 0.0;
        for _ in 0..200 {
            let mut w = vec![0.0; dim];
            for i in 0..dim {
                for j in 0..dim {
                    w[i] += matrix[i * dim + j] * v[j];
                }
            }
            radius = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / radius;
            }
        }
        let scale = 0.9 / radius;
        for m in matrix.iter_mut() {
            *m *= scale;
        }
        let b: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        let apply = |z: &[f64]| -> Vec<f64> {
            let mut out = b.clone();
            for i in 0..dim {
                for j in 0..dim {
                    out[i] += matrix[i * dim + j] * z[j];
                }
            }
            out
        };
        let res = |z: &[f64]| -> f64 {
            apply(z)
                .iter()
                .zip(z)
                .map(|(f, zi)| (f - zi) * (f - zi))
                .sum::<f64>()
                .sqrt()
        };

        let run = |memory: usize| -> usize {
            let mut buf = AndersonBuffer::new(memory, None).unwrap();
            let mut z = vec![0.0; dim];
            for k in 1..=2000 {
                let fz = apply(&z);
                z = buf.update(&z, &fz).unwrap();
                if res(&z) <= 1e-8 {
                    return k;
                }
            }
            2000
        };
        let vanilla = run(1);
        let accelerated = run(5);
        assert!(
            accelerated < vanilla,
            "anderson {accelerated} vs vanilla {vanilla}"
        );
    }

    #[test]
    fn singular_without_regularization_errors() {
        // At an exact fixed point every residual column is zero; with
        // reg = 0 the KKT system is singular.
        let mut buf = AndersonBuffer::new(2, Some(0.0)).unwrap();
        let _ = buf.update(&[1.0], &[1.0]).unwrap();
        let err = buf.update(&[1.0], &[1.0]);
        assert!(matches!(err, Err(PatError::SingularSystem)));
    }
}
