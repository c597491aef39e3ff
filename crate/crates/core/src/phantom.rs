//! Synthetic phantom generation.
//!
//! The vessel generator draws branching random walks with Gaussian-profile
//! strokes, intensities in [0.3, 1.0], values clipped to [0, 1]. Generated
//! images must carry enough feature mass (pixel sum above the spec'd
//! threshold) to be accepted; rejected draws are retried and 100 consecutive
//! failures abort.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PatError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    Vessels,
    Disks,
    Points,
}

impl PhantomKind {
    pub fn parse(tag: &str) -> Result<PhantomKind> {
        match tag {
            "vessels" => Ok(PhantomKind::Vessels),
            "disks" => Ok(PhantomKind::Disks),
            "points" => Ok(PhantomKind::Points),
            other => Err(PatError::Invalid(format!("unknown generator: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub seed: u64,
    pub nz: usize,
    pub nx: usize,
    /// Number of primary vessel branches, inclusive range.
    pub branch_range: (usize, usize),
    /// Stroke width in pixels (Gaussian sigma is width/2).
    pub width_range: (f64, f64),
    pub intensity_range: (f64, f64),
    /// Minimum pixel sum for acceptance.
    pub mass_threshold: f64,
    /// Append a vertically flipped copy of every accepted image.
    pub flip_augment: bool,
}

impl PhantomSpec {
    pub fn vessels(nz: usize, nx: usize, seed: u64) -> PhantomSpec {
        PhantomSpec {
            kind: PhantomKind::Vessels,
            seed,
            nz,
            nx,
            branch_range: (4, 9),
            width_range: (0.9, 2.2),
            intensity_range: (0.3, 1.0),
            // Scaled from 150 on the 80x128 reference size.
            mass_threshold: 150.0 * (nz * nx) as f64 / (80.0 * 128.0),
            flip_augment: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz < 2 || self.nx < 2 {
            return Err(PatError::Invalid("phantom size must be >= 2x2".into()));
        }
        if self.branch_range.0 == 0 || self.branch_range.0 > self.branch_range.1 {
            return Err(PatError::Invalid(format!(
                "invalid branch range {:?}",
                self.branch_range
            )));
        }
        if !(self.width_range.0 > 0.0 && self.width_range.0 <= self.width_range.1) {
            return Err(PatError::Invalid(format!(
                "invalid width range {:?}",
                self.width_range
            )));
        }
        let (lo, hi) = self.intensity_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(PatError::Invalid(format!(
                "intensity range {:?} must sit inside (0, 1]",
                self.intensity_range
            )));
        }
        Ok(())
    }
}

/// Flip along the depth axis (row r <-> row nz-1-r); provides different
/// limited-view artifacts for the same structures.
pub fn vertical_flip(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(i, j)| img[[h - 1 - i, j]])
}

/// Hard-edged disk mask: intensity on pixels with squared distance <= r^2.
pub fn disk(nz: usize, nx: usize, cz: f64, cx: f64, radius: f64, intensity: f64) -> Array2<f64> {
    Array2::from_shape_fn((nz, nx), |(i, j)| {
        let dz = i as f64 - cz;
        let dx = j as f64 - cx;
        if dz * dz + dx * dx <= radius * radius {
            intensity
        } else {
            0.0
        }
    })
}

fn stamp_gaussian(img: &mut Array2<f64>, cz: f64, cx: f64, sigma: f64, intensity: f64) {
    let (h, w) = img.dim();
    let reach = (3.0 * sigma).ceil() as isize;
    let iz = cz.round() as isize;
    let ix = cx.round() as isize;
    for dz in -reach..=reach {
        for dx in -reach..=reach {
            let z = iz + dz;
            let x = ix + dx;
            if z < 0 || x < 0 || z >= h as isize || x >= w as isize {
                continue;
            }
            let rz = z as f64 - cz;
            let rx = x as f64 - cx;
            let g = intensity * (-(rz * rz + rx * rx) / (2.0 * sigma * sigma)).exp();
            let cell = &mut img[[z as usize, x as usize]];
            *cell = (*cell).max(g);
        }
    }
}

fn draw_vessels(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut img = Array2::zeros((spec.nz, spec.nx));
    let branches = rng.gen_range(spec.branch_range.0..=spec.branch_range.1);
    // Walkers: (z, x, heading, width, intensity, remaining steps).
    let mut walkers: Vec<(f64, f64, f64, f64, f64, usize)> = Vec::new();
    for _ in 0..branches {
        let z = rng.gen_range(0.1..0.9) * spec.nz as f64;
        let x = rng.gen_range(0.05..0.95) * spec.nx as f64;
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let width = rng.gen_range(spec.width_range.0..=spec.width_range.1);
        let intensity = rng.gen_range(spec.intensity_range.0..=spec.intensity_range.1);
        let steps = rng.gen_range(spec.nx / 2..spec.nx * 3 / 2);
        walkers.push((z, x, heading, width, intensity, steps));
    }
    let mut spawned = 0usize;
    while let Some((mut z, mut x, mut heading, width, intensity, steps)) = walkers.pop() {
        for _ in 0..steps {
            stamp_gaussian(&mut img, z, x, width / 2.0, intensity);
            heading += rng.gen_range(-0.35..0.35);
            z += heading.sin() * 0.7;
            x += heading.cos() * 0.7;
            if z < -2.0 || x < -2.0 || z > spec.nz as f64 + 2.0 || x > spec.nx as f64 + 2.0 {
                break;
            }
            // Occasional branching, capped so runaway splits cannot happen.
            if spawned < 12 && rng.gen::<f64>() < 0.02 {
                spawned += 1;
                let split = heading + rng.gen_range(0.5..1.2) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let child_width = (width * rng.gen_range(0.6..0.9)).max(spec.width_range.0);
                walkers.push((z, x, split, child_width, intensity, steps / 2));
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

fn draw_disks(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut img = Array2::zeros((spec.nz, spec.nx));
    let count = rng.gen_range(2..=5);
    for _ in 0..count {
        let cz = rng.gen_range(0.15..0.85) * spec.nz as f64;
        let cx = rng.gen_range(0.15..0.85) * spec.nx as f64;
        let radius = rng.gen_range(2.0..(spec.nz.min(spec.nx) as f64 / 5.0).max(2.5));
        let intensity = rng.gen_range(spec.intensity_range.0..=spec.intensity_range.1);
        let d = disk(spec.nz, spec.nx, cz, cx, radius, intensity);
        img.zip_mut_with(&d, |a: &mut f64, &b| *a = a.max(b));
    }
    img
}

fn draw_points(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut img = Array2::zeros((spec.nz, spec.nx));
    let count = rng.gen_range(3..=10);
    for _ in 0..count {
        let z = rng.gen_range(1..spec.nz - 1);
        let x = rng.gen_range(1..spec.nx - 1);
        img[[z, x]] = rng.gen_range(spec.intensity_range.0..=spec.intensity_range.1);
    }
    img
}

/// Generates `count` accepted phantom images (2x that with flip
/// augmentation), deterministically for a fixed spec.
pub fn generate_phantoms(spec: &PhantomSpec, count: usize) -> Result<Vec<Array2<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(count);
    let mut consecutive_failures = 0usize;
    while out.len() < count {
        let img = match spec.kind {
            PhantomKind::Vessels => draw_vessels(spec, &mut rng),
            PhantomKind::Disks => draw_disks(spec, &mut rng),
            PhantomKind::Points => draw_points(spec, &mut rng),
        };
        let mass: f64 = img.iter().sum();
        if mass > spec.mass_threshold {
            out.push(img);
            consecutive_failures = 0;
        } else {
            consecutive_failures += 1;
            if consecutive_failures >= 100 {
                return Err(PatError::Generator(format!(
                    "generator failed the mass threshold {} on 100 consecutive draws",
                    spec.mass_threshold
                )));
            }
        }
    }
    if spec.flip_augment {
        let flipped: Vec<Array2<f64>> = out.iter().map(vertical_flip).collect();
        out.extend(flipped);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = PhantomSpec::vessels(32, 48, 123);
        let a = generate_phantoms(&spec, 3).unwrap();
        let b = generate_phantoms(&spec, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accepted_phantoms_clear_the_mass_threshold() {
        let mut spec = PhantomSpec::vessels(80, 128, 5);
        spec.mass_threshold = 150.0;
        let imgs = generate_phantoms(&spec, 5).unwrap();
        for img in &imgs {
            let mass: f64 = img.iter().sum();
            assert!(mass > 150.0, "mass {mass}");
            assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn disk_area_matches_pi_r_squared() {
        let d = disk(80, 128, 40.0, 64.0, 5.0, 1.0);
        let sum: f64 = d.iter().sum();
        let expected = std::f64::consts::PI * 25.0;
        assert!(
            (sum - expected).abs() <= 8.0,
            "disk mass {sum} vs analytic {expected}"
        );
    }

    #[test]
    fn flip_augmentation_doubles_the_set() {
        let mut spec = PhantomSpec::vessels(24, 32, 7);
        spec.flip_augment = true;
        let imgs = generate_phantoms(&spec, 4).unwrap();
        assert_eq!(imgs.len(), 8);
        assert_eq!(imgs[4], vertical_flip(&imgs[0]));
    }

    #[test]
    fn impossible_threshold_errors_after_100_draws() {
        let mut spec = PhantomSpec::vessels(16, 16, 1);
        spec.mass_threshold = 1e9;
        assert!(matches!(
            generate_phantoms(&spec, 1),
            Err(PatError::Generator(_))
        ));
    }
}
