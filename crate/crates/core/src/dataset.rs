//! Dataset simulation, storage and split management.
//!
//! A dataset directory holds (phantom, clean data, noisy data) tensor-file
//! triples plus a plain-text manifest carrying the grid, the noise level,
//! per-entry file names with their split assignment, and per-sample SNR.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diagnostics::snr_db;
use crate::error::{PatError, Result};
use crate::field::{Image, SensorData};
use crate::grid::{validate_grid, Grid};
use crate::learned::TrainSample;
use crate::tensor_file::{load_tensor2, save_tensor2};
use crate::wave::simulate_forward;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(tag: &str) -> Result<Split> {
        match tag {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(PatError::Invalid(format!("unknown split: {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: usize,
    pub phantom: String,
    pub clean: String,
    pub noisy: String,
    pub split: Split,
    pub snr_db: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub grid: Grid,
    pub noise_pct: f64,
    pub entries: Vec<DatasetEntry>,
}

/// Simulates (clean, noisy) sensor pairs in memory. Noise is elementwise
/// N(0, (noise_pct * max|clean|)^2) per sample; with noise_pct = 0 the noisy
/// copy equals the clean one exactly.
pub fn simulate_pairs(
    images: &[Image],
    g: &Grid,
    noise_pct: f64,
    seed: u64,
) -> Result<Vec<(SensorData, SensorData, f64)>> {
    let g = validate_grid(*g)?;
    if !(noise_pct.is_finite() && noise_pct >= 0.0) {
        return Err(PatError::Invalid(format!(
            "noise_pct must be >= 0, got {noise_pct}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let clean = simulate_forward(img, &g)?;
        let (noisy, snr) = if noise_pct == 0.0 {
            (clean.clone(), f64::INFINITY)
        } else {
            let peak = clean.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let sigma = noise_pct * peak;
            let noisy_values = if sigma == 0.0 {
                clean.values().clone()
            } else {
                let dist = Normal::new(0.0, sigma).expect("sigma is finite and positive");
                clean.values().mapv(|v| v + dist.sample(&mut rng))
            };
            let snr = snr_db(clean.values(), &noisy_values).unwrap_or(f64::INFINITY);
            (SensorData::new(noisy_values, &g)?, snr)
        };
        out.push((clean, noisy, snr));
    }
    Ok(out)
}

/// Simulates and writes a dataset directory: phantom_NNNN.patr,
/// clean_NNNN.patr, noisy_NNNN.patr and manifest.txt. All entries start in
/// the train split.
pub fn simulate_dataset(
    images: &[Image],
    g: &Grid,
    noise_pct: f64,
    seed: u64,
    dir: &Path,
) -> Result<Dataset> {
    std::fs::create_dir_all(dir).map_err(|e| PatError::io(dir, e))?;
    let pairs = simulate_pairs(images, g, noise_pct, seed)?;
    let mut entries = Vec::with_capacity(images.len());
    for (i, (img, (clean, noisy, snr))) in images.iter().zip(pairs.into_iter()).enumerate() {
        let phantom = format!("phantom_{i:04}.patr");
        let clean_name = format!("clean_{i:04}.patr");
        let noisy_name = format!("noisy_{i:04}.patr");
        save_tensor2(&dir.join(&phantom), img.values())?;
        save_tensor2(&dir.join(&clean_name), clean.values())?;
        save_tensor2(&dir.join(&noisy_name), noisy.values())?;
        entries.push(DatasetEntry {
            id: i,
            phantom,
            clean: clean_name,
            noisy: noisy_name,
            split: Split::Train,
            snr_db: snr,
        });
    }
    let ds = Dataset {
        dir: dir.to_path_buf(),
        grid: *g,
        noise_pct,
        entries,
    };
    ds.save_manifest()?;
    Ok(ds)
}

/// Assigns disjoint, exhaustive, seed-deterministic splits. Fractions must
/// sum to 1; a positive fraction that receives zero samples is an error.
pub fn split_dataset(ds: &mut Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<()> {
    let (ft, fv, fe) = fractions;
    if !(ft >= 0.0 && fv >= 0.0 && fe >= 0.0) {
        return Err(PatError::Invalid("fractions must be nonnegative".into()));
    }
    if ((ft + fv + fe) - 1.0).abs() > 1e-9 {
        return Err(PatError::Invalid(format!(
            "fractions must sum to 1, got {}",
            ft + fv + fe
        )));
    }
    let n = ds.entries.len();
    let n_val = (fv * n as f64).floor() as usize;
    let n_test = (fe * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    for (fraction, size, name) in [
        (ft, n_train, "train"),
        (fv, n_val, "val"),
        (fe, n_test, "test"),
    ] {
        if fraction > 0.0 && size == 0 {
            return Err(PatError::Invalid(format!(
                "split would leave the {name} partition empty"
            )));
        }
    }
    // Seeded Fisher-Yates over the entry indices.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    for (rank, &idx) in order.iter().enumerate() {
        ds.entries[idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    ds.save_manifest()
}

impl Dataset {
    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.txt")
    }

    pub fn save_manifest(&self) -> Result<()> {
        let mut text = String::new();
        text.push_str("# patpd dataset manifest\n");
        let g = &self.grid;
        text.push_str(&format!("nz={}\nnx={}\ndx={}\nc={}\ndt={}\nnt={}\n", g.nz, g.nx, g.dx, g.c, g.dt, g.nt));
        text.push_str(&format!("noise_pct={}\n", self.noise_pct));
        for e in &self.entries {
            text.push_str(&format!(
                "entry={},{},{},{},{},{}\n",
                e.id,
                e.phantom,
                e.clean,
                e.noisy,
                e.split.tag(),
                e.snr_db
            ));
        }
        let path = self.manifest_path();
        std::fs::write(&path, text).map_err(|e| PatError::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| PatError::io(&path, e))?;
        let mut fields = std::collections::BTreeMap::new();
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(PatError::Invalid(format!("bad manifest line: {line}")));
            };
            if key == "entry" {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 6 {
                    return Err(PatError::Invalid(format!("bad manifest entry: {value}")));
                }
                entries.push(DatasetEntry {
                    id: parts[0]
                        .parse()
                        .map_err(|e| PatError::Invalid(format!("bad id: {e}")))?,
                    phantom: parts[1].to_string(),
                    clean: parts[2].to_string(),
                    noisy: parts[3].to_string(),
                    split: Split::parse(parts[4])?,
                    snr_db: parts[5]
                        .parse()
                        .map_err(|e| PatError::Invalid(format!("bad snr: {e}")))?,
                });
            } else {
                fields.insert(key.to_string(), value.to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            fields
                .get(k)
                .ok_or_else(|| PatError::Invalid(format!("manifest missing {k}")))
        };
        let grid = Grid::new(
            get("nz")?.parse().map_err(|e| PatError::Invalid(format!("nz: {e}")))?,
            get("nx")?.parse().map_err(|e| PatError::Invalid(format!("nx: {e}")))?,
            get("dx")?.parse().map_err(|e| PatError::Invalid(format!("dx: {e}")))?,
            get("c")?.parse().map_err(|e| PatError::Invalid(format!("c: {e}")))?,
            get("dt")?.parse().map_err(|e| PatError::Invalid(format!("dt: {e}")))?,
            get("nt")?.parse().map_err(|e| PatError::Invalid(format!("nt: {e}")))?,
        )?;
        let noise_pct = get("noise_pct")?
            .parse()
            .map_err(|e| PatError::Invalid(format!("noise_pct: {e}")))?;
        let ds = Dataset {
            dir: dir.to_path_buf(),
            grid,
            noise_pct,
            entries,
        };
        ds.check_files()?;
        Ok(ds)
    }

    /// Every listed file exists and matches the grid.
    pub fn check_files(&self) -> Result<()> {
        for e in &self.entries {
            for (name, shape) in [
                (&e.phantom, self.grid.image_shape()),
                (&e.clean, self.grid.data_shape()),
                (&e.noisy, self.grid.data_shape()),
            ] {
                let path = self.dir.join(name);
                let t = load_tensor2(&path)?;
                if t.dim() != shape {
                    return Err(PatError::shape(
                        format!("dataset file {name}"),
                        format!("{shape:?}"),
                        format!("{:?}", t.dim()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Loads (target, noisy data) pairs of one split into memory.
    pub fn load_samples(&self, split: Split) -> Result<Vec<TrainSample>> {
        let mut out = Vec::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            let target: Array2<f64> = load_tensor2(&self.dir.join(&e.phantom))?;
            let noisy: Array2<f64> = load_tensor2(&self.dir.join(&e.noisy))?;
            out.push(TrainSample {
                target: Image::new(target, &self.grid)?,
                data: SensorData::new(noisy, &self.grid)?,
            });
        }
        Ok(out)
    }

    pub fn mean_snr_db(&self) -> f64 {
        let finite: Vec<f64> = self
            .entries
            .iter()
            .map(|e| e.snr_db)
            .filter(|s| s.is_finite())
            .collect();
        if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantoms, PhantomSpec};

    fn tiny_images(g: &Grid, count: usize) -> Vec<Image> {
        let mut spec = PhantomSpec::vessels(g.nz, g.nx, 3);
        spec.mass_threshold = 1.0;
        generate_phantoms(&spec, count)
            .unwrap()
            .into_iter()
            .map(|v| Image::new(v, g).unwrap())
            .collect()
    }

    #[test]
    fn zero_noise_keeps_clean_data() {
        let g = Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap();
        let imgs = tiny_images(&g, 2);
        let pairs = simulate_pairs(&imgs, &g, 0.0, 7).unwrap();
        for (clean, noisy, snr) in &pairs {
            assert_eq!(clean.values(), noisy.values());
            assert_eq!(*snr, f64::INFINITY);
        }
    }

    #[test]
    fn fixed_seed_reproduces_noise() {
        let g = Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap();
        let imgs = tiny_images(&g, 2);
        let a = simulate_pairs(&imgs, &g, 0.01, 9).unwrap();
        let b = simulate_pairs(&imgs, &g, 0.01, 9).unwrap();
        for ((_, na, _), (_, nb, _)) in a.iter().zip(&b) {
            assert_eq!(na.values(), nb.values());
        }
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let g = Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let imgs = tiny_images(&g, 10);
        let mut ds = simulate_dataset(&imgs, &g, 0.01, 1, dir.path()).unwrap();
        split_dataset(&mut ds, (0.8, 0.1, 0.1), 5).unwrap();
        let count = |s: Split| ds.entries.iter().filter(|e| e.split == s).count();
        assert_eq!(count(Split::Train), 8);
        assert_eq!(count(Split::Val), 1);
        assert_eq!(count(Split::Test), 1);
        let first: Vec<Split> = ds.entries.iter().map(|e| e.split).collect();
        split_dataset(&mut ds, (0.8, 0.1, 0.1), 5).unwrap();
        let second: Vec<Split> = ds.entries.iter().map(|e| e.split).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn all_train_fraction_is_accepted() {
        let g = Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let imgs = tiny_images(&g, 3);
        let mut ds = simulate_dataset(&imgs, &g, 0.0, 1, dir.path()).unwrap();
        split_dataset(&mut ds, (1.0, 0.0, 0.0), 2).unwrap();
        assert!(ds.entries.iter().all(|e| e.split == Split::Train));
    }

    #[test]
    fn manifest_round_trip() {
        let g = Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let imgs = tiny_images(&g, 3);
        let mut ds = simulate_dataset(&imgs, &g, 0.01, 1, dir.path()).unwrap();
        split_dataset(&mut ds, (0.4, 0.3, 0.3), 2).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded.entries.len(), 3);
        assert_eq!(loaded.grid, g);
        let train = loaded.load_samples(Split::Train).unwrap();
        assert_eq!(train.len(), 1);
    }
}
