//! Bit-exact tensor file I/O ("PATR" format).
//!
//! Layout, all little-endian:
//!   bytes 0-3   ASCII "PATR"
//!   bytes 4-7   version u32 (= 1)
//!   bytes 8-11  rank u32
//!   then rank x u32 dims
//!   then product(dims) x f32, row-major
//!
//! Values are stored as 32-bit IEEE and computed in 64-bit internally; a
//! saved f64 is rounded to the nearest f32. Loading yields exactly the
//! stored f32 values widened to f64, so load(save(v)) == v whenever v is
//! f32-representable (in particular for anything previously loaded).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{PatError, Result};

pub const MAGIC: &[u8; 4] = b"PATR";
pub const VERSION: u32 = 1;

pub fn save_tensor(path: &Path, values: &ArrayD<f64>) -> Result<()> {
    let dims: Vec<usize> = values.shape().to_vec();
    if dims.is_empty() {
        return Err(PatError::TensorFile {
            path: path.to_path_buf(),
            reason: "rank must be >= 1".into(),
        });
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(PatError::TensorFile {
            path: path.to_path_buf(),
            reason: "zero dim".into(),
        });
    }
    let mut product: u64 = 1;
    for &d in &dims {
        if d > u32::MAX as usize {
            return Err(PatError::TensorFile {
                path: path.to_path_buf(),
                reason: "dimension overflow".into(),
            });
        }
        product = product
            .checked_mul(d as u64)
            .filter(|&p| p <= u32::MAX as u64)
            .ok_or_else(|| PatError::TensorFile {
                path: path.to_path_buf(),
                reason: "dimension overflow".into(),
            })?;
    }

    let file = File::create(path).map_err(|e| PatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| PatError::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(dims.len() as u32).to_le_bytes()).map_err(io_err)?;
    for &d in &dims {
        w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
    }
    // ArrayD iteration follows logical row-major order.
    for &v in values.iter() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<ArrayD<f64>> {
    let file = File::open(path).map_err(|e| PatError::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| PatError::io(path, e);
    let bad = |reason: &str| PatError::TensorFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank == 0 || rank > 8 {
        return Err(bad(&format!("unreasonable rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut product: u64 = 1;
    for _ in 0..rank {
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let d = u32::from_le_bytes(u32buf) as usize;
        if d == 0 {
            return Err(bad("zero dim"));
        }
        product = product
            .checked_mul(d as u64)
            .filter(|&p| p <= u32::MAX as u64)
            .ok_or_else(|| bad("dimension overflow"))?;
        dims.push(d);
    }
    let mut data = Vec::with_capacity(product as usize);
    let mut f32buf = [0u8; 4];
    for _ in 0..product {
        r.read_exact(&mut f32buf).map_err(io_err)?;
        data.push(f32::from_le_bytes(f32buf) as f64);
    }
    // Trailing garbage means the file is not what we wrote.
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(io_err)? != 0 {
        return Err(bad("trailing bytes after payload"));
    }
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| bad(&e.to_string()))
}

pub fn save_tensor2(path: &Path, values: &Array2<f64>) -> Result<()> {
    save_tensor(path, &values.clone().into_dyn())
}

pub fn load_tensor2(path: &Path) -> Result<Array2<f64>> {
    let t = load_tensor(path)?;
    let shape = t.shape().to_vec();
    t.into_dimensionality::<ndarray::Ix2>().map_err(|_| PatError::TensorFile {
        path: path.to_path_buf(),
        reason: format!("expected rank 2, got shape {shape:?}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_2x2_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.patr");
        let v = array![[1.0, 2.0], [3.0, 4.0]].into_dyn();
        save_tensor(&p, &v).unwrap();
        let w = load_tensor(&p).unwrap();
        assert_eq!(v, w);
    }

    #[test]
    fn zero_dim_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.patr");
        let v = ArrayD::<f64>::zeros(IxDyn(&[2, 0]));
        let err = save_tensor(&p, &v).unwrap_err();
        assert!(err.to_string().contains("zero dim"));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.patr");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = load_tensor(&p).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn random_rank3_round_trip_is_bit_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // f32-representable values round-trip with max abs diff 0.
        let data: Vec<f64> = (0..3 * 5 * 4).map(|_| rng.gen::<f32>() as f64).collect();
        let v = ArrayD::from_shape_vec(IxDyn(&[3, 5, 4]), data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.patr");
        save_tensor(&p, &v).unwrap();
        let w = load_tensor(&p).unwrap();
        let max_diff = v
            .iter()
            .zip(w.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert_eq!(max_diff, 0.0);
    }
}
