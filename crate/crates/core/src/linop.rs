//! Linear operators between 2D real fields, dense assembly and small dense
//! matrices used as oracles on tiny grids.

use ndarray::Array2;

use crate::error::{PatError, Result};

/// A linear map between 2D real fields with an exact transpose.
///
/// Implementations must be pure: repeated application to the same input
/// yields bit-identical output, and distinct applications may run
/// concurrently.
pub trait FieldOp: Send + Sync {
    /// (rows, cols) of the input field.
    fn domain_shape(&self) -> (usize, usize);
    /// (rows, cols) of the output field.
    fn range_shape(&self) -> (usize, usize);
    fn apply(&self, x: &Array2<f64>) -> Array2<f64>;
    /// Exact discrete transpose of [`apply`](Self::apply).
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64>;
}

/// Identity on a fixed shape.
pub struct IdentityOp(pub (usize, usize));

impl FieldOp for IdentityOp {
    fn domain_shape(&self) -> (usize, usize) {
        self.0
    }
    fn range_shape(&self) -> (usize, usize) {
        self.0
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.clone()
    }
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        y.clone()
    }
}

/// Scalar multiple of the identity.
pub struct ScaleOp {
    pub shape: (usize, usize),
    pub factor: f64,
}

impl FieldOp for ScaleOp {
    fn domain_shape(&self) -> (usize, usize) {
        self.shape
    }
    fn range_shape(&self) -> (usize, usize) {
        self.shape
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x * self.factor
    }
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        y * self.factor
    }
}

/// Dense row-major matrix; the oracle format produced by [`assemble_dense`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let yr = y[r];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yr;
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// self * other.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        out
    }
}

/// A [`FieldOp`] backed by an explicit dense matrix acting on flattened
/// (row-major) fields.
pub struct DenseOp {
    pub matrix: DenseMatrix,
    pub domain: (usize, usize),
    pub range: (usize, usize),
}

impl DenseOp {
    pub fn new(matrix: DenseMatrix, domain: (usize, usize), range: (usize, usize)) -> Result<DenseOp> {
        if matrix.cols != domain.0 * domain.1 || matrix.rows != range.0 * range.1 {
            return Err(PatError::shape(
                "DenseOp",
                format!("{}x{}", range.0 * range.1, domain.0 * domain.1),
                format!("{}x{}", matrix.rows, matrix.cols),
            ));
        }
        Ok(DenseOp {
            matrix,
            domain,
            range,
        })
    }
}

impl FieldOp for DenseOp {
    fn domain_shape(&self) -> (usize, usize) {
        self.domain
    }
    fn range_shape(&self) -> (usize, usize) {
        self.range
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let flat: Vec<f64> = x.iter().copied().collect();
        let out = self.matrix.matvec(&flat);
        Array2::from_shape_vec(self.range, out).expect("shape checked at construction")
    }
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        let flat: Vec<f64> = y.iter().copied().collect();
        let out = self.matrix.matvec_transpose(&flat);
        Array2::from_shape_vec(self.domain, out).expect("shape checked at construction")
    }
}

/// Maximum flattened domain size accepted by [`assemble_dense`].
pub const DENSE_ASSEMBLY_CAP: usize = 4096;

/// Builds the dense matrix of any linear operator by applying it to all
/// basis fields. Column j is `op` applied to the j-th (row-major) basis
/// image. Intended for tiny grids; errors beyond [`DENSE_ASSEMBLY_CAP`].
pub fn assemble_dense(op: &dyn FieldOp) -> Result<DenseMatrix> {
    let (dr, dc) = op.domain_shape();
    let (rr, rc) = op.range_shape();
    let n = dr * dc;
    let m = rr * rc;
    if n > DENSE_ASSEMBLY_CAP {
        return Err(PatError::Invalid(format!(
            "assemble_dense: domain size {n} exceeds cap {DENSE_ASSEMBLY_CAP}"
        )));
    }
    let mut out = DenseMatrix::zeros(m, n);
    let mut basis = Array2::<f64>::zeros((dr, dc));
    for j in 0..n {
        basis[[j / dc, j % dc]] = 1.0;
        let col = op.apply(&basis);
        basis[[j / dc, j % dc]] = 0.0;
        for (i, v) in col.iter().enumerate() {
            out.data[i * n + j] = *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_assembles_to_identity() {
        let op = IdentityOp((2, 2));
        let m = assemble_dense(&op).unwrap();
        assert_eq!(m, DenseMatrix::identity(4));
    }

    #[test]
    fn zero_operator_assembles_to_zero() {
        let op = ScaleOp {
            shape: (3, 2),
            factor: 0.0,
        };
        let m = assemble_dense(&op).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cap_is_enforced() {
        let op = IdentityOp((65, 64));
        assert!(assemble_dense(&op).is_err());
    }

    #[test]
    fn dense_op_transpose_matches_matrix_transpose() {
        let mut m = DenseMatrix::zeros(4, 6);
        for (i, v) in m.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let op = DenseOp::new(m.clone(), (2, 3), (2, 2)).unwrap();
        let y = Array2::from_shape_fn((2, 2), |(i, j)| (i + 2 * j) as f64 + 0.5);
        let via_op = op.apply_transpose(&y);
        let flat: Vec<f64> = y.iter().copied().collect();
        let via_mat = m.transpose().matvec(&flat);
        for (a, b) in via_op.iter().zip(via_mat.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
