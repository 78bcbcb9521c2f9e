//! Dense row-major f64 matrix. The only container in the crate: weights,
//! activations, gradients, and positional tables are all `Matrix` values.
//!
//! Invariant: `data.len() == rows * cols`, and every entry is finite after
//! any public operation. Operations that can produce NaN or infinity from
//! finite inputs (products, sums, exponentials, scaling) therefore return
//! `Result` and check their output; bounded maps (softplus, silu,
//! transpose) return plainly.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRaw", into = "MatrixRaw")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialization image of a matrix: shape plus flat row-major entries.
#[derive(Serialize, Deserialize, Clone)]
struct MatrixRaw {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRaw> for Matrix {
    type Error = String;
    fn try_from(raw: MatrixRaw) -> std::result::Result<Self, String> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data).map_err(|e| e.to_string())
    }
}

impl From<Matrix> for MatrixRaw {
    fn from(m: Matrix) -> MatrixRaw {
        MatrixRaw {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    /// Zero matrix. Dimensions must be positive.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from flat row-major entries, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidInput {
                reason: format!(
                    "matrix {}x{} needs {} entries, got {}",
                    rows,
                    cols,
                    rows * cols,
                    data.len()
                ),
            });
        }
        let m = Matrix { rows, cols, data };
        m.check_finite("from_vec")?;
        Ok(m)
    }

    /// Builds from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidInput {
                reason: "matrix needs at least one row and one column".into(),
            });
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput {
                reason: "ragged rows in matrix literal".into(),
            });
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn check_finite(&self, op: &str) -> Result<()> {
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.get(r, c).is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("{op} result at ({r},{c})"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Standard matrix product; `self.cols` must equal `b.rows`.
    pub fn matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        out.check_finite("matmul")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    fn zip(&self, b: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: b.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&b.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        out.check_finite(op)?;
        Ok(out)
    }

    pub fn add(&self, b: &Matrix) -> Result<Matrix> {
        self.zip(b, "add", |a, b| a + b)
    }

    pub fn sub(&self, b: &Matrix) -> Result<Matrix> {
        self.zip(b, "sub", |a, b| a - b)
    }

    /// Entrywise product.
    pub fn hadamard(&self, b: &Matrix) -> Result<Matrix> {
        self.zip(b, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Result<Matrix> {
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| a * s).collect(),
        };
        out.check_finite("scale")?;
        Ok(out)
    }

    /// Entrywise exponential; overflows to infinity are reported as errors.
    pub fn exp(&self) -> Result<Matrix> {
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| a.exp()).collect(),
        };
        out.check_finite("exp")?;
        Ok(out)
    }

    /// Entrywise softplus; bounded by |x| + ln 2, so always finite.
    pub fn softplus(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| softplus(a)).collect(),
        }
    }

    /// Entrywise silu (x * sigmoid(x)); bounded by |x|, so always finite.
    pub fn silu(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| silu(a)).collect(),
        }
    }

    /// Largest absolute entry; 0 has no special casing.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise difference; shapes must match.
    pub fn max_abs_diff(&self, b: &Matrix) -> Result<f64> {
        if self.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape(),
                rhs: b.shape(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&b.data)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs())))
    }
}

/// Numerically stable softplus: ln(1 + e^x) without overflow for large x.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the softplus derivative.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of silu: sigmoid(x) * (1 + x * (1 - sigmoid(x))).
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Entrywise operation selector for the generic dispatch entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Softplus,
    Exp,
    Silu,
    Hadamard,
    Add,
    Sub,
    Scale,
}

/// Generic entrywise dispatch. Unary kinds take `a` alone, binary kinds
/// require `b` with a matching shape, and `Scale` requires `scalar`.
pub fn elementwise(
    kind: Elementwise,
    a: &Matrix,
    b: Option<&Matrix>,
    scalar: Option<f64>,
) -> Result<Matrix> {
    let need_b = || {
        b.ok_or(Error::InvalidInput {
            reason: format!("{kind:?} needs a second operand"),
        })
    };
    match kind {
        Elementwise::Softplus => Ok(a.softplus()),
        Elementwise::Exp => a.exp(),
        Elementwise::Silu => Ok(a.silu()),
        Elementwise::Hadamard => a.hadamard(need_b()?),
        Elementwise::Add => a.add(need_b()?),
        Elementwise::Sub => a.sub(need_b()?),
        Elementwise::Scale => a.scale(scalar.ok_or(Error::InvalidInput {
            reason: "Scale needs a scalar operand".into(),
        })?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_preserves_any_2x2() {
        let m = Matrix::from_rows(&[vec![3.0, -1.5], vec![0.25, 7.0]]).unwrap();
        let i = Matrix::identity(2);
        assert_eq!(i.matmul(&m).unwrap(), m);
        assert_eq!(m.matmul(&i).unwrap(), m);
    }

    #[test]
    fn matmul_scalar_case() {
        let a = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let p = a.matmul(&b).unwrap();
        assert_eq!(p.shape(), (2, 1));
        assert_eq!(p.get(0, 0), 17.0);
        assert_eq!(p.get(1, 0), 39.0);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn elementwise_analytic_values() {
        let z = Matrix::zeros(1, 1);
        assert!((z.softplus().get(0, 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(z.silu().get(0, 0), 0.0);
        assert_eq!(z.exp().unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn elementwise_dispatch_matches_methods() {
        let a = Matrix::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(
            elementwise(Elementwise::Add, &a, Some(&b), None).unwrap(),
            a.add(&b).unwrap()
        );
        assert_eq!(
            elementwise(Elementwise::Hadamard, &a, Some(&b), None).unwrap(),
            a.hadamard(&b).unwrap()
        );
        assert_eq!(
            elementwise(Elementwise::Scale, &a, None, Some(0.5)).unwrap(),
            a.scale(0.5).unwrap()
        );
        assert!(elementwise(Elementwise::Add, &a, None, None).is_err());
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        let big = Matrix::filled(1, 1, 1e308);
        assert!(matches!(big.scale(10.0), Err(Error::NonFinite { .. })));
        assert!(matches!(
            Matrix::filled(1, 1, 1e3).exp(),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn serde_round_trip_is_bit_exact() {
        let m = Matrix::from_rows(&[vec![0.1, -0.0], vec![1.0 / 3.0, 2.5e-17]]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: Matrix = serde_json::from_str(&json).unwrap();
        assert_eq!(m.data().len(), back.data().len());
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
