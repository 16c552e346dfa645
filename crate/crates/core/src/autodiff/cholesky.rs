//! Dense LLᵀ factorization for the small SPD systems produced by truss assembly.

use super::{AutodiffError, Matrix};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factors `a`, reading only its lower triangle.
    ///
    /// A pivot that is non-positive, or negligible relative to the largest
    /// diagonal entry, is reported by index.
    pub fn factor(a: &Matrix) -> Result<Self, AutodiffError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(AutodiffError::Shape {
                op: "cholesky",
                left: a.shape(),
                right: a.shape(),
            });
        }
        let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
        let tiny = scale * 1e-13;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > tiny) {
                return Err(AutodiffError::Singular { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// Solves `A X = B` column by column with forward and back substitution.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "right-hand side has wrong row count");
        let mut x = b.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_known_matrix() {
        let a = Matrix::from_row_slice(3, 3, &[4.0, 12.0, -16.0, 12.0, 37.0, -43.0, -16.0, -43.0, 98.0]);
        let c = Cholesky::factor(&a).unwrap();
        let expected = Matrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 6.0, 1.0, 0.0, -8.0, 5.0, 3.0]);
        assert!((c.lower() - expected).abs().max() < 1e-12);
        let b = Matrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let x = c.solve(&b);
        assert!((&a * &x - b).abs().max() < 1e-10);
    }

    #[test]
    fn reports_failing_pivot() {
        // second pivot is exactly zero
        let a = Matrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        match Cholesky::factor(&a) {
            Err(AutodiffError::Singular { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(Cholesky::factor(&a), Err(AutodiffError::Singular { pivot: 1, .. })));
    }
}
