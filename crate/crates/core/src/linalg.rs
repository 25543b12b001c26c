//! Thin wrappers over faer: dense symmetric eigendecomposition and the
//! congruence transform Vᵀ·A·V.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::linalg::matmul::matmul;
use faer::diag::Diag;
use faer::{Accum, Mat, MatRef, Par};

use crate::error::{Error, Result};

/// Eigenvalues ascending, eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

impl SymmetricEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// Dense symmetric eigensolver. Runs sequentially so results are bit-stable.
pub fn symmetric_eigen(a: MatRef<'_, f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::param("matrix", format!("not square: {}x{}", n, a.ncols())));
    }
    let bad = |reason: String| Error::Eigensolver {
        dim: n,
        max_abs: max_abs(a),
        reason,
    };
    for j in 0..n {
        for i in 0..n {
            if !a[(i, j)].is_finite() {
                return Err(bad(format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    let par = Par::Seq;
    let mut u = Mat::<f64>::zeros(n, n);
    let mut s = Diag::<f64>::zeros(n);
    let mut mem = MemBuffer::new(evd::self_adjoint_evd_scratch::<f64>(
        n,
        ComputeEigenvectors::Yes,
        par,
        Default::default(),
    ));
    evd::self_adjoint_evd(
        a,
        s.as_mut(),
        Some(u.as_mut()),
        par,
        MemStack::new(&mut mem),
        Default::default(),
    )
    .map_err(|e| bad(format!("{e:?}")))?;
    let values: Vec<f64> = (0..n).map(|i| s[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite eigenvalue".into()));
    }
    Ok(SymmetricEigen { values, vectors: u })
}

/// C = A·B.
pub fn matmul_nn(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut c = Mat::<f64>::zeros(a.nrows(), b.ncols());
    matmul(c.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    c
}

/// Vᵀ·A·V, symmetrized exactly.
pub fn congruence(v: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Mat<f64> {
    let av = matmul_nn(a, v);
    let mut out = matmul_nn(v.transpose(), av.as_ref());
    let n = out.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    out
}

/// Frobenius norm.
pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

/// Max over columns k of ‖A v_k − λ_k v_k‖ for the listed columns.
pub fn max_residual(a: MatRef<'_, f64>, eig: &SymmetricEigen, cols: std::ops::Range<usize>) -> f64 {
    let v = eig.vectors.as_ref();
    let sub = v.subcols(cols.start, cols.len());
    let av = matmul_nn(a, sub);
    let mut worst = 0.0f64;
    for (c, k) in cols.enumerate() {
        let mut r = 0.0;
        for i in 0..a.nrows() {
            let d = av[(i, c)] - eig.values[k] * v[(i, k)];
            r += d * d;
        }
        worst = worst.max(r.sqrt());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonalizes_small_matrix() {
        let a = Mat::from_fn(3, 3, |i, j| [[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]][i][j]);
        let e = symmetric_eigen(a.as_ref()).unwrap();
        let r2 = 2f64.sqrt();
        let want = [2.0 - r2, 2.0, 2.0 + r2];
        for (x, y) in e.values.iter().zip(want) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(max_residual(a.as_ref(), &e, 0..3) < 1e-14);
        let d = congruence(e.vectors.as_ref(), a.as_ref());
        for i in 0..3 {
            assert!((d[(i, i)] - want[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_nan() {
        let mut a = Mat::<f64>::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(symmetric_eigen(a.as_ref()), Err(Error::Eigensolver { .. })));
    }
}
