//! Dense factorizations shared by the estimators.
//!
//! Everything here works on small, dense `DMatrix<f64>` systems. Explicit
//! inverses are never formed.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix. Only the lower
    /// triangle of `a` is read.
    ///
    /// On failure the offending pivot is reported, which is the quantity a
    /// caller needs to decide on a jitter level.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "cholesky (square matrix)",
                expected: n,
                found: a.ncols(),
            });
        }
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
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

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Smallest diagonal entry of `L`.
    pub fn min_pivot(&self) -> f64 {
        self.l.diagonal().min()
    }

    /// Solves `L X = B` in place.
    pub fn forward_substitute(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        for c in 0..b.ncols() {
            for i in 0..n {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s / self.l[(i, i)];
            }
        }
    }

    /// Solves `Lᵀ X = B` in place.
    pub fn back_substitute(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        for c in 0..b.ncols() {
            for i in (0..n).rev() {
                let mut s = b[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * b[(k, c)];
                }
                b[(i, c)] = s / self.l[(i, i)];
            }
        }
    }

    /// Solves `A X = B` for every column of `B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "cholesky solve (rhs rows)",
                expected: self.dim(),
                found: b.nrows(),
            });
        }
        let mut x = b.clone();
        self.forward_substitute(&mut x);
        self.back_substitute(&mut x);
        Ok(x)
    }
}

/// Factorizes `a`, retrying once with `jitter` added to the diagonal when the
/// first attempt fails. Returns the factor and the jitter actually used.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, jitter: f64) -> Result<(Cholesky, f64)> {
    match Cholesky::new(a) {
        Ok(c) => Ok((c, 0.0)),
        Err(first) => {
            if jitter <= 0.0 {
                return Err(first);
            }
            let mut shifted = a.clone();
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += jitter;
            }
            match Cholesky::new(&shifted) {
                Ok(c) => {
                    log::warn!("factorization needed diagonal jitter {jitter:e}");
                    Ok((c, jitter))
                }
                Err(_) => Err(first),
            }
        }
    }
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub fn symmetric_condition(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest eigenvalue of a symmetric positive-semidefinite matrix by power
/// iteration. The start vector is fixed so the result is deterministic.
pub fn power_iteration(a: &DMatrix<f64>, max_iters: usize, tol: f64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64).sin());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Maximum absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Builds a matrix from row slices; every row must have the same length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    for r in rows {
        crate::error::check_dim("row length", ncols, r.len())?;
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Serde adapter storing a matrix as a list of rows.
pub(crate) mod rows_serde {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(D::Error::custom)
    }
}
