//! Non-parametric predictors: kernel ridge regression, Gaussian-process
//! conditioning, linear interpolation and k-nearest neighbours.
//!
//! Notation used in the docs below:
//!
//! | symbol        | meaning                                              |
//! |---------------|------------------------------------------------------|
//! | `x_*`, `y_*`  | stored training inputs and targets                   |
//! | `X`           | query inputs                                         |
//! | `K(A, B)`     | kernel matrix between the rows of `A` and `B`        |
//! | `𝛂`           | dual coefficients, one row per training point        |
//! | `α`           | scalar ridge regularizer                             |
//! | `σ_n²`        | observation noise variance                           |
//!
//! Posteriors are computed from the conditioning formulas of a zero-mean
//! joint Gaussian:
//! `μ = K(X, x_*) (K(x_*, x_*) + σ_n² I)⁻¹ y_*` and
//! `Σ = K(X, X) − K(X, x_*) (K(x_*, x_*) + σ_n² I)⁻¹ K(x_*, X)`.

use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Predictor};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, cholesky_with_jitter, Cholesky};

/// Diagonal jitter tried when an unregularized kernel matrix fails to factor.
pub const KERNEL_JITTER: f64 = 1e-10;

/// Eigenvalues of the posterior covariance down to this value are clamped to
/// zero; anything more negative is reported as a numerical failure.
pub const EIGEN_CLAMP_TOL: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(−γ ‖x − x'‖²)`
    Gaussian { gamma: f64 },
    /// `⟨x, x'⟩`
    Linear,
    /// `(⟨x, x'⟩ + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { gamma } if !(gamma > 0.0) || !gamma.is_finite() => {
                Err(Error::param(format!("gaussian gamma must be > 0, got {gamma}")))
            }
            KernelSpec::Polynomial { degree, .. } if degree < 1 => {
                Err(Error::param("polynomial kernel degree must be >= 1"))
            }
            KernelSpec::Polynomial { offset, .. } if !(offset >= 0.0) => {
                Err(Error::param(format!("polynomial kernel offset must be >= 0, got {offset}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { gamma } => {
                let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * r2).exp()
            }
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Polynomial { degree, offset } => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (dot + offset).powi(degree as i32)
            }
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// `gaussian:γ | linear | poly:degree[:offset]`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::param(format!("kernel '{s}' is missing a parameter")))?
                .parse::<f64>()
                .map_err(|_| Error::param(format!("bad kernel parameter in '{s}'")))
        };
        let spec = match parts[0] {
            "gaussian" | "rbf" => KernelSpec::Gaussian { gamma: num(1)? },
            "linear" => KernelSpec::Linear,
            "poly" | "polynomial" => {
                let degree = num(1)?;
                if degree.fract() != 0.0 || degree < 1.0 {
                    return Err(Error::param("polynomial kernel degree must be a positive integer"));
                }
                let offset = if parts.len() > 2 { num(2)? } else { 0.0 };
                KernelSpec::Polynomial { degree: degree as u32, offset }
            }
            other => return Err(Error::param(format!("unknown kernel '{other}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `K[i, j] = κ(x1_i, x2_j)`.
pub fn kernel_matrix(spec: &KernelSpec, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("kernel inputs (columns)", x1.ncols(), x2.ncols())?;
    let r1: Vec<Vec<f64>> = linalg::to_rows(x1);
    let r2: Vec<Vec<f64>> = linalg::to_rows(x2);
    Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| spec.eval(&r1[i], &r2[j])))
}

/// Symmetric kernel matrix of one point set, evaluated on the lower triangle
/// and mirrored so it is exactly symmetric.
fn gram(spec: &KernelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = linalg::to_rows(x);
    let n = rows.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorizes `K + shift·I`, adding [`KERNEL_JITTER`] when `shift == 0` and
/// the plain factorization fails.
fn factor_shifted(k: &DMatrix<f64>, shift: f64) -> Result<Cholesky> {
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += shift;
    }
    let jitter = if shift == 0.0 { KERNEL_JITTER } else { 0.0 };
    cholesky_with_jitter(&a, jitter).map(|(c, _)| c)
}

/// Kernel ridge regression: stored training inputs and dual coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub kernel: KernelSpec,
    #[serde(with = "linalg::rows_serde")]
    pub train_inputs: DMatrix<f64>,
    #[serde(with = "linalg::rows_serde")]
    pub dual_coefficients: DMatrix<f64>,
    pub alpha: f64,
}

/// `𝛂 = (K(x_*, x_*) + α I)⁻¹ y_*`.
pub fn krr_fit(d: &Dataset, kernel: &KernelSpec, alpha: f64) -> Result<KrrModel> {
    kernel.validate()?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("krr alpha must be >= 0, got {alpha}")));
    }
    if d.is_empty() {
        return Err(Error::InvalidData("krr needs at least one training sample".into()));
    }
    let k = gram(kernel, d.inputs());
    let chol = factor_shifted(&k, alpha)?;
    Ok(KrrModel {
        kernel: *kernel,
        train_inputs: d.inputs().clone(),
        dual_coefficients: chol.solve(d.targets())?,
        alpha,
    })
}

/// `Y = K(X, x_*) 𝛂`.
pub fn krr_predict(m: &KrrModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = kernel_matrix(&m.kernel, x, &m.train_inputs)?;
    Ok(k * &m.dual_coefficients)
}

impl Predictor for KrrModel {
    fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        krr_predict(self, inputs)
    }
}

/// Max-abs difference between `(ΦᵀΦ + αI)⁻¹Φᵀ` and `Φᵀ(ΦΦᵀ + αI)⁻¹`, each
/// obtained from its own Cholesky solve.
pub fn woodbury_discrepancy(phi: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::param(format!("woodbury check needs alpha > 0, got {alpha}")));
    }
    let pt = phi.transpose();
    let mut primal = &pt * phi;
    for i in 0..primal.nrows() {
        primal[(i, i)] += alpha;
    }
    let left = Cholesky::new(&primal)?.solve(&pt)?;

    let mut dual = phi * &pt;
    for i in 0..dual.nrows() {
        dual[(i, i)] += alpha;
    }
    let right = Cholesky::new(&dual)?.solve(phi)?.transpose();
    Ok(linalg::max_abs_diff(&left, &right))
}

/// Posterior mean and covariance at a set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct GprPosterior {
    pub mean: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub noise_variance: f64,
}

impl GprPosterior {
    /// Pointwise posterior standard deviation.
    pub fn std_dev(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Conditions a zero-mean Gaussian process on the training data and
/// evaluates the posterior at `x`.
pub fn gpr_posterior(d: &Dataset, x: &DMatrix<f64>, kernel: &KernelSpec, noise_variance: f64) -> Result<GprPosterior> {
    kernel.validate()?;
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::param(format!("noise variance must be >= 0, got {noise_variance}")));
    }
    let prior = gram(kernel, x);
    if d.is_empty() {
        return Ok(GprPosterior { mean: DMatrix::zeros(x.nrows(), d.n_outputs()), covariance: prior, noise_variance });
    }
    check_dim("gpr query (columns)", d.n_inputs(), x.ncols())?;
    let k_train = gram(kernel, d.inputs());
    let chol = factor_shifted(&k_train, noise_variance)?;
    let k_cross = kernel_matrix(kernel, d.inputs(), x)?; // n_* × n

    let weights = chol.solve(d.targets())?;
    let mean = k_cross.transpose() * weights;

    let mut v = k_cross;
    chol.forward_substitute(&mut v);
    let covariance = prior - v.transpose() * &v;
    let covariance = clamp_psd(covariance)?;
    Ok(GprPosterior { mean, covariance, noise_variance })
}

fn clamp_psd(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let mut needs_clamp = (0..n).any(|i| cov[(i, i)] < 0.0);
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < EIGEN_CLAMP_TOL * cov.amax().max(1.0) {
        return Err(Error::Numerical(format!("posterior covariance has eigenvalue {min:e} below the clamp tolerance")));
    }
    needs_clamp |= min < 0.0;
    if !needs_clamp {
        return Ok(cov);
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&vals) * q.transpose();
    // Reconstruct symmetric to the bit.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
        out[(i, i)] = out[(i, i)].max(0.0);
    }
    Ok(out)
}

/// GPR with the training data retained, so it can be stored and queried later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub kernel: KernelSpec,
    #[serde(with = "linalg::rows_serde")]
    pub train_inputs: DMatrix<f64>,
    #[serde(with = "linalg::rows_serde")]
    pub train_targets: DMatrix<f64>,
    pub noise_variance: f64,
}

impl GprModel {
    pub fn new(d: &Dataset, kernel: KernelSpec, noise_variance: f64) -> Result<Self> {
        kernel.validate()?;
        if !(noise_variance >= 0.0) {
            return Err(Error::param(format!("noise variance must be >= 0, got {noise_variance}")));
        }
        Ok(Self { kernel, train_inputs: d.inputs().clone(), train_targets: d.targets().clone(), noise_variance })
    }

    pub fn posterior(&self, x: &DMatrix<f64>) -> Result<GprPosterior> {
        let d = Dataset::new(self.train_inputs.clone(), self.train_targets.clone())?;
        gpr_posterior(&d, x, &self.kernel, self.noise_variance)
    }
}

impl Predictor for GprModel {
    fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.posterior(inputs)?.mean)
    }
}

/// Piecewise-linear interpolation in barycentric form between the two
/// abscissae bracketing `xq`.
pub fn interp1_linear(xs: &[f64], ys: &[f64], xq: f64) -> Result<f64> {
    check_dim("interpolation ordinates", xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(Error::InvalidData("interpolation needs at least one node".into()));
    }
    for w in xs.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidData(
                "interpolation abscissae must be strictly increasing (no duplicates)".into(),
            ));
        }
    }
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if !(xq >= lo && xq <= hi) {
        return Err(Error::param(format!("{xq} lies outside [{lo}, {hi}]; extrapolation is not supported")));
    }
    if xs.len() == 1 {
        return Ok(ys[0]);
    }
    // index of the right neighbour
    let j = xs.partition_point(|&v| v < xq).clamp(1, xs.len() - 1);
    let (x1, x2) = (xs[j - 1], xs[j]);
    let h = x2 - x1;
    let w1 = (x2 - xq) / h;
    let w2 = (xq - x1) / h;
    Ok(w1 * ys[j - 1] + w2 * ys[j])
}

/// Unweighted mean of the `k` nearest training targets (Euclidean distance,
/// ties resolved towards the lower row index).
pub fn knn_predict(d: &Dataset, xq: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > d.n_samples() {
        return Err(Error::param(format!("k must lie in 1..={}, got {k}", d.n_samples())));
    }
    check_dim("knn query width", d.n_inputs(), xq.len())?;
    let x = d.inputs();
    let mut dist: Vec<(f64, usize)> = (0..d.n_samples())
        .map(|i| {
            let r2: f64 = (0..xq.len()).map(|j| (x[(i, j)] - xq[j]).powi(2)).sum();
            (r2, i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = vec![0.0; d.n_outputs()];
    for &(_, i) in &dist[..k] {
        for (o, v) in out.iter_mut().zip(d.targets().row(i).iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= k as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn gaussian_kernel_hand_values() {
        let x = col(&[0.0, 1.0]);
        let k = kernel_matrix(&KernelSpec::Gaussian { gamma: 1.0 }, &x, &x).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert!((k[(0, 1)] - 0.36787944117144233).abs() < 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn linear_kernel_is_inner_product() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 0.0]);
        let k = kernel_matrix(&KernelSpec::Linear, &x, &x).unwrap();
        assert_eq!(k, &x * x.transpose());
    }

    #[test]
    fn kernel_dimension_mismatch() {
        assert!(kernel_matrix(&KernelSpec::Linear, &DMatrix::zeros(2, 2), &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn single_point_dual_coefficient_is_target() {
        let d = Dataset::from_xy(&[0.3], &[2.5]).unwrap();
        let m = krr_fit(&d, &KernelSpec::Gaussian { gamma: 2.0 }, 0.0).unwrap();
        assert_eq!(m.dual_coefficients[(0, 0)], 2.5);
    }

    #[test]
    fn zero_duals_predict_zero() {
        let m = KrrModel {
            kernel: KernelSpec::Gaussian { gamma: 1.0 },
            train_inputs: col(&[0.0, 1.0]),
            dual_coefficients: DMatrix::zeros(2, 1),
            alpha: 0.0,
        };
        assert!(krr_predict(&m, &col(&[0.4, 7.0])).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn woodbury_identity_cases() {
        assert!(woodbury_discrepancy(&DMatrix::identity(4, 4), 1.0).unwrap() < 1e-15);
        let phi = col(&[1.0, -2.0, 0.5, 3.0]);
        assert!(woodbury_discrepancy(&phi, 0.7).unwrap() < 1e-12);
        assert!(woodbury_discrepancy(&phi, 0.0).is_err());
    }

    #[test]
    fn empty_training_returns_prior() {
        let x = col(&[0.0, 0.5, 2.0]);
        let spec = KernelSpec::Gaussian { gamma: 0.8 };
        let p = gpr_posterior(&Dataset::empty(1, 1), &x, &spec, 0.1).unwrap();
        assert!(p.mean.iter().all(|&v| v == 0.0));
        assert_eq!(p.covariance, kernel_matrix(&spec, &x, &x).unwrap());
    }

    #[test]
    fn interpolation_hand_values() {
        assert_eq!(interp1_linear(&[0.0, 1.0], &[0.0, 2.0], 0.5).unwrap(), 1.0);
        assert_eq!(interp1_linear(&[0.0, 1.0, 3.0], &[4.0, 2.0, 7.0], 1.0).unwrap(), 2.0);
        assert_eq!(interp1_linear(&[0.0, 1.0, 3.0], &[4.0, 2.0, 7.0], 3.0).unwrap(), 7.0);
        assert!(interp1_linear(&[0.0, 1.0], &[0.0, 2.0], 1.5).is_err());
        assert!(interp1_linear(&[0.0, 0.0, 1.0], &[0.0, 1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn knn_cases() {
        let d = Dataset::from_xy(&[0.0, 1.0, 2.0, 3.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(knn_predict(&d, &[2.0], 1).unwrap(), vec![30.0]);
        assert_eq!(knn_predict(&d, &[0.7], 4).unwrap(), vec![25.0]);
        // 0.5 is equidistant from rows 0 and 1.
        assert_eq!(knn_predict(&d, &[0.5], 1).unwrap(), vec![10.0]);
        assert!(knn_predict(&d, &[0.5], 0).is_err());
        assert!(knn_predict(&d, &[0.5], 5).is_err());
    }

    #[test]
    fn kernel_names_parse() {
        assert_eq!("gaussian:2".parse::<KernelSpec>().unwrap(), KernelSpec::Gaussian { gamma: 2.0 });
        assert_eq!("linear".parse::<KernelSpec>().unwrap(), KernelSpec::Linear);
        assert_eq!("poly:3:1".parse::<KernelSpec>().unwrap(), KernelSpec::Polynomial { degree: 3, offset: 1.0 });
        assert!("gaussian:0".parse::<KernelSpec>().is_err());
        assert!("poly:0".parse::<KernelSpec>().is_err());
    }
}
