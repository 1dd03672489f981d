//! Linear-in-parameters regression: `Y = Φ(X) W`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FlatParams, Predictor};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Cholesky};
use crate::losses::LossSpec;
use crate::optim::Trainable;

/// Condition numbers above this trigger a warning in [`ridge_fit`].
pub const CONDITION_WARNING: f64 = 1e12;

pub const SCHEMA_VERSION: u32 = 1;

/// Basis functions spanning the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// Scalar monomials ordered highest power first: `[x^d, …, x, 1]`.
    Polynomial { degree: usize },
    /// `exp(−c_k² ‖x − x_{c,k}‖²)` for each center row.
    GaussianRbf {
        #[serde(with = "linalg::rows_serde")]
        centers: DMatrix<f64>,
        shapes: Vec<f64>,
    },
    /// The raw input columns, no intercept.
    Identity { n_inputs: usize },
}

impl BasisSpec {
    pub fn gaussian_rbf(centers: DMatrix<f64>, shapes: Vec<f64>) -> Result<Self> {
        check_dim("rbf shapes (one per center)", centers.nrows(), shapes.len())?;
        if shapes.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::param("rbf shape factors must be positive and finite"));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("rbf centers must be finite"));
        }
        Ok(BasisSpec::GaussianRbf { centers, shapes })
    }

    /// Equispaced 1-D centers on `[lo, hi]` (endpoints included) sharing one shape.
    pub fn rbf_1d_equispaced(lo: f64, hi: f64, n: usize, shape: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("need at least one rbf center"));
        }
        let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
        let centers = DMatrix::from_fn(n, 1, |i, _| lo + step * i as f64);
        Self::gaussian_rbf(centers, vec![shape; n])
    }

    pub fn n_basis(&self) -> usize {
        match self {
            BasisSpec::Polynomial { degree } => degree + 1,
            BasisSpec::GaussianRbf { centers, .. } => centers.nrows(),
            BasisSpec::Identity { n_inputs } => *n_inputs,
        }
    }

    /// Input width the basis accepts.
    pub fn n_inputs(&self) -> usize {
        match self {
            BasisSpec::Polynomial { .. } => 1,
            BasisSpec::GaussianRbf { centers, .. } => centers.ncols(),
            BasisSpec::Identity { n_inputs } => *n_inputs,
        }
    }

    /// Value, first and second derivative matrices at scalar points.
    pub fn derivative_matrices(&self, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        if self.n_inputs() != 1 {
            return Err(Error::param("derivative matrices need a 1-D basis"));
        }
        let n = x.len();
        let nb = self.n_basis();
        let mut f = DMatrix::zeros(n, nb);
        let mut d1 = DMatrix::zeros(n, nb);
        let mut d2 = DMatrix::zeros(n, nb);
        match self {
            BasisSpec::Polynomial { degree } => {
                for (i, &xi) in x.iter().enumerate() {
                    for k in 0..nb {
                        let p = (degree - k) as i32;
                        let pf = p as f64;
                        f[(i, k)] = xi.powi(p);
                        if p >= 1 {
                            d1[(i, k)] = pf * xi.powi(p - 1);
                        }
                        if p >= 2 {
                            d2[(i, k)] = pf * (pf - 1.0) * xi.powi(p - 2);
                        }
                    }
                }
            }
            BasisSpec::GaussianRbf { centers, shapes } => {
                for (i, &xi) in x.iter().enumerate() {
                    for k in 0..nb {
                        let c2 = shapes[k] * shapes[k];
                        let r = xi - centers[(k, 0)];
                        let phi = (-c2 * r * r).exp();
                        f[(i, k)] = phi;
                        d1[(i, k)] = -2.0 * c2 * r * phi;
                        d2[(i, k)] = (4.0 * c2 * c2 * r * r - 2.0 * c2) * phi;
                    }
                }
            }
            BasisSpec::Identity { .. } => {
                for (i, &xi) in x.iter().enumerate() {
                    f[(i, 0)] = xi;
                    d1[(i, 0)] = 1.0;
                }
            }
        }
        Ok((f, d1, d2))
    }
}

/// Evaluates every basis function at every input row (`n × n_b`).
pub fn feature_matrix(basis: &BasisSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("inputs must be finite".into()));
    }
    match basis {
        BasisSpec::Polynomial { degree } => {
            if x.ncols() != 1 {
                return Err(Error::param(format!("polynomial basis needs scalar inputs, got {} columns", x.ncols())));
            }
            let d = *degree;
            Ok(DMatrix::from_fn(x.nrows(), d + 1, |i, k| x[(i, 0)].powi((d - k) as i32)))
        }
        BasisSpec::GaussianRbf { centers, shapes } => {
            check_dim("rbf inputs (columns)", centers.ncols(), x.ncols())?;
            Ok(DMatrix::from_fn(x.nrows(), centers.nrows(), |i, k| {
                let r2: f64 = (0..x.ncols()).map(|j| (x[(i, j)] - centers[(k, j)]).powi(2)).sum();
                (-shapes[k] * shapes[k] * r2).exp()
            }))
        }
        BasisSpec::Identity { n_inputs } => {
            check_dim("identity basis (columns)", *n_inputs, x.ncols())?;
            Ok(x.clone())
        }
    }
}

/// Shape factor `1 / (2 · median nearest-center distance)`.
pub fn default_rbf_shape(centers: &DMatrix<f64>) -> Result<f64> {
    let n = centers.nrows();
    if n < 2 {
        return Err(Error::param("default shape needs at least two centers"));
    }
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| {
            (0..n).filter(|&j| j != i).map(|j| (centers.row(i) - centers.row(j)).norm()).fold(f64::INFINITY, f64::min)
        })
        .collect();
    nearest.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { nearest[n / 2] } else { 0.5 * (nearest[n / 2 - 1] + nearest[n / 2]) };
    if !(median > 0.0) {
        return Err(Error::param("centers must be distinct"));
    }
    Ok(1.0 / (2.0 * median))
}

/// A basis and an `n_b × n_y` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    basis: BasisSpec,
    weights: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct LinearModelFile {
    schema_version: u32,
    basis: BasisSpec,
    #[serde(with = "linalg::rows_serde")]
    weights: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(basis: BasisSpec, weights: DMatrix<f64>) -> Result<Self> {
        check_dim("weight rows (basis size)", basis.n_basis(), weights.nrows())?;
        Ok(Self { basis, weights })
    }

    /// Rebuilds a model from the flat (column-major) weight vector.
    pub fn from_flat(basis: BasisSpec, n_outputs: usize, flat: &[f64]) -> Result<Self> {
        check_dim("flat weights", basis.n_basis() * n_outputs, flat.len())?;
        let nb = basis.n_basis();
        Self::new(basis, DMatrix::from_column_slice(nb, n_outputs, flat))
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn n_outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LinearModelFile {
            schema_version: SCHEMA_VERSION,
            basis: self.basis.clone(),
            weights: self.weights.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: LinearModelFile = serde_json::from_str(s)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidData(format!("unsupported schema_version {}", file.schema_version)));
        }
        Self::new(file.basis, file.weights)
    }
}

impl Predictor for LinearModel {
    fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(feature_matrix(&self.basis, inputs)? * &self.weights)
    }
}

impl FlatParams for LinearModel {
    fn params(&self) -> Vec<f64> {
        self.weights.as_slice().to_vec()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("flat weights", self.weights.len(), params.len())?;
        self.weights.as_mut_slice().copy_from_slice(params);
        Ok(())
    }

    fn n_params(&self) -> usize {
        self.weights.len()
    }
}

impl Trainable for LinearModel {
    fn gradient(&self, batch: &Dataset, loss: &LossSpec) -> Result<Vec<f64>> {
        let phi = feature_matrix(&self.basis, batch.inputs())?;
        let pred = &phi * &self.weights;
        let g = loss.prediction_gradient(batch.targets(), &pred)?;
        let mut grad = (phi.transpose() * g).as_slice().to_vec();
        for (gi, pi) in grad.iter_mut().zip(loss.penalty_gradient(self.weights.as_slice())) {
            *gi += pi;
        }
        Ok(grad)
    }
}

/// `dŷ/dw`, which for a linear model is the feature matrix itself.
pub fn model_param_jacobian(model: &LinearModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    feature_matrix(&model.basis, x)
}

/// Solves `(ΦᵀΦ + αI) W = ΦᵀY` by Cholesky; all output columns share one
/// factorization.
pub fn ridge_fit(d: &Dataset, basis: &BasisSpec, alpha: f64) -> Result<LinearModel> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    if d.is_empty() {
        return Err(Error::InvalidData("ridge fit needs at least one sample".into()));
    }
    let phi = feature_matrix(basis, d.inputs())?;
    let weights = solve_normal_equations(&phi, d.targets(), alpha)?;
    LinearModel::new(basis.clone(), weights)
}

pub(crate) fn solve_normal_equations(phi: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let mut a = phi.transpose() * phi;
    for i in 0..a.nrows() {
        a[(i, i)] += alpha;
    }
    let rhs = phi.transpose() * y;
    // Pivots at round-off level mean the factorization of a singular matrix
    // only succeeded by accident.
    let floor = a.diagonal().max() * a.nrows() as f64 * f64::EPSILON;
    let chol = match Cholesky::new(&a) {
        Ok(c) if c.min_pivot().powi(2) > floor => c,
        _ => return Err(Error::Singular { condition: linalg::symmetric_condition(&a) }),
    };
    let cond = linalg::symmetric_condition(&a);
    if cond > CONDITION_WARNING {
        log::warn!("normal matrix is ill-conditioned (condition estimate {cond:e})");
    }
    chol.solve(&rhs)
}

/// `sign(z) · max(|z| − t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    let a = z.abs() - t;
    if a > 0.0 {
        a.copysign(z)
    } else {
        0.0
    }
}

/// Outcome of [`lasso_fit`].
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub model: LinearModel,
    pub converged: bool,
    pub iterations: usize,
    /// Objective `MSE + α‖W‖₁` at the start and after every iteration.
    pub objective: Vec<f64>,
}

/// Smallest α for which the all-zero solution is optimal:
/// `max |2 Φᵀ y / n_p|`.
pub fn lasso_zero_threshold(d: &Dataset, basis: &BasisSpec) -> Result<f64> {
    let phi = feature_matrix(basis, d.inputs())?;
    let g = phi.transpose() * d.targets() * (2.0 / d.n_samples() as f64);
    Ok(g.amax())
}

/// Proximal-gradient (ISTA) minimization of `MSE + α‖W‖₁` starting from zero,
/// with step `1/L`, `L = λ_max((2/n_p) ΦᵀΦ)`.
///
/// Stops when the largest parameter change drops below `tol`. If
/// `max_iters` is reached first the best iterate is returned with
/// `converged == false`.
pub fn lasso_fit(d: &Dataset, basis: &BasisSpec, alpha: f64, max_iters: usize, tol: f64) -> Result<LassoFit> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("lasso alpha must be >= 0, got {alpha}")));
    }
    if d.is_empty() {
        return Err(Error::InvalidData("lasso fit needs at least one sample".into()));
    }
    let n = d.n_samples() as f64;
    let phi = feature_matrix(basis, d.inputs())?;
    let y = d.targets();
    let gram = phi.transpose() * &phi * (2.0 / n);
    let phi_t_y = phi.transpose() * y * (2.0 / n);
    let lipschitz = linalg::power_iteration(&gram, 10_000, 1e-13);
    let mut w = DMatrix::zeros(basis.n_basis(), y.ncols());
    if lipschitz == 0.0 {
        let model = LinearModel::new(basis.clone(), w)?;
        return Ok(LassoFit { model, converged: true, iterations: 0, objective: vec![] });
    }
    let step = 1.0 / lipschitz;

    let objective = |w: &DMatrix<f64>| -> f64 {
        let r = &phi * w - y;
        r.norm_squared() / n + alpha * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut history = vec![objective(&w)];
    let mut best = (history[0], w.clone());
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iters {
        iterations = it;
        let grad = &gram * &w - &phi_t_y;
        let next = (&w - grad * step).map(|z| soft_threshold(z, step * alpha));
        let change = linalg::max_abs_diff(&next, &w);
        w = next;
        let obj = objective(&w);
        history.push(obj);
        if obj <= best.0 {
            best = (obj, w.clone());
        }
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("lasso did not converge in {max_iters} iterations");
    }
    let model = LinearModel::new(basis.clone(), best.1)?;
    Ok(LassoFit { model, converged, iterations, objective: history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn polynomial_rows_are_highest_power_first() {
        let phi = feature_matrix(&BasisSpec::Polynomial { degree: 3 }, &col(&[2.0])).unwrap();
        assert_eq!(phi.as_slice(), &[8.0, 4.0, 2.0, 1.0]);
        let phi = feature_matrix(&BasisSpec::Polynomial { degree: 0 }, &col(&[2.0, -3.0])).unwrap();
        assert_eq!(phi.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn polynomial_rejects_vector_inputs() {
        let x = DMatrix::zeros(2, 2);
        assert!(feature_matrix(&BasisSpec::Polynomial { degree: 1 }, &x).is_err());
    }

    #[test]
    fn rbf_is_one_at_center() {
        let basis =
            BasisSpec::gaussian_rbf(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]), vec![0.7, 1.3]).unwrap();
        let phi = feature_matrix(&basis, &DMatrix::from_row_slice(1, 2, &[2.0, 3.0])).unwrap();
        assert_eq!(phi[(0, 1)], 1.0);
        assert!((phi[(0, 0)] - (-0.49f64 * 8.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn rbf_rejects_bad_shapes() {
        assert!(BasisSpec::gaussian_rbf(DMatrix::zeros(2, 1), vec![1.0, 0.0]).is_err());
        assert!(BasisSpec::gaussian_rbf(DMatrix::zeros(2, 1), vec![1.0]).is_err());
    }

    #[test]
    fn ridge_recovers_exact_line() {
        let d = Dataset::from_xy(&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).unwrap();
        let m = ridge_fit(&d, &BasisSpec::Polynomial { degree: 1 }, 0.0).unwrap();
        assert!((m.weights()[0] - 2.0).abs() < 1e-12);
        assert!(m.weights()[1].abs() < 1e-12);
    }

    #[test]
    fn ridge_handles_multiple_outputs() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 3.0, -1.0, 5.0, -2.0, 7.0, -3.0]);
        let d = Dataset::new(x, y).unwrap();
        let m = ridge_fit(&d, &BasisSpec::Polynomial { degree: 1 }, 0.0).unwrap();
        assert_eq!(m.weights().shape(), (2, 2));
        assert!((m.weights()[(0, 1)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_singular_reports_condition() {
        let d = Dataset::from_xy(&[1.0, 1.0], &[0.0, 1.0]).unwrap();
        match ridge_fit(&d, &BasisSpec::Polynomial { degree: 2 }, 0.0) {
            Err(Error::Singular { condition }) => assert!(condition > 1e12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn huge_alpha_shrinks_weights() {
        let d = Dataset::from_xy(&[0.0, 0.5, 1.0, 1.5], &[1.0, -1.0, 2.0, 0.5]).unwrap();
        let basis = BasisSpec::Polynomial { degree: 2 };
        let w0 = ridge_fit(&d, &basis, 0.0).unwrap().weights().norm();
        let w_big = ridge_fit(&d, &basis, 1e12).unwrap().weights().norm();
        assert!(w_big < 1e-6 * w0);
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(1.5, 1.0), 0.5);
        assert_eq!(soft_threshold(-1.5, 1.0), -0.5);
        assert_eq!(soft_threshold(0.3, 1.0), 0.0);
    }

    #[test]
    fn jacobian_is_feature_matrix() {
        let m = LinearModel::new(BasisSpec::Polynomial { degree: 2 }, col(&[1.0, 2.0, 3.0])).unwrap();
        let j = model_param_jacobian(&m, &col(&[0.0])).unwrap();
        assert_eq!(j.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn json_round_trip_predicts_identically() {
        let basis = BasisSpec::rbf_1d_equispaced(0.0, 1.0, 5, 3.0).unwrap();
        let m = LinearModel::new(basis, col(&[0.1, -0.2, 1.0 / 3.0, 4.5e-7, 2.0])).unwrap();
        let back = LinearModel::from_json(&m.to_json().unwrap()).unwrap();
        let x = col(&[0.13, 0.77, 0.5]);
        assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
    }

    #[test]
    fn rbf_derivatives_at_center() {
        let basis = BasisSpec::rbf_1d_equispaced(0.5, 0.5, 1, 3.0).unwrap();
        let (_, d1, d2) = basis.derivative_matrices(&[0.5]).unwrap();
        assert_eq!(d1[(0, 0)], 0.0);
        assert_eq!(d2[(0, 0)], -18.0);
    }

    #[test]
    fn default_shape_uses_median_spacing() {
        let c = col(&[0.0, 1.0, 2.0, 4.0]);
        // nearest distances: 1, 1, 1, 2 → median 1.
        assert_eq!(default_rbf_shape(&c).unwrap(), 0.5);
    }
}
