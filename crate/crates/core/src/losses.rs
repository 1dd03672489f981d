//! Data-driven cost functions and their (sub)gradients.
//!
//! Every loss is reduced as a mean over samples (rows). For multi-output
//! targets the per-row contributions of the output columns are summed, so
//! `mse` is `(1/n_p) Σ_i ‖y_i − ŷ_i‖²`.
//!
//! Residuals are `e = y_true − y_pred`. Subgradients at kinks are fixed to 0.

use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Cholesky;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

#[derive(Debug, Clone)]
pub enum LossSpec {
    Mse,
    /// Quadratic form with the inverse of a per-sample noise covariance.
    WeightedMse(WeightMatrix),
    Huber {
        delta: f64,
    },
    EpsilonInsensitive {
        epsilon: f64,
    },
    Penalized {
        base: Box<LossSpec>,
        alpha: f64,
        norm: Norm,
    },
}

/// Symmetric positive-definite `n_p × n_p` covariance, factorized once.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    sigma: DMatrix<f64>,
    factor: Cholesky,
}

impl WeightMatrix {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        check_dim("weight matrix (square)", sigma.nrows(), sigma.ncols())?;
        let n = sigma.nrows();
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (sigma[(i, j)], sigma[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::param("weight matrix must be symmetric"));
                }
            }
        }
        let factor = Cholesky::new(&sigma)?;
        Ok(Self { sigma, factor })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// `Σ⁻¹ E` for a residual matrix `E` with `n_p` rows.
    fn solve(&self, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.factor.solve(e)
    }
}

impl LossSpec {
    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::param(format!("huber delta must be > 0, got {delta}")));
        }
        Ok(LossSpec::Huber { delta })
    }

    pub fn epsilon_insensitive(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::param(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(LossSpec::EpsilonInsensitive { epsilon })
    }

    pub fn weighted(sigma: DMatrix<f64>) -> Result<Self> {
        Ok(LossSpec::WeightedMse(WeightMatrix::new(sigma)?))
    }

    pub fn penalized(base: LossSpec, alpha: f64, norm: Norm) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::param(format!("penalty alpha must be >= 0, got {alpha}")));
        }
        Ok(LossSpec::Penalized { base: Box::new(base), alpha, norm })
    }

    pub fn ridge(alpha: f64) -> Result<Self> {
        Self::penalized(LossSpec::Mse, alpha, Norm::L2)
    }

    pub fn lasso(alpha: f64) -> Result<Self> {
        Self::penalized(LossSpec::Mse, alpha, Norm::L1)
    }

    /// Smooth everywhere (gradient-based training is exact).
    pub fn is_differentiable(&self) -> bool {
        match self {
            LossSpec::Mse | LossSpec::WeightedMse(_) | LossSpec::Huber { .. } => true,
            LossSpec::EpsilonInsensitive { .. } => false,
            LossSpec::Penalized { base, norm, .. } => *norm == Norm::L2 && base.is_differentiable(),
        }
    }

    /// Loss value; `params` only matters for penalized variants.
    pub fn value(&self, y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>, params: &[f64]) -> Result<f64> {
        match self {
            LossSpec::Mse => mse(y_true, y_pred),
            LossSpec::WeightedMse(w) => {
                let e = residuals(y_true, y_pred)?;
                weighted_quadratic(&e, w)
            }
            LossSpec::Huber { delta } => {
                let e = residuals(y_true, y_pred)?;
                Ok(row_mean(&e, |v| huber_sample(v, *delta)))
            }
            LossSpec::EpsilonInsensitive { epsilon } => {
                let e = residuals(y_true, y_pred)?;
                Ok(row_mean(&e, |v| eps_sample(v, *epsilon)))
            }
            LossSpec::Penalized { base, alpha, norm } => {
                let b = base.value(y_true, y_pred, params)?;
                Ok(penalized(b, params, *alpha, *norm))
            }
        }
    }

    /// Gradient with respect to the predictions (same shape as `y_pred`).
    pub fn prediction_gradient(&self, y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let e = residuals(y_true, y_pred)?;
        let n = e.nrows().max(1) as f64;
        Ok(match self {
            LossSpec::Mse => e.map(|v| -2.0 * v / n),
            LossSpec::WeightedMse(w) => w.solve(&e)?.map(|v| -2.0 * v / n),
            LossSpec::Huber { delta } => e.map(|v| -huber_derivative(v, *delta) / n),
            LossSpec::EpsilonInsensitive { epsilon } => e.map(|v| -eps_subgradient(v, *epsilon) / n),
            LossSpec::Penalized { base, .. } => base.prediction_gradient(y_true, y_pred)?,
        })
    }

    /// Gradient of the penalty term with respect to the parameters (zero for
    /// unpenalized variants).
    pub fn penalty_gradient(&self, params: &[f64]) -> Vec<f64> {
        match self {
            LossSpec::Penalized { base, alpha, norm } => {
                let mut g = base.penalty_gradient(params);
                for (gi, &w) in g.iter_mut().zip(params) {
                    *gi += match norm {
                        Norm::L2 => 2.0 * alpha * w,
                        Norm::L1 => alpha * sign0(w),
                    };
                }
                g
            }
            _ => vec![0.0; params.len()],
        }
    }
}

/// Both gradients returned by [`loss_gradient`].
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub predictions: DMatrix<f64>,
    pub params: Vec<f64>,
}

pub fn loss_gradient(
    spec: &LossSpec,
    y_true: &DMatrix<f64>,
    y_pred: &DMatrix<f64>,
    params: &[f64],
) -> Result<LossGradient> {
    Ok(LossGradient { predictions: spec.prediction_gradient(y_true, y_pred)?, params: spec.penalty_gradient(params) })
}

impl FromStr for LossSpec {
    type Err = Error;

    /// `mse | huber:δ | eps:ε | ridge:α | lasso:α`. The weighted variant needs
    /// a covariance matrix and is built with [`LossSpec::weighted`].
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| Error::param(format!("loss '{name}' needs a parameter")))?;
            a.parse::<f64>().map_err(|_| Error::param(format!("bad loss parameter '{a}'")))
        };
        match name {
            "mse" => Ok(LossSpec::Mse),
            "huber" => LossSpec::huber(num(arg)?),
            "eps" => LossSpec::epsilon_insensitive(num(arg)?),
            "ridge" => LossSpec::ridge(num(arg)?),
            "lasso" => LossSpec::lasso(num(arg)?),
            "wmse" => Err(Error::param("wmse needs a covariance matrix (--sigma)")),
            other => Err(Error::param(format!("unknown loss '{other}'"))),
        }
    }
}

fn residuals(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("loss (rows)", y_true.nrows(), y_pred.nrows())?;
    check_dim("loss (columns)", y_true.ncols(), y_pred.ncols())?;
    Ok(y_true - y_pred)
}

fn row_mean(e: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> f64 {
    if e.nrows() == 0 {
        return 0.0;
    }
    e.iter().map(|&v| f(v)).sum::<f64>() / e.nrows() as f64
}

fn weighted_quadratic(e: &DMatrix<f64>, w: &WeightMatrix) -> Result<f64> {
    let solved = w.solve(e)?;
    let q: f64 = e.iter().zip(solved.iter()).map(|(a, b)| a * b).sum();
    Ok(q / e.nrows().max(1) as f64)
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean squared error `(1/n_p) Σ ‖y_i − ŷ_i‖²`.
pub fn mse(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<f64> {
    let e = residuals(y_true, y_pred)?;
    Ok(row_mean(&e, |v| v * v))
}

/// `(1/n_p) eᵀ Σ⁻¹ e`, summed over output columns, via a Cholesky solve.
pub fn weighted_mse(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let e = residuals(y_true, y_pred)?;
    check_dim("weighted mse (covariance size)", e.nrows(), sigma.nrows())?;
    let w = WeightMatrix::new(sigma.clone())?;
    weighted_quadratic(&e, &w)
}

/// Per-sample Huber value.
pub fn huber_sample(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// d/de of the per-sample Huber value: `e` inside, `±δ` outside.
pub fn huber_derivative(e: f64, delta: f64) -> f64 {
    e.clamp(-delta, delta)
}

/// Mean Huber loss over the residual vector.
pub fn huber(e: &[f64], delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::param(format!("huber delta must be > 0, got {delta}")));
    }
    Ok(slice_mean(e, |v| huber_sample(v, delta)))
}

pub fn eps_sample(e: f64, epsilon: f64) -> f64 {
    let a = e.abs();
    if a <= epsilon {
        0.0
    } else {
        a - epsilon
    }
}

/// Subgradient of the ε-tube loss: 0 inside (and on the tube boundary), ±1 outside.
pub fn eps_subgradient(e: f64, epsilon: f64) -> f64 {
    if e.abs() <= epsilon {
        0.0
    } else {
        sign0(e)
    }
}

/// Mean ε-insensitive loss over the residual vector.
pub fn eps_insensitive(e: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::param(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("residual".into()));
    }
    Ok(slice_mean(e, |v| eps_sample(v, epsilon)))
}

/// `base + α‖w‖₂²` or `base + α‖w‖₁`.
pub fn penalized(base: f64, w: &[f64], alpha: f64, norm: Norm) -> f64 {
    let p: f64 = match norm {
        Norm::L2 => w.iter().map(|v| v * v).sum(),
        Norm::L1 => w.iter().map(|v| v.abs()).sum(),
    };
    base + alpha * p
}

fn slice_mean(e: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    if e.is_empty() {
        return 0.0;
    }
    e.iter().map(|&v| f(v)).sum::<f64>() / e.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn mse_hand_values() {
        assert_eq!(mse(&col(&[0.0, 0.0]), &col(&[1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(mse(&col(&[3.0, -1.0]), &col(&[3.0, -1.0])).unwrap(), 0.0);
        assert!(mse(&col(&[1.0]), &col(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn weighted_mse_hand_values() {
        // e = (2, 2): ‖e‖² = 8, Σ = 4I, n_p = 2 → 8/4/2 = 1.
        let sigma = DMatrix::identity(2, 2) * 4.0;
        let v = weighted_mse(&col(&[2.0, -2.0]), &col(&[0.0, 0.0]), &sigma).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let zero = weighted_mse(&col(&[1.0, 1.0]), &col(&[1.0, 1.0]), &sigma).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn weighted_mse_rejects_indefinite_sigma() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            weighted_mse(&col(&[1.0, 0.0]), &col(&[0.0, 0.0]), &sigma),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(&[0.0], 1.0).unwrap(), 0.0);
        assert_eq!(huber(&[2.0], 1.0).unwrap(), 1.5);
        let d = 0.7;
        assert_eq!(huber_sample(d, d), d * (d - 0.5 * d));
        assert_eq!(huber_sample(d, d), 0.5 * d * d);
        assert!(huber(&[1.0], 0.0).is_err());
        assert_eq!(huber_derivative(2.0 * d, d), d);
    }

    #[test]
    fn eps_tube() {
        assert_eq!(eps_insensitive(&[0.5], 1.0).unwrap(), 0.0);
        assert_eq!(eps_insensitive(&[2.0], 1.0).unwrap(), 1.0);
        let e = [1.0, -3.0, 0.5];
        assert_eq!(eps_insensitive(&e, 0.0).unwrap(), 1.5);
        assert_eq!(eps_subgradient(1.0, 1.0), 0.0);
        assert_eq!(eps_subgradient(-1.5, 1.0), -1.0);
    }

    #[test]
    fn penalty_values() {
        assert_eq!(penalized(1.0, &[1.0, -2.0], 0.5, Norm::L1), 2.5);
        assert_eq!(penalized(1.0, &[0.0, 0.0], 3.0, Norm::L2), 1.0);
        assert_eq!(penalized(1.0, &[4.0], 0.0, Norm::L2), 1.0);
    }

    #[test]
    fn l1_subgradient_is_zero_at_zero() {
        let spec = LossSpec::lasso(2.0).unwrap();
        assert_eq!(spec.penalty_gradient(&[0.0, 1.0, -3.0]), vec![0.0, 2.0, -2.0]);
    }

    #[test]
    fn mse_gradient_vanishes_at_minimum() {
        let y = col(&[1.0, 2.0, 3.0]);
        let g = LossSpec::Mse.prediction_gradient(&y, &y).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parses_cli_names() {
        assert!(matches!("mse".parse::<LossSpec>(), Ok(LossSpec::Mse)));
        assert!(matches!("huber:0.5".parse::<LossSpec>(), Ok(LossSpec::Huber { delta }) if delta == 0.5));
        assert!(matches!("lasso:0.1".parse::<LossSpec>(), Ok(LossSpec::Penalized { norm: Norm::L1, .. })));
        assert!("huber:-1".parse::<LossSpec>().is_err());
        assert!("wmse".parse::<LossSpec>().is_err());
        assert!("nope".parse::<LossSpec>().is_err());
    }

    fn central_diff(spec: &LossSpec, y: &DMatrix<f64>, p: &DMatrix<f64>, i: usize) -> f64 {
        let h = 1e-6;
        let (mut up, mut dn) = (p.clone(), p.clone());
        up[i] += h;
        dn[i] -= h;
        (spec.value(y, &up, &[]).unwrap() - spec.value(y, &dn, &[]).unwrap()) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn huber_bounded_by_both_branches(e in -50.0f64..50.0, delta in 0.01f64..10.0) {
            let h = huber_sample(e, delta);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= 0.5 * e * e + 1e-12);
            prop_assert!(h <= delta * e.abs() + 1e-12);
        }

        #[test]
        fn eps_zero_iff_inside_tube(e in proptest::collection::vec(-3.0f64..3.0, 1..8), eps in 0.0f64..2.0) {
            let v = eps_insensitive(&e, eps).unwrap();
            prop_assert_eq!(v == 0.0, e.iter().all(|x| x.abs() <= eps));
        }

        #[test]
        fn identity_weights_match_mse(v in proptest::collection::vec(-5.0f64..5.0, 2..10)) {
            let n = v.len() / 2;
            let y = col(&v[..n]);
            let p = col(&v[n..2 * n]);
            let a = mse(&y, &p).unwrap();
            let b = weighted_mse(&y, &p, &DMatrix::identity(n, n)).unwrap();
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.max(1.0));
        }

        #[test]
        fn gradients_match_finite_differences(
            raw in proptest::collection::vec(-3.0f64..3.0, 8),
            kind in 0usize..3,
        ) {
            let y = col(&raw[..4]);
            let p = col(&raw[4..]);
            let delta = 0.8;
            let spec = match kind {
                0 => LossSpec::Mse,
                1 => LossSpec::huber(delta).unwrap(),
                _ => LossSpec::weighted(DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.3 })).unwrap(),
            };
            // Stay away from the Huber kink.
            let e = &y - &p;
            prop_assume!(e.iter().all(|v| (v.abs() - delta).abs() > 1e-3));
            let g = spec.prediction_gradient(&y, &p).unwrap();
            for i in 0..4 {
                let fd = central_diff(&spec, &y, &p, i);
                let scale = fd.abs().max(g[i].abs()).max(1e-3);
                prop_assert!((fd - g[i]).abs() / scale < 1e-6, "i={} fd={} g={}", i, fd, g[i]);
            }
        }
    }
}
