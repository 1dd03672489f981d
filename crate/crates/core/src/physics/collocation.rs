use nalgebra::{DMatrix, DVector};

use super::{BoundaryKind, CollocationProblem, PhysicsCost};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::linear::{feature_matrix, solve_normal_equations, BasisSpec, LinearModel};

/// Diagonal shift added to the Hessian block when the first KKT
/// factorization fails.
pub const KKT_JITTER: f64 = 1e-12;

/// `(Φ, Φ', Φ'')` of a 1-D basis at the given points.
pub fn rbf_derivative_matrices(basis: &BasisSpec, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    basis.derivative_matrices(x)
}

/// `L[j, k] = a(x_j) φ_k''(x_j) + b(x_j) φ_k'(x_j) + c(x_j) φ_k(x_j)` over
/// the collocation points, so that the interior residual is `L w − g`.
pub fn operator_rows(problem: &CollocationProblem, basis: &BasisSpec) -> Result<DMatrix<f64>> {
    let (f, d1, d2) = basis.derivative_matrices(&problem.collocation)?;
    let mut l = DMatrix::zeros(f.nrows(), f.ncols());
    for (j, &x) in problem.collocation.iter().enumerate() {
        let (a, b, c) = (problem.a.eval(x), problem.b.eval(x), problem.c.eval(x));
        for k in 0..f.ncols() {
            l[(j, k)] = a * d2[(j, k)] + b * d1[(j, k)] + c * f[(j, k)];
        }
    }
    Ok(l)
}

/// Boundary rows `A` and prescribed values `b` so that the boundary
/// conditions read `A w = b`.
pub fn boundary_rows(problem: &CollocationProblem, basis: &BasisSpec) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let locations: Vec<f64> = problem.boundary.iter().map(|bc| bc.location).collect();
    let (f, d1, _) = basis.derivative_matrices(&locations)?;
    let mut a = DMatrix::zeros(locations.len(), basis.n_basis());
    for (i, bc) in problem.boundary.iter().enumerate() {
        let src = match bc.kind {
            BoundaryKind::Dirichlet => &f,
            BoundaryKind::Neumann => &d1,
        };
        a.row_mut(i).copy_from(&src.row(i));
    }
    let values = DVector::from_iterator(problem.boundary.len(), problem.boundary.iter().map(|bc| bc.value));
    Ok((a, values))
}

/// Interior residuals `a u'' + b u' + c u − g` of a single-output linear
/// model at the collocation points.
pub fn pde_residual(problem: &CollocationProblem, model: &LinearModel) -> Result<Vec<f64>> {
    check_dim("physics model outputs", 1, model.n_outputs())?;
    let l = operator_rows(problem, model.basis())?;
    let r = l * model.weights().column(0);
    Ok(r.iter().zip(problem.source_values()).map(|(lw, g)| lw - g).collect())
}

fn check_data(data: Option<&Dataset>) -> Result<Option<&Dataset>> {
    match data {
        Some(d) if d.is_empty() => Ok(None),
        Some(d) => {
            check_dim("physics data inputs", 1, d.n_inputs())?;
            check_dim("physics data outputs", 1, d.n_outputs())?;
            Ok(Some(d))
        }
        None => Ok(None),
    }
}

/// Minimizes
///
/// ```text
/// (1/n_p)‖Φw − y‖² + α_reg‖w‖² + α_phys [ (1/n_c)‖Lw − g‖² + (1/n_bc)‖Aw − b‖² ]
/// ```
///
/// where the boundary term is present only when `cost.include_boundary`.
/// The objective is multiplied through by `n_p` and solved as regularized
/// least squares on stacked rows, so with `α_phys = 0` the result is exactly
/// [`crate::linear::ridge_fit`] with `α = n_p · α_reg`.
pub fn penalized_fit(
    data: Option<&Dataset>,
    cost: &PhysicsCost,
    basis: &BasisSpec,
    alpha_reg: f64,
) -> Result<LinearModel> {
    if !(alpha_reg >= 0.0) || !alpha_reg.is_finite() {
        return Err(Error::param(format!("alpha_reg must be >= 0, got {alpha_reg}")));
    }
    let data = check_data(data)?;
    let problem = &cost.problem;
    let n_b = basis.n_basis();
    let scale = data.map_or(1.0, |d| d.n_samples() as f64);

    let mut blocks: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    if let Some(d) = data {
        blocks.push((feature_matrix(basis, d.inputs())?, d.targets().column(0).into_owned()));
    }
    if cost.alpha_phys > 0.0 {
        if problem.n_collocation() > 0 {
            let w = (scale * cost.alpha_phys / problem.n_collocation() as f64).sqrt();
            let l = operator_rows(problem, basis)? * w;
            let g = DVector::from_vec(problem.source_values()) * w;
            blocks.push((l, g));
        }
        if cost.include_boundary {
            let w = (scale * cost.alpha_phys / problem.boundary.len() as f64).sqrt();
            let (a, b) = boundary_rows(problem, basis)?;
            blocks.push((a * w, b * w));
        }
    }
    if blocks.is_empty() {
        return Err(Error::InvalidData(
            "penalized fit needs data or a positive physics weight with collocation points".into(),
        ));
    }
    let n_rows: usize = blocks.iter().map(|(m, _)| m.nrows()).sum();
    let mut phi = DMatrix::zeros(n_rows, n_b);
    let mut y = DMatrix::zeros(n_rows, 1);
    let mut at = 0;
    for (m, v) in &blocks {
        phi.rows_mut(at, m.nrows()).copy_from(m);
        y.view_mut((at, 0), (v.len(), 1)).copy_from(v);
        at += m.nrows();
    }
    let weights = solve_normal_equations(&phi, &y, scale * alpha_reg)?;
    LinearModel::new(basis.clone(), weights)
}

/// Solution of the equality-constrained quadratic program.
#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub weights: DVector<f64>,
    /// Lagrange multipliers, one per boundary condition.
    pub multipliers: DVector<f64>,
    /// `‖A w − b‖₂`
    pub constraint_residual_norm: f64,
    /// `‖H w + Aᵀλ − f‖₂`
    pub stationarity_residual_norm: f64,
}

impl ConstrainedSolution {
    pub fn model(&self, basis: &BasisSpec) -> Result<LinearModel> {
        LinearModel::new(basis.clone(), DMatrix::from_column_slice(self.weights.len(), 1, self.weights.as_slice()))
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * m.nrows().max(m.ncols()) as f64 * f64::EPSILON;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Minimizes `½ wᵀHw − fᵀw` subject to the boundary conditions `A w = b`,
/// with
///
/// ```text
/// H = 2 [ (1/n_p) ΦᵀΦ + α_reg I + (1/n_c) LᵀL ]
/// f = 2 [ (1/n_p) Φᵀy + (1/n_c) Lᵀg ]
/// ```
///
/// by solving the saddle-point system `[[H, Aᵀ], [A, 0]] [w; λ] = [f; b]`.
/// The data term is dropped when `data` is `None` or empty.
pub fn constrained_solve(
    problem: &CollocationProblem,
    basis: &BasisSpec,
    alpha_reg: f64,
    data: Option<&Dataset>,
) -> Result<ConstrainedSolution> {
    if !(alpha_reg >= 0.0) || !alpha_reg.is_finite() {
        return Err(Error::param(format!("alpha_reg must be >= 0, got {alpha_reg}")));
    }
    let data = check_data(data)?;
    let n_b = basis.n_basis();
    let (a, b) = boundary_rows(problem, basis)?;
    let n_bc = a.nrows();
    if n_bc > n_b {
        return Err(Error::InvalidData(format!("{n_bc} boundary conditions exceed the {n_b} basis functions")));
    }
    let rank_a = numerical_rank(&a);
    if rank_a < n_bc {
        return Err(Error::InvalidData(format!(
            "boundary conditions are linearly dependent (rank {rank_a} of {n_bc}); they are redundant or conflicting"
        )));
    }

    let mut m = DMatrix::<f64>::identity(n_b, n_b) * alpha_reg;
    let mut p = DVector::<f64>::zeros(n_b);
    if let Some(d) = data {
        let phi = feature_matrix(basis, d.inputs())?;
        let inv = 1.0 / d.n_samples() as f64;
        m += phi.transpose() * &phi * inv;
        p += phi.transpose() * d.targets().column(0) * inv;
    }
    if problem.n_collocation() > 0 {
        let l = operator_rows(problem, basis)?;
        let g = DVector::from_vec(problem.source_values());
        let inv = 1.0 / problem.n_collocation() as f64;
        m += l.transpose() * &l * inv;
        p += l.transpose() * g * inv;
    }
    let h = m * 2.0;
    let f = p * 2.0;

    let size = n_b + n_bc;
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(0, n_b).copy_from(&f);
    rhs.rows_mut(n_b, n_bc).copy_from(&b);

    let assemble = |shift: f64| {
        let mut k = DMatrix::zeros(size, size);
        k.view_mut((0, 0), (n_b, n_b)).copy_from(&h);
        for i in 0..n_b {
            k[(i, i)] += shift;
        }
        k.view_mut((0, n_b), (n_b, n_bc)).copy_from(&a.transpose());
        k.view_mut((n_b, 0), (n_bc, n_b)).copy_from(&a);
        k
    };
    let rhs_scale = rhs.amax().max(1.0);
    let solve = |k: &DMatrix<f64>| -> Option<DVector<f64>> {
        let lu = k.clone().lu();
        let mut sol = lu.solve(&rhs)?;
        let correction = lu.solve(&(&rhs - k * &sol))?;
        sol += correction;
        let resid = (&rhs - k * &sol).amax();
        (sol.iter().all(|v| v.is_finite()) && resid <= 1e-6 * rhs_scale).then_some(sol)
    };

    let kkt = assemble(0.0);
    let sol = match solve(&kkt) {
        Some(s) => s,
        None => {
            let shift = KKT_JITTER * h.amax().max(1.0);
            log::warn!("KKT system is singular; retrying with diagonal shift {shift:e}");
            solve(&assemble(shift)).ok_or_else(|| Error::SingularKkt { rank: numerical_rank(&kkt), size })?
        }
    };

    let weights = sol.rows(0, n_b).into_owned();
    let multipliers = sol.rows(n_b, n_bc).into_owned();
    let constraint_residual_norm = (&a * &weights - &b).norm();
    let stationarity_residual_norm = (&h * &weights + a.transpose() * &multipliers - &f).norm();
    Ok(ConstrainedSolution { weights, multipliers, constraint_residual_norm, stationarity_residual_norm })
}
