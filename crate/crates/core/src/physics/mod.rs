//! Physics-constrained fitting for 1-D linear second-order boundary-value
//! problems `a(x) u'' + b(x) u' + c(x) u = g(x)` on `[x_lo, x_hi]`.
//!
//! Three ways of bringing the differential equation into a fit:
//!
//! * [`penalized_fit`]: data misfit plus `α_phys` times the mean squared
//!   residual, solved as one linear least-squares problem;
//! * [`constrained_solve`]: boundary conditions enforced exactly through
//!   Lagrange multipliers (a KKT system), interior residuals in the objective;
//! * [`pinn_train`]: the penalty formulation with an MLP as the trial
//!   function, trained by a first-order optimizer.

mod collocation;
mod pinn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use collocation::{
    boundary_rows, constrained_solve, operator_rows, pde_residual, penalized_fit, rbf_derivative_matrices,
    ConstrainedSolution, KKT_JITTER,
};
pub use pinn::{fd_derivatives, pinn_cost_and_gradient, pinn_train, PinnReport, DEFAULT_FD_STEP};

/// A scalar coefficient or source function built from named primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Const {
        value: f64,
    },
    /// Polynomial with coefficients ordered highest power first.
    Poly {
        coefficients: Vec<f64>,
    },
    /// `amplitude · sin(frequency · x + phase)`
    Sin {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Const { value }
    }

    pub fn zero() -> Self {
        Coefficient::constant(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Const { value } => *value,
            Coefficient::Poly { coefficients } => coefficients.iter().fold(0.0, |acc, c| acc * x + c),
            Coefficient::Sin { amplitude, frequency, phase } => amplitude * (frequency * x + phase).sin(),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Coefficient::Const { value } => value.is_finite(),
            Coefficient::Poly { coefficients } => coefficients.iter().all(|c| c.is_finite()),
            Coefficient::Sin { amplitude, frequency, phase } => {
                amplitude.is_finite() && frequency.is_finite() && phase.is_finite()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Prescribes `u(x_b)`.
    Dirichlet,
    /// Prescribes `u'(x_b)` (derivative along +x, not the outward normal).
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub location: f64,
    pub kind: BoundaryKind,
    pub value: f64,
}

impl BoundaryCondition {
    pub fn dirichlet(location: f64, value: f64) -> Self {
        Self { location, kind: BoundaryKind::Dirichlet, value }
    }

    pub fn neumann(location: f64, value: f64) -> Self {
        Self { location, kind: BoundaryKind::Neumann, value }
    }
}

/// `a u'' + b u' + c u = g` with boundary conditions and interior
/// collocation points.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationProblem {
    pub a: Coefficient,
    pub b: Coefficient,
    pub c: Coefficient,
    pub source: Coefficient,
    pub domain: (f64, f64),
    pub boundary: Vec<BoundaryCondition>,
    pub collocation: Vec<f64>,
}

impl CollocationProblem {
    pub fn new(
        a: Coefficient,
        b: Coefficient,
        c: Coefficient,
        source: Coefficient,
        domain: (f64, f64),
        boundary: Vec<BoundaryCondition>,
        collocation: Vec<f64>,
    ) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::param(format!("domain [{lo}, {hi}] must satisfy lo < hi")));
        }
        if boundary.is_empty() {
            return Err(Error::param("at least one boundary condition is required"));
        }
        if let Some(bc) = boundary.iter().find(|bc| !(bc.location >= lo && bc.location <= hi) || !bc.value.is_finite())
        {
            return Err(Error::param(format!("boundary condition at {} lies outside the domain", bc.location)));
        }
        if let Some(x) = collocation.iter().find(|&&x| !(x > lo && x < hi)) {
            return Err(Error::param(format!("collocation point {x} is not inside ({lo}, {hi})")));
        }
        if ![&a, &b, &c, &source].iter().all(|f| f.is_finite()) {
            return Err(Error::param("coefficient parameters must be finite"));
        }
        Ok(Self { a, b, c, source, domain, boundary, collocation })
    }

    /// `u'' = −π² sin(πx)` on `[0, 1]` with `u(0) = u(1) = 0`; the exact
    /// solution is `sin(πx)`.
    pub fn poisson_sine(n_collocation: usize) -> Self {
        let pi = std::f64::consts::PI;
        Self::new(
            Coefficient::constant(1.0),
            Coefficient::zero(),
            Coefficient::zero(),
            Coefficient::Sin { amplitude: -pi * pi, frequency: pi, phase: 0.0 },
            (0.0, 1.0),
            vec![BoundaryCondition::dirichlet(0.0, 0.0), BoundaryCondition::dirichlet(1.0, 0.0)],
            equispaced_interior(0.0, 1.0, n_collocation),
        )
        .expect("fixture is valid")
    }

    pub fn n_collocation(&self) -> usize {
        self.collocation.len()
    }

    pub fn source_values(&self) -> Vec<f64> {
        self.collocation.iter().map(|&x| self.source.eval(x)).collect()
    }
}

/// `n` equispaced points strictly inside `(lo, hi)`.
pub fn equispaced_interior(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n + 1) as f64;
    (1..=n).map(|i| lo + h * i as f64).collect()
}

/// Physics-augmented cost `MSE_data + α_phys · R_D` used by the penalty
/// formulations. `R_D` is the mean squared interior residual, plus the mean
/// squared boundary residual when `include_boundary` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsCost {
    pub alpha_phys: f64,
    pub problem: CollocationProblem,
    pub include_boundary: bool,
}

impl PhysicsCost {
    pub fn new(problem: CollocationProblem, alpha_phys: f64, include_boundary: bool) -> Result<Self> {
        if !(alpha_phys >= 0.0) || !alpha_phys.is_finite() {
            return Err(Error::param(format!("alpha_phys must be >= 0, got {alpha_phys}")));
        }
        Ok(Self { alpha_phys, problem, include_boundary })
    }
}

/// On-disk problem description.
///
/// ```json
/// {
///   "a": {"kind": "const", "value": 1.0},
///   "b": {"kind": "const", "value": 0.0},
///   "c": {"kind": "const", "value": 0.0},
///   "source": {"kind": "sin", "amplitude": -9.8696044010893586, "frequency": 3.1415926535897931},
///   "domain": [0.0, 1.0],
///   "boundary": [
///     {"location": 0.0, "kind": "dirichlet", "value": 0.0},
///     {"location": 1.0, "kind": "dirichlet", "value": 0.0}
///   ],
///   "n_collocation": 80
/// }
/// ```
///
/// `collocation` (explicit points) takes precedence over `n_collocation`.
/// With neither, `2 · n_b` equispaced interior points are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub a: Coefficient,
    #[serde(default = "Coefficient::zero")]
    pub b: Coefficient,
    #[serde(default = "Coefficient::zero")]
    pub c: Coefficient,
    pub source: Coefficient,
    pub domain: (f64, f64),
    pub boundary: Vec<BoundaryCondition>,
    #[serde(default)]
    pub collocation: Option<Vec<f64>>,
    #[serde(default)]
    pub n_collocation: Option<usize>,
    /// Exact solution for error reporting, when known.
    #[serde(default)]
    pub exact: Option<Coefficient>,
}

impl ProblemFile {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds the problem for a basis with `n_basis` functions.
    pub fn build(&self, n_basis: usize) -> Result<CollocationProblem> {
        let points = match (&self.collocation, self.n_collocation) {
            (Some(p), _) => p.clone(),
            (None, Some(n)) => equispaced_interior(self.domain.0, self.domain.1, n),
            (None, None) => equispaced_interior(self.domain.0, self.domain.1, 2 * n_basis),
        };
        CollocationProblem::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.source.clone(),
            self.domain,
            self.boundary.clone(),
            points,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_eval() {
        assert_eq!(Coefficient::constant(2.5).eval(9.0), 2.5);
        // 2x² − 3x + 1 at x = 2 → 3
        assert_eq!(Coefficient::Poly { coefficients: vec![2.0, -3.0, 1.0] }.eval(2.0), 3.0);
        let s = Coefficient::Sin { amplitude: 2.0, frequency: 1.0, phase: std::f64::consts::FRAC_PI_2 };
        assert!((s.eval(0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn interior_points_exclude_ends() {
        let p = equispaced_interior(0.0, 1.0, 3);
        assert_eq!(p, vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn problem_validation() {
        let ok = CollocationProblem::poisson_sine(4);
        assert_eq!(ok.n_collocation(), 4);
        let bad_domain = CollocationProblem::new(
            Coefficient::constant(1.0),
            Coefficient::zero(),
            Coefficient::zero(),
            Coefficient::zero(),
            (1.0, 0.0),
            vec![BoundaryCondition::dirichlet(0.0, 0.0)],
            vec![],
        );
        assert!(bad_domain.is_err());
        let no_bc = CollocationProblem::new(
            Coefficient::constant(1.0),
            Coefficient::zero(),
            Coefficient::zero(),
            Coefficient::zero(),
            (0.0, 1.0),
            vec![],
            vec![0.5],
        );
        assert!(no_bc.is_err());
        let outside = CollocationProblem::new(
            Coefficient::constant(1.0),
            Coefficient::zero(),
            Coefficient::zero(),
            Coefficient::zero(),
            (0.0, 1.0),
            vec![BoundaryCondition::dirichlet(0.0, 0.0)],
            vec![1.0],
        );
        assert!(outside.is_err());
    }

    #[test]
    fn problem_file_round_trip() {
        let f = ProblemFile {
            a: Coefficient::constant(1.0),
            b: Coefficient::zero(),
            c: Coefficient::zero(),
            source: Coefficient::Sin { amplitude: -1.0, frequency: 2.0, phase: 0.0 },
            domain: (0.0, 1.0),
            boundary: vec![BoundaryCondition::neumann(1.0, 0.5), BoundaryCondition::dirichlet(0.0, 0.0)],
            collocation: None,
            n_collocation: Some(7),
            exact: None,
        };
        let back = ProblemFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.build(10).unwrap().n_collocation(), 7);
    }
}
