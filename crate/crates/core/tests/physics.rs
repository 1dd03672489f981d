use physfit::physics::{
    boundary_rows, constrained_solve, equispaced_interior, operator_rows, pde_residual, penalized_fit, pinn_train,
    rbf_derivative_matrices, DEFAULT_FD_STEP,
};
use physfit::{
    Activation, BasisSpec, BatchSchedule, BoundaryCondition, Coefficient, CollocationProblem, DMatrix, DVector,
    Dataset, Mlp, OptimizerState, PhysicsCost, Predictor,
};
use proptest::prelude::*;

fn basis(n: usize, shape: f64) -> BasisSpec {
    BasisSpec::rbf_1d_equispaced(0.0, 1.0, n, shape).unwrap()
}

fn feature_row(b: &BasisSpec, x: f64) -> DMatrix<f64> {
    physfit::linear::feature_matrix(b, &DMatrix::from_element(1, 1, x)).unwrap()
}

fn mixed_problem(a: f64, c: f64, amp: f64, left: f64, right: f64, neumann: bool) -> CollocationProblem {
    let right_bc =
        if neumann { BoundaryCondition::neumann(1.0, right) } else { BoundaryCondition::dirichlet(1.0, right) };
    CollocationProblem::new(
        Coefficient::constant(a),
        Coefficient::Poly { coefficients: vec![0.3, 0.0] },
        Coefficient::constant(c),
        Coefficient::Sin { amplitude: amp, frequency: 2.0, phase: 0.1 },
        (0.0, 1.0),
        vec![BoundaryCondition::dirichlet(0.0, left), right_bc],
        equispaced_interior(0.0, 1.0, 30),
    )
    .unwrap()
}

#[test]
fn poisson_constrained_solution_matches_sine() {
    let problem = CollocationProblem::poisson_sine(80);
    let b = basis(40, 8.0);
    let sol = constrained_solve(&problem, &b, 0.0, None).unwrap();
    let model = sol.model(&b).unwrap();
    let grid = DMatrix::from_fn(200, 1, |i, _| i as f64 / 199.0);
    let u = model.predict(&grid).unwrap();
    let err = (0..200).map(|i| (u[(i, 0)] - (std::f64::consts::PI * grid[(i, 0)]).sin()).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3, "L-inf error {err}");
    assert!(u[(0, 0)].abs() < 1e-8 && u[(199, 0)].abs() < 1e-8);
}

#[test]
fn trivial_problem_has_trivial_solution() {
    let problem = CollocationProblem::new(
        Coefficient::constant(1.0),
        Coefficient::zero(),
        Coefficient::zero(),
        Coefficient::zero(),
        (0.0, 1.0),
        vec![BoundaryCondition::dirichlet(0.0, 0.0), BoundaryCondition::dirichlet(1.0, 0.0)],
        equispaced_interior(0.0, 1.0, 10),
    )
    .unwrap();
    let sol = constrained_solve(&problem, &basis(8, 3.0), 0.1, None).unwrap();
    assert!(sol.weights.amax() < 1e-14);
    assert!(sol.multipliers.amax() < 1e-14);
}

#[test]
fn penalty_limit_reaches_the_constrained_fit() {
    let x: Vec<f64> = (0..25).map(|i| 0.02 + 0.04 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| v * v + 0.3 * (5.0 * v).cos()).collect();
    let d = Dataset::from_xy(&x, &y).unwrap();
    let problem = CollocationProblem::new(
        Coefficient::constant(1.0),
        Coefficient::zero(),
        Coefficient::zero(),
        Coefficient::zero(),
        (0.0, 1.0),
        vec![BoundaryCondition::dirichlet(0.0, 0.5), BoundaryCondition::neumann(1.0, -1.0)],
        Vec::new(),
    )
    .unwrap();
    let b = basis(6, 2.0);
    let alpha_reg = 1e-3;
    let exact = constrained_solve(&problem, &b, alpha_reg, Some(&d)).unwrap();
    let cost = PhysicsCost::new(problem, 1e8, true).unwrap();
    let pen = penalized_fit(Some(&d), &cost, &b, alpha_reg).unwrap();
    let diff = (pen.weights().column(0) - &exact.weights).amax();
    assert!(diff < 1e-3, "max weight difference {diff}");
}

#[test]
fn pinn_poisson_cost_drops_tenfold() {
    let problem = CollocationProblem::poisson_sine(32);
    let mut net = Mlp::with_hidden_activation(&[1, 16, 16, 1], Activation::Tanh, Activation::Identity, 0).unwrap();
    let mut opt = OptimizerState::adam_default(net.param_count());
    let sched = BatchSchedule::new(32, 5000, 0).unwrap();
    let report = pinn_train(&mut net, &problem, None, 1.0, &mut opt, &sched, DEFAULT_FD_STEP).unwrap();
    let last = *report.cost_history.last().unwrap();
    assert!(last <= report.initial_cost / 10.0, "{} -> {last}", report.initial_cost);
}

proptest! {
    #[test]
    fn rbf_derivatives_match_finite_differences(x in 0.05f64..0.95, shape in 0.5f64..6.0) {
        let b = basis(7, shape);
        let (phi, d1, d2) = rbf_derivative_matrices(&b, &[x]).unwrap();
        let h = 1e-5;
        let (up, dn) = (feature_row(&b, x + h), feature_row(&b, x - h));
        for k in 0..7 {
            let fd1 = (up[(0, k)] - dn[(0, k)]) / (2.0 * h);
            let fd2 = (up[(0, k)] - 2.0 * phi[(0, k)] + dn[(0, k)]) / (h * h);
            let s1 = d1[(0, k)].abs().max(1e-2 * shape);
            let s2 = d2[(0, k)].abs().max(shape * shape);
            prop_assert!((fd1 - d1[(0, k)]).abs() < 1e-6 * s1);
            prop_assert!((fd2 - d2[(0, k)]).abs() < 1e-4 * s2);
        }
    }

    #[test]
    fn constrained_solution_is_exact_on_boundary_and_stationary(
        a in 0.5f64..2.0,
        c in -1.0f64..1.0,
        amp in -5.0f64..5.0,
        left in -2.0f64..2.0,
        right in -2.0f64..2.0,
        neumann in any::<bool>(),
        alpha_reg in 1e-8f64..1e-2,
    ) {
        let problem = mixed_problem(a, c, amp, left, right, neumann);
        let b = basis(12, 4.0);
        let sol = constrained_solve(&problem, &b, alpha_reg, None).unwrap();
        let (am, bv) = boundary_rows(&problem, &b).unwrap();
        let bc_res = (&am * &sol.weights - &bv).amax();
        prop_assert!(bc_res <= 1e-8 * bv.amax().max(1.0), "boundary residual {}", bc_res);

        let l = operator_rows(&problem, &b).unwrap();
        let g = DVector::from_vec(problem.source_values());
        let n_c = problem.n_collocation() as f64;
        let h = (DMatrix::identity(12, 12) * alpha_reg + l.transpose() * &l / n_c) * 2.0;
        let f = l.transpose() * g * (2.0 / n_c);
        prop_assert_eq!(h.clone(), h.transpose());
        let stat = &h * &sol.weights + am.transpose() * &sol.multipliers - &f;
        let scale = h.norm() * sol.weights.norm() + f.norm();
        prop_assert!(stat.norm() < 1e-8 * scale, "stationarity {} vs scale {}", stat.norm(), scale);
    }

    #[test]
    fn physics_residual_shrinks_along_penalty_sweep(seed in 0u64..50) {
        let d = physfit::data::generate_fig2_like(30, seed).unwrap();
        let x: Vec<f64> = d.inputs().iter().map(|v| (v + 1.0) / 2.5).collect();
        let d = Dataset::from_xy(&x, d.targets().as_slice()).unwrap();
        let problem = CollocationProblem::poisson_sine(25);
        let b = BasisSpec::rbf_1d_equispaced(x.iter().copied().fold(f64::MAX, f64::min), 1.0, 10, 3.0).unwrap();
        let mut prev = f64::INFINITY;
        for alpha_phys in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let cost = PhysicsCost::new(problem.clone(), alpha_phys, false).unwrap();
            let m = penalized_fit(Some(&d), &cost, &b, 1e-6).unwrap();
            let r: f64 = pde_residual(&problem, &m).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(r <= prev * (1.0 + 1e-8) + 1e-10, "{} after {}", r, prev);
            prev = r;
        }
    }
}
