use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BoundaryKind, CollocationProblem};
use crate::data::{Dataset, FlatParams};
use crate::error::{check_dim, Error, Result};
use crate::nn::Mlp;
use crate::optim::{epoch_batches, BatchSchedule, OptimizerState};

/// Default central-difference step for network derivatives.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// `(u, u', u'')` of a scalar network at each point by central differences
/// with step `h`.
pub fn fd_derivatives(net: &Mlp, x: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_fd(net, h)?;
    let n = x.len();
    let stacked = DMatrix::from_fn(3 * n, 1, |r, _| x[r / 3] + h * ((r % 3) as f64 - 1.0));
    let out = net.forward(&stacked)?.ys.pop().expect("non-empty");
    let mut u = Vec::with_capacity(n);
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    for j in 0..n {
        let (um, u0, up) = (out[(3 * j, 0)], out[(3 * j + 1, 0)], out[(3 * j + 2, 0)]);
        u.push(u0);
        d1.push((up - um) / (2.0 * h));
        d2.push((up - 2.0 * u0 + um) / (h * h));
    }
    Ok((u, d1, d2))
}

fn check_fd(net: &Mlp, h: f64) -> Result<()> {
    check_dim("physics network inputs", 1, net.n_inputs())?;
    check_dim("physics network outputs", 1, net.n_outputs())?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::param(format!("finite-difference step must be > 0, got {h}")));
    }
    Ok(())
}

/// Which rows of the stacked network input belong to which cost term.
/// A stencil or Neumann pair occupies consecutive rows, keyed by its first.
enum Row {
    Data,
    Stencil(usize),
    Boundary(usize),
}

/// Physics-augmented cost and its parameter gradient:
///
/// ```text
/// C = (1/n_p) Σ (N(x_i) − y_i)² + α_phys [ (1/|S|) Σ_{j∈S} r_j² + (1/n_bc) Σ_k r_b,k² ]
/// ```
///
/// `S` is the subset `collocation` of collocation indices. Derivatives of the
/// network output are taken by central differences with step `h`, and the
/// gradient is exact for that discretized cost.
pub fn pinn_cost_and_gradient(
    net: &Mlp,
    problem: &CollocationProblem,
    data: Option<&Dataset>,
    alpha_phys: f64,
    h: f64,
    collocation: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_fd(net, h)?;
    let data = data.filter(|d| !d.is_empty());
    if let Some(d) = data {
        check_dim("physics data inputs", 1, d.n_inputs())?;
        check_dim("physics data outputs", 1, d.n_outputs())?;
    }
    let use_physics = alpha_phys > 0.0;

    let mut xs = Vec::new();
    let mut rows = Vec::new();
    if let Some(d) = data {
        for i in 0..d.n_samples() {
            xs.push(d.inputs()[(i, 0)]);
            rows.push(Row::Data);
        }
    }
    if use_physics {
        for &j in collocation {
            let x = *problem
                .collocation
                .get(j)
                .ok_or_else(|| Error::param(format!("collocation index {j} out of range")))?;
            for o in [-1i8, 0, 1] {
                xs.push(x + h * f64::from(o));
                rows.push(Row::Stencil(j));
            }
        }
        for (k, bc) in problem.boundary.iter().enumerate() {
            let offsets: &[i8] = match bc.kind {
                BoundaryKind::Dirichlet => &[0],
                BoundaryKind::Neumann => &[-1, 1],
            };
            for &o in offsets {
                xs.push(bc.location + h * f64::from(o));
                rows.push(Row::Boundary(k));
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::InvalidData("physics cost has no data and no active residual terms".into()));
    }

    let cache = net.forward(&DMatrix::from_column_slice(xs.len(), 1, &xs))?;
    let u = cache.output().column(0).clone_owned();
    let mut grad_out = DMatrix::zeros(xs.len(), 1);
    let mut cost = 0.0;

    let mut at = 0;
    if let Some(d) = data {
        let n_p = d.n_samples() as f64;
        for i in 0..d.n_samples() {
            let e = u[at] - d.targets()[(i, 0)];
            cost += e * e / n_p;
            grad_out[(at, 0)] = 2.0 * e / n_p;
            at += 1;
        }
    }
    if use_physics {
        let n_s = collocation.len().max(1) as f64;
        let n_bc = problem.boundary.len() as f64;
        while at < rows.len() {
            match rows[at] {
                Row::Stencil(j) => {
                    let x = problem.collocation[j];
                    let (a, b, c) = (problem.a.eval(x), problem.b.eval(x), problem.c.eval(x));
                    let (um, u0, up) = (u[at], u[at + 1], u[at + 2]);
                    let r = a * (up - 2.0 * u0 + um) / (h * h) + b * (up - um) / (2.0 * h) + c * u0
                        - problem.source.eval(x);
                    cost += alpha_phys * r * r / n_s;
                    let s = 2.0 * alpha_phys * r / n_s;
                    grad_out[(at, 0)] = s * (a / (h * h) - b / (2.0 * h));
                    grad_out[(at + 1, 0)] = s * (c - 2.0 * a / (h * h));
                    grad_out[(at + 2, 0)] = s * (a / (h * h) + b / (2.0 * h));
                    at += 3;
                }
                Row::Boundary(k) => {
                    let bc = problem.boundary[k];
                    let s = 2.0 * alpha_phys / n_bc;
                    match bc.kind {
                        BoundaryKind::Dirichlet => {
                            let r = u[at] - bc.value;
                            cost += alpha_phys * r * r / n_bc;
                            grad_out[(at, 0)] = s * r;
                            at += 1;
                        }
                        BoundaryKind::Neumann => {
                            let r = (u[at + 1] - u[at]) / (2.0 * h) - bc.value;
                            cost += alpha_phys * r * r / n_bc;
                            grad_out[(at, 0)] = -s * r / (2.0 * h);
                            grad_out[(at + 1, 0)] = s * r / (2.0 * h);
                            at += 2;
                        }
                    }
                }
                Row::Data => unreachable!("data rows come first"),
            }
        }
    }
    let grad = net.backprop_from_output(&cache, &grad_out)?;
    Ok((cost, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnReport {
    /// Full cost before the first update.
    pub initial_cost: f64,
    /// Full cost after each epoch.
    pub cost_history: Vec<f64>,
    pub steps: usize,
}

/// Trains `net` in place on the physics-augmented cost.
///
/// Mini-batches are drawn over the collocation points; data rows and boundary
/// rows enter every step. With no collocation points (or `α_phys = 0`) each
/// epoch is one full-batch step. On a non-finite cost the parameters are
/// reset to the last finite epoch and [`Error::Diverged`] is returned.
#[allow(clippy::too_many_arguments)]
pub fn pinn_train(
    net: &mut Mlp,
    problem: &CollocationProblem,
    data: Option<&Dataset>,
    alpha_phys: f64,
    opt: &mut OptimizerState,
    sched: &BatchSchedule,
    h: f64,
) -> Result<PinnReport> {
    if !(alpha_phys >= 0.0) || !alpha_phys.is_finite() {
        return Err(Error::param(format!("alpha_phys must be >= 0, got {alpha_phys}")));
    }
    let n_c = if alpha_phys > 0.0 { problem.n_collocation() } else { 0 };
    if n_c > 0 && sched.batch_size > n_c {
        return Err(Error::param(format!("batch size {} exceeds {n_c} collocation points", sched.batch_size)));
    }
    let all: Vec<usize> = (0..problem.n_collocation()).collect();
    let full_cost = |net: &Mlp| pinn_cost_and_gradient(net, problem, data, alpha_phys, h, &all).map(|(c, _)| c);

    let initial_cost = full_cost(net)?;
    if !initial_cost.is_finite() {
        return Err(Error::NonFinite("initial physics cost".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.shuffle_seed);
    let mut params = net.params();
    let mut last_finite = params.clone();
    let mut history = Vec::with_capacity(sched.epochs);
    let mut steps = 0;
    for epoch in 0..sched.epochs {
        let batches = if n_c > 0 { epoch_batches(n_c, sched.batch_size, &mut rng) } else { vec![Vec::new()] };
        for batch in batches {
            let (_, g) = pinn_cost_and_gradient(net, problem, data, alpha_phys, h, &batch)?;
            if g.iter().any(|v| !v.is_finite()) {
                net.set_params(&last_finite)?;
                return Err(Error::Diverged { epoch });
            }
            opt.step(&mut params, &g)?;
            net.set_params(&params)?;
            steps += 1;
        }
        let c = full_cost(net)?;
        if !c.is_finite() {
            net.set_params(&last_finite)?;
            return Err(Error::Diverged { epoch });
        }
        last_finite.copy_from_slice(&params);
        history.push(c);
    }
    Ok(PinnReport { initial_cost, cost_history: history, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossSpec;
    use crate::nn::{backprop, Activation};

    fn net(seed: u64) -> Mlp {
        Mlp::with_hidden_activation(&[1, 5, 1], Activation::Tanh, Activation::Identity, seed).unwrap()
    }

    #[test]
    fn single_tanh_neuron_second_derivative() {
        let mut n = Mlp::zeros(&[1, 1, 1], &[Activation::Tanh, Activation::Identity]).unwrap();
        n.set_params(&[1.3, -0.2, 0.7, 0.1]).unwrap();
        let xs = [-0.8, 0.0, 0.35, 0.9];
        let (_, d1, d2) = fd_derivatives(&n, &xs, DEFAULT_FD_STEP).unwrap();
        for (k, &x) in xs.iter().enumerate() {
            let t = (1.3 * x - 0.2f64).tanh();
            let exact1 = 0.7 * 1.3 * (1.0 - t * t);
            let exact2 = 0.7 * 1.3 * 1.3 * (-2.0 * t * (1.0 - t * t));
            assert!((d1[k] - exact1).abs() < 1e-5);
            assert!((d2[k] - exact2).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_physics_weight_is_plain_regression() {
        let n = net(3);
        let d = Dataset::from_xy(&[0.1, 0.4, 0.8], &[1.0, -0.5, 0.3]).unwrap();
        let p = CollocationProblem::poisson_sine(5);
        let (_, g) = pinn_cost_and_gradient(&n, &p, Some(&d), 0.0, DEFAULT_FD_STEP, &[0, 1, 2, 3, 4]).unwrap();
        let g_ref = backprop(&n, d.inputs(), d.targets(), &LossSpec::Mse).unwrap();
        for (a, b) in g.iter().zip(&g_ref) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut p = CollocationProblem::poisson_sine(6);
        p.b = super::super::Coefficient::constant(0.4);
        p.boundary[1] = super::super::BoundaryCondition::neumann(1.0, -1.0);
        let d = Dataset::from_xy(&[0.2, 0.7], &[0.5, 0.9]).unwrap();
        let n = net(11);
        let subset = [0, 2, 5];
        let (_, g) = pinn_cost_and_gradient(&n, &p, Some(&d), 0.3, 1e-2, &subset).unwrap();
        let w = n.params();
        let eps = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += eps;
            let mut wm = w.clone();
            wm[i] -= eps;
            let cp =
                pinn_cost_and_gradient(&n.unflatten_params(&wp).unwrap(), &p, Some(&d), 0.3, 1e-2, &subset).unwrap().0;
            let cm =
                pinn_cost_and_gradient(&n.unflatten_params(&wm).unwrap(), &p, Some(&d), 0.3, 1e-2, &subset).unwrap().0;
            let fd = (cp - cm) / (2.0 * eps);
            assert!((g[i] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn rejects_multi_output_net() {
        let n = Mlp::zeros(&[1, 2, 2], &[Activation::Tanh, Activation::Identity]).unwrap();
        assert!(fd_derivatives(&n, &[0.5], 1e-3).is_err());
    }
}
