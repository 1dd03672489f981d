use anyhow::{bail, Context, Result};
use physfit::data::{generate_fig2_like, load_csv, load_inputs_csv, save_csv};
use physfit::kernel::krr_fit;
use physfit::linear::{default_rbf_shape, lasso_fit, ridge_fit};
use physfit::losses::mse;
use physfit::optim::minibatch_train;
use physfit::physics::{boundary_rows, constrained_solve, fd_derivatives, pde_residual, penalized_fit, pinn_train};
use physfit::resampling::{bootstrap_ensemble, kfold_cv};
use physfit::symreg::{evolve, GpConfig, Primitive};
use physfit::{
    Activation, BasisSpec, BatchSchedule, BoundaryKind, CollocationProblem, DMatrix, Dataset, GprModel, KernelSpec,
    LinearModel, LossSpec, Mlp, OptimizerState, PhysicsCost, Predictor, ProblemFile, ResampleMode,
};
use serde_json::{json, Value};

use crate::model_file::{self, SavedModel, SCHEMA_VERSION};
use crate::output::{read_matrix, write_json, write_table};
use crate::{BootstrapArgs, CvArgs, FitArgs, GenDataArgs, ModelArgs, PdeArgs, PredictArgs, SymregArgs, TrainArgs};

/// Half-width of the 95 % band written by `predict`, in standard deviations.
const BAND_Z: f64 = 1.96;

fn invalid(msg: impl Into<String>) -> physfit::Error {
    physfit::Error::InvalidParameter(msg.into())
}

/// Recovers the library error behind an `anyhow` chain so that its
/// numerical/validation classification survives.
pub fn into_core(e: anyhow::Error) -> physfit::Error {
    match e.downcast::<physfit::Error>() {
        Ok(inner) => inner,
        Err(other) => physfit::Error::InvalidData(format!("{other:#}")),
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let d = generate_fig2_like(a.n, a.seed)?;
    save_csv(&d, &a.output)?;
    Ok(())
}

fn build_basis(m: &ModelArgs, x: &DMatrix<f64>) -> Result<BasisSpec> {
    Ok(match m.basis.as_str() {
        "poly" => {
            if x.ncols() != 1 {
                bail!(invalid("polynomial basis needs exactly one input column"));
            }
            BasisSpec::Polynomial { degree: m.degree }
        }
        "rbf" => {
            if x.ncols() != 1 {
                bail!(invalid("rbf basis from the command line needs exactly one input column"));
            }
            rbf_basis(x.min(), x.max(), m.centers, m.shape)?
        }
        "identity" => BasisSpec::Identity { n_inputs: x.ncols() },
        other => bail!(invalid(format!("unknown basis '{other}'"))),
    })
}

fn rbf_basis(lo: f64, hi: f64, n: usize, shape: Option<f64>) -> Result<BasisSpec> {
    let shape = match shape {
        Some(s) => s,
        None => {
            let probe = BasisSpec::rbf_1d_equispaced(lo, hi, n, 1.0)?;
            match &probe {
                BasisSpec::GaussianRbf { centers, .. } => default_rbf_shape(centers)?,
                _ => unreachable!(),
            }
        }
    };
    Ok(BasisSpec::rbf_1d_equispaced(lo, hi, n, shape)?)
}

fn build_loss(m: &ModelArgs) -> Result<LossSpec> {
    if m.loss.trim() == "wmse" {
        let path = m.sigma.as_deref().ok_or_else(|| invalid("--loss wmse needs --sigma FILE"))?;
        return Ok(LossSpec::weighted(read_matrix(path)?)?);
    }
    Ok(m.loss.parse()?)
}

fn activation(name: &str) -> Result<Activation> {
    Ok(name.parse()?)
}

fn optimizer(t: &TrainArgs, n_params: usize) -> Result<OptimizerState> {
    Ok(OptimizerState::by_name(&t.optimizer, t.lr, t.beta, t.beta2, t.eps, n_params)?)
}

fn mlp_sizes(t: &TrainArgs, n_x: usize, n_y: usize) -> Vec<usize> {
    std::iter::once(n_x).chain(t.hidden.iter().copied()).chain(std::iter::once(n_y)).collect()
}

/// Details of a single fit that go into reports.
#[derive(Default)]
struct FitInfo {
    loss_history: Option<Vec<f64>>,
    lasso: Option<Value>,
}

fn fit_model(m: &ModelArgs, d: &Dataset, basis: Option<&BasisSpec>, seed: u64) -> Result<(SavedModel, FitInfo)> {
    let mut info = FitInfo::default();
    let model = match m.model.as_str() {
        "ridge" => SavedModel::from_linear(&ridge_fit(d, basis.expect("basis"), m.alpha)?),
        "lasso" => {
            let fit = lasso_fit(d, basis.expect("basis"), m.alpha, m.lasso_iters, m.tol)?;
            info.lasso = Some(json!({ "converged": fit.converged, "iterations": fit.iterations }));
            SavedModel::from_linear(&fit.model)
        }
        "krr" => SavedModel::Krr(krr_fit(d, &m.kernel.parse::<KernelSpec>()?, m.alpha)?),
        "gpr" => SavedModel::Gpr(GprModel::new(d, m.kernel.parse::<KernelSpec>()?, m.noise_variance)?),
        "mlp" => {
            let t = &m.train;
            let sizes = mlp_sizes(t, d.n_inputs(), d.n_outputs());
            let mut net = Mlp::with_hidden_activation(&sizes, activation(&t.activation)?, Activation::Identity, seed)?;
            let loss = build_loss(m)?;
            let batch =
                if matches!(loss, LossSpec::WeightedMse(_)) { d.n_samples() } else { t.batch.min(d.n_samples()) };
            let mut opt = optimizer(t, net.param_count())?;
            let sched = BatchSchedule::new(batch, t.epochs, seed)?;
            let report = minibatch_train(&mut net, d, &loss, &mut opt, &sched)?;
            info.loss_history = Some(report.loss_history);
            SavedModel::from_mlp(&net)
        }
        other => bail!(invalid(format!("unknown model '{other}'"))),
    };
    Ok((model, info))
}

fn needs_basis(m: &ModelArgs) -> bool {
    matches!(m.model.as_str(), "ridge" | "lasso")
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let d = load_csv(&a.input).with_context(|| format!("loading {}", a.input))?;
    let basis = if needs_basis(&a.model) { Some(build_basis(&a.model, d.inputs())?) } else { None };
    let (model, info) = fit_model(&a.model, &d, basis.as_ref(), a.seed)?;
    let train_mse = mse(d.targets(), &model.predict(d.inputs())?)?;
    println!("{} fit on {} samples: train MSE {train_mse:.6e}", model.name(), d.n_samples());
    if let Some(path) = &a.report {
        let mut r = json!({
            "schema_version": SCHEMA_VERSION,
            "command": "fit",
            "seed": a.seed,
            "model": a.model.model,
            "n_samples": d.n_samples(),
            "train_mse": train_mse,
        });
        if let Some(h) = info.loss_history {
            r["loss_history"] = json!(h);
        }
        if let Some(l) = info.lasso {
            r["lasso"] = l;
        }
        write_json(path, &r)?;
    }
    model_file::save(&a.output, a.seed, model)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let file = model_file::load(&a.model)?;
    let x = load_inputs_csv(&a.input).with_context(|| format!("loading {}", a.input))?;
    let p = file.model.predict_full(&x)?;
    let n_y = p.mean.ncols();
    let mut header: Vec<String> = (0..x.ncols()).map(|i| format!("x{i}")).collect();
    header.extend((0..n_y).map(|i| format!("y_mean{i}")));
    if p.std_dev.is_some() {
        header.extend((0..n_y).map(|i| format!("y_unc{i}")));
    }
    let rows = (0..x.nrows()).map(|r| {
        let mut row: Vec<f64> = x.row(r).iter().copied().collect();
        row.extend(p.mean.row(r).iter());
        if let Some(sd) = &p.std_dev {
            row.extend(sd.row(r).iter().map(|s| BAND_Z * s));
        }
        row
    });
    write_table(&a.output, &header, rows)
}

pub fn cv(a: &CvArgs) -> Result<()> {
    let d = load_csv(&a.input).with_context(|| format!("loading {}", a.input))?;
    let basis = if needs_basis(&a.model) { Some(build_basis(&a.model, d.inputs())?) } else { None };
    let report = kfold_cv(
        &d,
        |train| fit_model(&a.model, train, basis.as_ref(), a.seed).map(|(m, _)| m).map_err(into_core),
        a.folds,
        a.seed,
        !a.no_shuffle,
    )?;
    println!("{}-fold CV: mean MSE {:.6e}, std {:.6e}", a.folds, report.mean, report.std);
    let folds: Vec<Value> = report.folds.iter().map(|f| json!({ "test": f.test })).collect();
    write_json(
        &a.output,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "cv",
            "seed": a.seed,
            "model": a.model.model,
            "folds": a.folds,
            "shuffle": !a.no_shuffle,
            "per_fold_mse": report.per_fold_mse,
            "mean": report.mean,
            "std": report.std,
            "partition": folds,
        }),
    )
}

fn ensemble_template(m: &ModelArgs, basis: Option<&BasisSpec>, n_x: usize, n_y: usize) -> Result<SavedModel> {
    match m.model.as_str() {
        "ridge" | "lasso" => {
            let basis = basis.expect("basis").clone();
            let n_b = basis.n_basis();
            Ok(SavedModel::from_linear(&LinearModel::new(basis, DMatrix::zeros(n_b, n_y))?))
        }
        "mlp" => {
            let sizes = mlp_sizes(&m.train, n_x, n_y);
            let n_layers = sizes.len() - 1;
            let mut acts = vec![activation(&m.train.activation)?; n_layers - 1];
            acts.push(Activation::Identity);
            Ok(SavedModel::from_mlp(&Mlp::zeros(&sizes, &acts)?))
        }
        other => bail!(invalid(format!(
            "bootstrap needs a model with a flat weight vector (ridge, lasso or mlp), got '{other}'"
        ))),
    }
}

pub fn bootstrap(a: &BootstrapArgs) -> Result<()> {
    let d = load_csv(&a.input).with_context(|| format!("loading {}", a.input))?;
    let mode: ResampleMode = a.mode.parse()?;
    let basis = if needs_basis(&a.model) { Some(build_basis(&a.model, d.inputs())?) } else { None };
    let template = ensemble_template(&a.model, basis.as_ref(), d.n_inputs(), d.n_outputs())?;
    let result = bootstrap_ensemble(
        &d,
        |train| fit_model(&a.model, train, basis.as_ref(), a.seed).map(|(m, _)| m).map_err(into_core),
        a.members,
        a.test_fraction,
        mode,
        a.seed,
    )?;
    let in_mean = result.in_sample_mean();
    let out_mean = result.out_sample_mean();
    println!("{} members: mean in-sample MSE {in_mean:.6e}, mean out-of-sample MSE {out_mean:.6e}", result.n_members());
    if let Some(path) = &a.report {
        write_json(
            path,
            &json!({
                "schema_version": SCHEMA_VERSION,
                "command": "bootstrap",
                "seed": a.seed,
                "model": a.model.model,
                "mode": a.mode,
                "members": a.members,
                "test_fraction": a.test_fraction,
                "in_sample_mse": result.in_sample_mse,
                "out_sample_mse": result.out_sample_mse,
                "in_sample_mse_mean": in_mean,
                "out_sample_mse_mean": out_mean,
            }),
        )?;
    }
    let pop = &result.weight_population;
    let weight_population = (0..pop.ncols()).map(|j| pop.column(j).iter().copied().collect()).collect();
    model_file::save(
        &a.output,
        a.seed,
        SavedModel::Ensemble { member: Box::new(template), weight_population, in_sample_mse_mean: in_mean },
    )
}

/// Interior residual and boundary values of a scalar trial function given
/// its values and derivatives at the collocation and boundary points.
fn boundary_misfit(problem: &CollocationProblem, u: &[f64], du: &[f64]) -> f64 {
    problem
        .boundary
        .iter()
        .enumerate()
        .map(|(k, bc)| match bc.kind {
            BoundaryKind::Dirichlet => (u[k] - bc.value).abs(),
            BoundaryKind::Neumann => (du[k] - bc.value).abs(),
        })
        .fold(0.0, f64::max)
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn pde_solve(a: &PdeArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.problem).with_context(|| format!("reading {}", a.problem))?;
    let pf = ProblemFile::from_json(&text).with_context(|| format!("parsing {}", a.problem))?;
    let (lo, hi) = pf.domain;
    let basis = rbf_basis(lo, hi, a.centers, a.shape)?;
    let problem = pf.build(basis.n_basis())?;
    let data = match &a.input {
        Some(p) => Some(load_csv(p).with_context(|| format!("loading {p}"))?),
        None => None,
    };
    if a.grid < 2 {
        bail!(invalid("--grid needs at least 2 points"));
    }
    let grid = DMatrix::from_fn(a.grid, 1, |i, _| lo + (hi - lo) * i as f64 / (a.grid - 1) as f64);
    let locations: Vec<f64> = problem.boundary.iter().map(|bc| bc.location).collect();

    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "pde-solve",
        "method": a.method,
        "seed": a.seed,
        "n_collocation": problem.n_collocation(),
    });
    let u_grid: DMatrix<f64> = match a.method.as_str() {
        "constrained" | "penalty" => {
            let model = if a.method == "constrained" {
                let sol = constrained_solve(&problem, &basis, a.alpha_reg, data.as_ref())?;
                report["multipliers"] = json!(sol.multipliers.as_slice());
                report["stationarity_residual_norm"] = json!(sol.stationarity_residual_norm);
                sol.model(&basis)?
            } else {
                let cost = PhysicsCost::new(problem.clone(), a.alpha_phys, !a.no_boundary_penalty)?;
                report["alpha_phys"] = json!(a.alpha_phys);
                penalized_fit(data.as_ref(), &cost, &basis, a.alpha_reg)?
            };
            let (rows, values) = boundary_rows(&problem, &basis)?;
            let bc = (rows * model.weights().column(0) - values).amax();
            report["n_basis"] = json!(basis.n_basis());
            report["interior_residual_rms"] = json!(rms(&pde_residual(&problem, &model)?));
            report["boundary_residual_max"] = json!(bc);
            report["weights"] = json!(model.weights().as_slice());
            model.predict(&grid)?
        }
        "pinn" => {
            let t = &a.train;
            let sizes = mlp_sizes(t, 1, 1);
            let mut net =
                Mlp::with_hidden_activation(&sizes, activation(&t.activation)?, Activation::Identity, a.seed)?;
            let mut opt = optimizer(t, net.param_count())?;
            let batch = t.batch.min(problem.n_collocation()).max(1);
            let sched = BatchSchedule::new(batch, t.epochs, a.seed)?;
            let r = pinn_train(&mut net, &problem, data.as_ref(), a.alpha_phys, &mut opt, &sched, a.fd_step)?;
            let (u, du, d2u) = fd_derivatives(&net, &problem.collocation, a.fd_step)?;
            let residual: Vec<f64> = problem
                .collocation
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    problem.a.eval(x) * d2u[j] + problem.b.eval(x) * du[j] + problem.c.eval(x) * u[j]
                        - problem.source.eval(x)
                })
                .collect();
            let (ub, dub, _) = fd_derivatives(&net, &locations, a.fd_step)?;
            report["alpha_phys"] = json!(a.alpha_phys);
            report["initial_cost"] = json!(r.initial_cost);
            report["cost_history"] = json!(r.cost_history);
            report["interior_residual_rms"] = json!(rms(&residual));
            report["boundary_residual_max"] = json!(boundary_misfit(&problem, &ub, &dub));
            net.predict(&grid)?
        }
        other => bail!(invalid(format!("unknown method '{other}' (constrained | penalty | pinn)"))),
    };

    let mut header = vec!["x0".to_string(), "u".to_string()];
    let exact: Option<Vec<f64>> = pf.exact.as_ref().map(|f| grid.iter().map(|&x| f.eval(x)).collect());
    if let Some(e) = &exact {
        header.push("u_exact".into());
        let err = (0..a.grid).map(|i| (u_grid[(i, 0)] - e[i]).abs()).fold(0.0, f64::max);
        report["max_abs_error"] = json!(err);
    }
    let rows = (0..a.grid).map(|i| {
        let mut row = vec![grid[(i, 0)], u_grid[(i, 0)]];
        if let Some(e) = &exact {
            row.push(e[i]);
        }
        row
    });
    write_table(&a.output, &header, rows)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn symreg(a: &SymregArgs) -> Result<()> {
    let d = load_csv(&a.input).with_context(|| format!("loading {}", a.input))?;
    let primitives = a
        .primitives
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse::<Primitive>)
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = GpConfig {
        primitives,
        population_size: a.population,
        generations: a.generations,
        elitism_rate: a.elitism,
        replication_rate: a.replication,
        crossover_rate: a.crossover,
        mutation_rate: a.mutation,
        max_depth: a.max_depth,
        tournament_size: a.tournament,
        seed: a.seed,
    };
    let r = evolve(&d, &cfg)?;
    println!("best MSE {:.6e}: {}", r.best_fitness, r.best.to_infix());
    std::fs::write(&a.output, format!("{}\n{}\n", r.best.to_prefix(), r.best.to_infix()))
        .with_context(|| format!("writing {}", a.output))?;
    if let Some(path) = &a.history {
        let header = ["generation", "best_fitness", "mean_fitness"].map(String::from);
        write_table(
            path,
            &header,
            r.history.iter().map(|h| vec![h.generation as f64, h.best_fitness, h.mean_fitness]),
        )?;
    }
    Ok(())
}
