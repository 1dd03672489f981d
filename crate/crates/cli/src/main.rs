//! `physfit` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or arguments, 2 numerical failure.

mod commands;
mod model_file;
mod output;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "physfit", version, about = "Regression, uncertainty and physics-constrained fitting")]
struct Cli {
    /// Print wall-clock time to stderr (never written to output files).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic 1-D benchmark dataset.
    GenData(GenDataArgs),
    /// Fit a model and save it as JSON.
    Fit(FitArgs),
    /// Evaluate a saved model on the x columns of a CSV.
    Predict(PredictArgs),
    /// K-fold cross-validation.
    Cv(CvArgs),
    /// Train a bootstrap ensemble and save it as a model.
    Bootstrap(BootstrapArgs),
    /// Solve a 1-D boundary-value problem.
    PdeSolve(PdeArgs),
    /// Genetic-programming symbolic regression.
    Symreg(SymregArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 60)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub output: String,
}

/// Optimizer settings for gradient-trained models.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// gd | momentum | rmsprop | adam
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Momentum or RMSprop decay; first-moment decay for Adam.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "16,16", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// tanh | relu | identity
    #[arg(long, default_value = "tanh")]
    pub activation: String,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// ridge | lasso | krr | gpr | mlp
    #[arg(long, default_value = "ridge")]
    pub model: String,
    /// poly | rbf | identity
    #[arg(long, default_value = "poly")]
    pub basis: String,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    /// Number of equispaced RBF centers.
    #[arg(long, default_value_t = 10)]
    pub centers: usize,
    /// RBF shape parameter; defaults to a nearest-neighbour heuristic.
    #[arg(long)]
    pub shape: Option<f64>,
    /// Ridge, lasso or KRR regularization strength.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// gaussian:γ | linear | poly:degree[:offset]
    #[arg(long, default_value = "gaussian:1")]
    pub kernel: String,
    #[arg(long, default_value_t = 0.01)]
    pub noise_variance: f64,
    /// mse | huber:δ | eps:ε | ridge:α | lasso:α | wmse (with --sigma)
    #[arg(long, default_value = "mse")]
    pub loss: String,
    /// Headerless CSV covariance matrix for --loss wmse.
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub lasso_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub output: String,
    /// Optional JSON report.
    #[arg(long)]
    pub report: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub output: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Keep the file order instead of shuffling before partitioning.
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub input: String,
    /// Ensemble model file.
    #[arg(long)]
    pub output: String,
    #[arg(long)]
    pub report: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub members: usize,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    /// split | replacement
    #[arg(long, default_value = "split")]
    pub mode: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PdeArgs {
    /// Problem description (JSON).
    #[arg(long)]
    pub problem: String,
    /// constrained | penalty | pinn
    #[arg(long, default_value = "constrained")]
    pub method: String,
    /// Optional observations (CSV with x0, y0).
    #[arg(long)]
    pub input: Option<String>,
    /// Solution samples (CSV).
    #[arg(long)]
    pub output: String,
    #[arg(long)]
    pub report: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub centers: usize,
    #[arg(long)]
    pub shape: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub alpha_reg: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_phys: f64,
    /// Leave boundary residuals out of the penalty (penalty method only).
    #[arg(long)]
    pub no_boundary_penalty: bool,
    /// Number of points in the output grid.
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    /// Finite-difference step for network derivatives.
    #[arg(long, default_value_t = physfit::physics::DEFAULT_FD_STEP)]
    pub fd_step: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SymregArgs {
    #[arg(long)]
    pub input: String,
    /// Best expression: prefix form on the first line, infix on the second.
    #[arg(long)]
    pub output: String,
    /// Per-generation CSV (generation, best_fitness, mean_fitness).
    #[arg(long)]
    pub history: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub population: usize,
    #[arg(long, default_value_t = 50)]
    pub generations: usize,
    #[arg(long, default_value = "add,sub,mul,div,sin,cos,exp,x,const")]
    pub primitives: String,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub tournament: usize,
    #[arg(long, default_value_t = 0.02)]
    pub elitism: f64,
    #[arg(long, default_value_t = 0.08)]
    pub replication: f64,
    #[arg(long, default_value_t = 0.7)]
    pub crossover: f64,
    #[arg(long, default_value_t = 0.2)]
    pub mutation: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().filter_map(|c| c.downcast_ref::<physfit::Error>()).any(physfit::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let start = Instant::now();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Cv(a) => commands::cv(&a),
        Command::Bootstrap(a) => commands::bootstrap(&a),
        Command::PdeSolve(a) => commands::pde_solve(&a),
        Command::Symreg(a) => commands::symreg(&a),
    };
    if cli.timing {
        eprintln!("elapsed: {:.3} s", start.elapsed().as_secs_f64());
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
