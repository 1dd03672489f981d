//! Regression toolkit for physical modelling: parametric and kernel
//! regressors, neural networks with hand-written backpropagation,
//! first-order optimizers, resampling-based uncertainty, physics-constrained
//! fitting of boundary-value problems, and symbolic regression.
//!
//! Matrices follow a samples-as-rows convention: inputs are `n_p × n_x`,
//! targets and predictions `n_p × n_y`.

// `!(x >= 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod linear;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod physics;
pub mod resampling;
pub mod symreg;

pub use nalgebra::{DMatrix, DVector};

pub use data::{Dataset, FlatParams, Predictor, SplitIndices};
pub use error::{Error, Result};
pub use kernel::{GprModel, GprPosterior, KernelSpec, KrrModel};
pub use linear::{BasisSpec, LassoFit, LinearModel};
pub use losses::{LossSpec, Norm, WeightMatrix};
pub use nn::{Activation, Mlp};
pub use optim::{BatchSchedule, OptimizerState, TrainReport, Trainable};
pub use physics::{BoundaryCondition, BoundaryKind, Coefficient, CollocationProblem, PhysicsCost, ProblemFile};
pub use resampling::{CvReport, EnsemblePrediction, EnsembleResult, ResampleMode};
pub use symreg::{ExprTree, GpConfig, Primitive};
