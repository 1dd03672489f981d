//! On-disk model envelope shared by `fit`, `bootstrap` and `predict`.

use anyhow::{bail, Context, Result};
use physfit::linalg::{from_rows, to_rows};
use physfit::nn::Activation;
use physfit::resampling::ensemble_predict;
use physfit::{BasisSpec, DMatrix, FlatParams, GprModel, KrrModel, LinearModel, Mlp, Predictor};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Linear {
        basis: BasisSpec,
        /// `n_b` rows of `n_y` weights.
        weights: Vec<Vec<f64>>,
    },
    Krr(KrrModel),
    Gpr(GprModel),
    Mlp {
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        params: Vec<f64>,
    },
    Ensemble {
        /// Architecture shared by all members; its own weights are unused.
        member: Box<SavedModel>,
        /// One flat weight vector per member.
        weight_population: Vec<Vec<f64>>,
        in_sample_mse_mean: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub seed: u64,
    pub model: SavedModel,
}

/// Point prediction plus an optional 1σ band.
pub struct Prediction {
    pub mean: DMatrix<f64>,
    pub std_dev: Option<DMatrix<f64>>,
}

impl SavedModel {
    pub fn from_linear(m: &LinearModel) -> Self {
        SavedModel::Linear { basis: m.basis().clone(), weights: to_rows(m.weights()) }
    }

    pub fn from_mlp(m: &Mlp) -> Self {
        SavedModel::Mlp {
            layer_sizes: m.layer_sizes().to_vec(),
            activations: m.activations().to_vec(),
            params: m.flatten_params(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SavedModel::Linear { .. } => "linear",
            SavedModel::Krr(_) => "krr",
            SavedModel::Gpr(_) => "gpr",
            SavedModel::Mlp { .. } => "mlp",
            SavedModel::Ensemble { .. } => "ensemble",
        }
    }

    fn linear(&self) -> Result<Option<LinearModel>> {
        Ok(match self {
            SavedModel::Linear { basis, weights } => Some(LinearModel::new(basis.clone(), from_rows(weights)?)?),
            _ => None,
        })
    }

    fn mlp(&self) -> Result<Option<Mlp>> {
        Ok(match self {
            SavedModel::Mlp { layer_sizes, activations, params } => {
                Some(Mlp::zeros(layer_sizes, activations)?.unflatten_params(params)?)
            }
            _ => None,
        })
    }

    /// Same architecture, different flat weights.
    fn with_params(&self, w: &[f64]) -> Result<SavedModel> {
        if let Some(mut m) = self.linear()? {
            m.set_params(w)?;
            return Ok(SavedModel::from_linear(&m));
        }
        if let Some(m) = self.mlp()? {
            return Ok(SavedModel::from_mlp(&m.unflatten_params(w)?));
        }
        bail!("{} models have no flat parameter vector", self.name())
    }

    pub fn predict_full(&self, x: &DMatrix<f64>) -> Result<Prediction> {
        match self {
            SavedModel::Gpr(g) => {
                let post = g.posterior(x)?;
                let sd = post.std_dev();
                let n_y = post.mean.ncols();
                let std_dev = DMatrix::from_fn(x.nrows(), n_y, |i, _| sd[i]);
                Ok(Prediction { mean: post.mean, std_dev: Some(std_dev) })
            }
            SavedModel::Ensemble { member, weight_population, in_sample_mse_mean } => {
                if weight_population.is_empty() {
                    bail!(physfit::Error::InvalidData("ensemble has no members".into()));
                }
                let pop = DMatrix::from_fn(weight_population[0].len(), weight_population.len(), |i, j| {
                    weight_population[j][i]
                });
                let p = ensemble_predict(x, &pop, *in_sample_mse_mean, |xg, w| {
                    member.with_params(w).and_then(|m| m.predict_mean(xg)).map_err(crate::commands::into_core)
                })?;
                Ok(Prediction { mean: p.mean, std_dev: Some(p.uncertainty) })
            }
            _ => Ok(Prediction { mean: self.predict_mean(x)?, std_dev: None }),
        }
    }

    pub fn predict_mean(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(match self {
            SavedModel::Linear { .. } => self.linear()?.expect("linear").predict(x)?,
            SavedModel::Krr(m) => m.predict(x)?,
            SavedModel::Gpr(m) => m.predict(x)?,
            SavedModel::Mlp { .. } => self.mlp()?.expect("mlp").predict(x)?,
            SavedModel::Ensemble { .. } => self.predict_full(x)?.mean,
        })
    }
}

impl Predictor for SavedModel {
    fn predict(&self, x: &DMatrix<f64>) -> physfit::Result<DMatrix<f64>> {
        self.predict_mean(x).map_err(crate::commands::into_core)
    }
}

impl FlatParams for SavedModel {
    fn params(&self) -> Vec<f64> {
        match self {
            SavedModel::Linear { weights, .. } => {
                let w = from_rows(weights).expect("rectangular weights");
                w.as_slice().to_vec()
            }
            SavedModel::Mlp { params, .. } => params.clone(),
            _ => Vec::new(),
        }
    }

    fn set_params(&mut self, w: &[f64]) -> physfit::Result<()> {
        *self = self.with_params(w).map_err(|e| physfit::Error::InvalidParameter(format!("{e:#}")))?;
        Ok(())
    }

    fn n_params(&self) -> usize {
        self.params().len()
    }
}

pub fn save(path: &str, seed: u64, model: SavedModel) -> Result<()> {
    let file = ModelFile { schema_version: SCHEMA_VERSION, seed, model };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {path}"))
}

pub fn load(path: &str) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(physfit::Error::from)
        .with_context(|| format!("parsing model file {path}"))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(physfit::Error::InvalidData(format!("unsupported schema_version {}", file.schema_version)).into());
    }
    Ok(file)
}
