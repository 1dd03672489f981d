//! Fully connected feed-forward networks.
//!
//! Layer 1 is the input and carries neither bias nor activation. For
//! `l = 2..L`, `z⁽ˡ⁾ = W⁽ˡ⁻¹⁾ y⁽ˡ⁻¹⁾ + b⁽ˡ⁾` and `y⁽ˡ⁾ = a⁽ˡ⁾(z⁽ˡ⁾)`, where
//! `W⁽ˡ⁻¹⁾` is `n_l × n_{l−1}` and feeds layer `l`. In code the matrices are
//! stored 0-based: `weights[k]` and `biases[k]` feed layer `k + 2`.
//!
//! Samples are rows, so a batch forward pass computes `Z = Y Wᵀ + 1 bᵀ`.
//!
//! The flat parameter vector is layer-major: for every layer, the weight
//! matrix row by row, then its bias vector.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FlatParams, Predictor};
use crate::error::{check_dim, Error, Result};
use crate::losses::LossSpec;
use crate::optim::Trainable;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation; relu'(0) = 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::param(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Pre-activations and outputs of every layer for a batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `zs[k]` is the pre-activation of layer `k + 2`.
    pub zs: Vec<DMatrix<f64>>,
    /// `ys[0]` is the input; `ys[k]` is the output of layer `k + 1`.
    pub ys: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.ys.last().expect("cache holds at least the input")
    }
}

/// `Σ_{l≥2} n_l·n_{l−1} + n_l`.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    schema_version: u32,
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

impl Mlp {
    /// A network with all parameters zero. `activations[k]` applies to layer
    /// `k + 2`, so there is one fewer activation than layers.
    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::param("an MLP needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::param("layer sizes must be positive"));
        }
        check_dim("activations (one per non-input layer)", layer_sizes.len() - 1, activations.len())?;
        let weights = layer_sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        let biases = layer_sizes[1..].iter().map(|&n| DVector::zeros(n)).collect();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), activations: activations.to_vec(), weights, biases })
    }

    /// Weights uniform in `±sqrt(6 / (n_{l−1} + n_l))`, biases zero.
    pub fn new_seeded(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut net.weights {
            let s = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            // row-major fill keeps the draw order aligned with the flat layout
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    w[(i, j)] = rng.random_range(-s..=s);
                }
            }
        }
        Ok(net)
    }

    /// Hidden layers share `hidden`; the output layer uses `output`.
    pub fn with_hidden_activation(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        seed: u64,
    ) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::new_seeded(layer_sizes, &acts, seed)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.biases
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.layer_sizes)
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for i in 0..w.nrows() {
                out.extend(w.row(i).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    /// Copy of this architecture carrying the given flat parameters.
    pub fn unflatten_params(&self, flat: &[f64]) -> Result<Self> {
        let mut net = self.clone();
        net.load_flat(flat)?;
        Ok(net)
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", self.param_count(), flat.len())?;
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    w[(i, j)] = it.next().expect("length checked");
                }
            }
            for v in b.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        check_dim("mlp input width", self.n_inputs(), x.ncols())?;
        let mut zs = Vec::with_capacity(self.weights.len());
        let mut ys = Vec::with_capacity(self.weights.len() + 1);
        ys.push(x.clone());
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let prev = ys.last().expect("non-empty");
            let mut z = prev * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            let y = z.map(|v| act.apply(v));
            zs.push(z);
            ys.push(y);
        }
        Ok(ForwardCache { zs, ys })
    }

    /// Reverse-mode gradient of a scalar cost given `∂J/∂Y` at the output.
    pub fn backprop_from_output(&self, cache: &ForwardCache, output_grad: &DMatrix<f64>) -> Result<Vec<f64>> {
        let out = cache.output();
        check_dim("output gradient rows", out.nrows(), output_grad.nrows())?;
        check_dim("output gradient columns", out.ncols(), output_grad.ncols())?;
        let n_layers = self.weights.len();
        let mut grads_w: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers);
        let mut grads_b: Vec<DVector<f64>> = Vec::with_capacity(n_layers);
        let mut upstream = output_grad.clone();
        for k in (0..n_layers).rev() {
            let act = self.activations[k];
            let delta = upstream.zip_map(&cache.zs[k], |g, z| g * act.derivative(z));
            grads_w.push(delta.transpose() * &cache.ys[k]);
            grads_b.push(delta.row_sum().transpose());
            if k > 0 {
                upstream = &delta * &self.weights[k];
            }
        }
        grads_w.reverse();
        grads_b.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads_w.iter().zip(&grads_b) {
            for i in 0..gw.nrows() {
                flat.extend(gw.row(i).iter());
            }
            flat.extend(gb.iter());
        }
        Ok(flat)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MlpFile {
            schema_version: SCHEMA_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            params: self.flatten_params(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MlpFile = serde_json::from_str(s)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidData(format!("unsupported schema_version {}", file.schema_version)));
        }
        let mut net = Self::zeros(&file.layer_sizes, &file.activations)?;
        net.load_flat(&file.params)?;
        Ok(net)
    }
}

/// `dJ/dw` for a differentiable loss (MSE, weighted MSE, Huber, or an
/// l2-penalized version of those).
pub fn backprop(net: &Mlp, x: &DMatrix<f64>, y_true: &DMatrix<f64>, loss: &LossSpec) -> Result<Vec<f64>> {
    if !loss.is_differentiable() {
        return Err(Error::param("backprop needs a differentiable loss (mse, wmse, huber, ridge)"));
    }
    let cache = net.forward(x)?;
    let g_out = loss.prediction_gradient(y_true, cache.output())?;
    let mut g = net.backprop_from_output(&cache, &g_out)?;
    let params = net.flatten_params();
    for (gi, pi) in g.iter_mut().zip(loss.penalty_gradient(&params)) {
        *gi += pi;
    }
    Ok(g)
}

impl Predictor for Mlp {
    fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut cache = self.forward(inputs)?;
        Ok(cache.ys.pop().expect("non-empty"))
    }
}

impl FlatParams for Mlp {
    fn params(&self) -> Vec<f64> {
        self.flatten_params()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.load_flat(params)
    }

    fn n_params(&self) -> usize {
        self.param_count()
    }
}

impl Trainable for Mlp {
    fn gradient(&self, batch: &Dataset, loss: &LossSpec) -> Result<Vec<f64>> {
        backprop(self, batch.inputs(), batch.targets(), loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(param_count(&[1, 2, 3, 1]), 17);
        assert_eq!(param_count(&[1, 1]), 2);
        let net = Mlp::new_seeded(&[2, 4, 4, 1], &[Activation::Tanh; 3], 0).unwrap();
        assert_eq!(net.flatten_params().len(), net.param_count());
    }

    #[test]
    fn zero_net_with_tanh_outputs_zero() {
        let net = Mlp::zeros(&[1, 2, 3, 1], &[Activation::Tanh; 3]).unwrap();
        let y = net.predict(&DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 5.0])).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        for z in [-2.0, -0.3, 0.0, 0.7, 1.9] {
            let h = 1e-5;
            let fd = (Activation::Tanh.apply(z + h) - Activation::Tanh.apply(z - h)) / (2.0 * h);
            assert!((fd - Activation::Tanh.derivative(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn flat_layout_is_layer_major_weights_first() {
        let mut net = Mlp::zeros(&[2, 2, 1], &[Activation::Identity; 2]).unwrap();
        let flat: Vec<f64> = (0..net.param_count()).map(|i| i as f64).collect();
        net.set_params(&flat).unwrap();
        assert_eq!(net.weights()[0], DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]));
        assert_eq!(net.biases()[0].as_slice(), &[4.0, 5.0]);
        assert_eq!(net.weights()[1].as_slice(), &[6.0, 7.0]);
        assert_eq!(net.biases()[1].as_slice(), &[8.0]);
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let net = Mlp::zeros(&[1, 3, 1], &[Activation::Tanh, Activation::Identity]).unwrap();
        assert!(net.unflatten_params(&[0.0; 5]).is_err());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Mlp::zeros(&[2, 3, 1], &[Activation::Tanh, Activation::Identity]).unwrap();
        assert!(net.forward(&DMatrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn backprop_rejects_eps_loss() {
        let net = Mlp::zeros(&[1, 1], &[Activation::Identity]).unwrap();
        let x = DMatrix::zeros(1, 1);
        let spec = LossSpec::epsilon_insensitive(0.1).unwrap();
        assert!(backprop(&net, &x, &x, &spec).is_err());
    }

    #[test]
    fn json_round_trip() {
        let net = Mlp::with_hidden_activation(&[1, 5, 1], Activation::Tanh, Activation::Identity, 7).unwrap();
        let back = Mlp::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
    }
}
