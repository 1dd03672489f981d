//! First-order update rules and mini-batch epoch scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FlatParams, Predictor};
use crate::error::{check_dim, Error, Result};
use crate::losses::LossSpec;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// A model that can report `dJ/dw` on a batch.
pub trait Trainable: Predictor + FlatParams {
    fn gradient(&self, batch: &Dataset, loss: &LossSpec) -> Result<Vec<f64>>;
}

/// Update rule together with its running buffers.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    /// `w ← w − η g`
    Gd { lr: f64 },
    /// `m ← β m − η g; w ← w + m`
    Momentum { lr: f64, beta: f64, velocity: Vec<f64> },
    /// `s ← β s + (1−β) g²; w ← w − η g / √(s + ε)`
    RmsProp { lr: f64, beta: f64, eps: f64, sq_avg: Vec<f64> },
    /// Bias-corrected first and second moments; `step` is the exponent used
    /// on the next update and starts at 1.
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, s: Vec<f64>, step: u32 },
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must lie in [0, 1), got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be > 0, got {v}")))
    }
}

impl OptimizerState {
    pub fn gd(lr: f64) -> Result<Self> {
        check_positive("learning rate", lr)?;
        Ok(Self::Gd { lr })
    }

    pub fn momentum(lr: f64, beta: f64, n_params: usize) -> Result<Self> {
        check_positive("learning rate", lr)?;
        check_rate("beta", beta)?;
        Ok(Self::Momentum { lr, beta, velocity: vec![0.0; n_params] })
    }

    pub fn rmsprop(lr: f64, beta: f64, eps: f64, n_params: usize) -> Result<Self> {
        check_positive("learning rate", lr)?;
        check_rate("beta", beta)?;
        check_positive("eps", eps)?;
        Ok(Self::RmsProp { lr, beta, eps, sq_avg: vec![0.0; n_params] })
    }

    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64, n_params: usize) -> Result<Self> {
        check_positive("learning rate", lr)?;
        check_rate("beta1", beta1)?;
        check_rate("beta2", beta2)?;
        check_positive("eps", eps)?;
        Ok(Self::Adam { lr, beta1, beta2, eps, m: vec![0.0; n_params], s: vec![0.0; n_params], step: 1 })
    }

    pub fn adam_default(n_params: usize) -> Self {
        Self::adam(DEFAULT_LR, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS, n_params)
            .expect("default hyperparameters are valid")
    }

    /// Builds an optimizer by CLI name (`gd | momentum | rmsprop | adam`).
    /// Unset hyperparameters take the documented defaults.
    pub fn by_name(
        name: &str,
        lr: Option<f64>,
        beta: Option<f64>,
        beta2: Option<f64>,
        eps: Option<f64>,
        n_params: usize,
    ) -> Result<Self> {
        let lr = lr.unwrap_or(DEFAULT_LR);
        let eps = eps.unwrap_or(DEFAULT_EPS);
        match name {
            "gd" => Self::gd(lr),
            "momentum" => Self::momentum(lr, beta.unwrap_or(DEFAULT_BETA), n_params),
            "rmsprop" => Self::rmsprop(lr, beta.unwrap_or(DEFAULT_BETA), eps, n_params),
            "adam" => Self::adam(lr, beta.unwrap_or(DEFAULT_BETA1), beta2.unwrap_or(DEFAULT_BETA2), eps, n_params),
            other => Err(Error::param(format!("unknown optimizer '{other}'"))),
        }
    }

    fn buffer_len(&self) -> Option<usize> {
        match self {
            Self::Gd { .. } => None,
            Self::Momentum { velocity, .. } => Some(velocity.len()),
            Self::RmsProp { sq_avg, .. } => Some(sq_avg.len()),
            Self::Adam { m, .. } => Some(m.len()),
        }
    }

    /// Applies one element-wise update to `w` in place.
    pub fn step(&mut self, w: &mut [f64], g: &[f64]) -> Result<()> {
        check_dim("gradient length", w.len(), g.len())?;
        if let Some(n) = self.buffer_len() {
            check_dim("optimizer buffer length", n, w.len())?;
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        match self {
            Self::Gd { lr } => {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= *lr * gi;
                }
            }
            Self::Momentum { lr, beta, velocity } => {
                for ((wi, gi), mi) in w.iter_mut().zip(g).zip(velocity.iter_mut()) {
                    *mi = *beta * *mi - *lr * gi;
                    *wi += *mi;
                }
            }
            Self::RmsProp { lr, beta, eps, sq_avg } => {
                for ((wi, gi), si) in w.iter_mut().zip(g).zip(sq_avg.iter_mut()) {
                    *si = *beta * *si + (1.0 - *beta) * gi * gi;
                    *wi -= *lr * gi / (*si + *eps).sqrt();
                }
            }
            Self::Adam { lr, beta1, beta2, eps, m, s, step } => {
                let c1 = 1.0 - beta1.powi(*step as i32);
                let c2 = 1.0 - beta2.powi(*step as i32);
                for (((wi, gi), mi), si) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(s.iter_mut()) {
                    *mi = *beta1 * *mi + (1.0 - *beta1) * gi;
                    *si = *beta2 * *si + (1.0 - *beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let s_hat = *si / c2;
                    *wi -= *lr * m_hat / (s_hat.sqrt() + *eps);
                }
                *step += 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
}

impl BatchSchedule {
    pub fn new(batch_size: usize, epochs: usize, shuffle_seed: u64) -> Result<Self> {
        if batch_size == 0 || epochs == 0 {
            return Err(Error::param("batch size and epoch count must be positive"));
        }
        Ok(Self { batch_size, epochs, shuffle_seed })
    }

    pub fn steps_per_epoch(&self, n_p: usize) -> usize {
        n_p.div_ceil(self.batch_size)
    }
}

/// Losses recorded by [`minibatch_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-dataset loss after each epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

/// Row batches for one epoch: a seeded shuffle cut into `⌈n/batch⌉` pieces,
/// the last possibly short.
pub fn epoch_batches(n_p: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_p).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Runs mini-batch training in place.
///
/// If the full-dataset loss becomes non-finite the parameters are reset to
/// those at the end of the last finite epoch and [`Error::Diverged`] is
/// returned.
pub fn minibatch_train<M: Trainable>(
    model: &mut M,
    data: &Dataset,
    loss: &LossSpec,
    opt: &mut OptimizerState,
    sched: &BatchSchedule,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    if sched.batch_size > data.n_samples() {
        return Err(Error::param(format!("batch size {} exceeds {} samples", sched.batch_size, data.n_samples())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.shuffle_seed);
    let mut params = model.params();
    let mut last_finite = params.clone();
    let mut history = Vec::with_capacity(sched.epochs);
    let mut steps = 0;
    for epoch in 0..sched.epochs {
        for rows in epoch_batches(data.n_samples(), sched.batch_size, &mut rng) {
            let batch = data.select(&rows)?;
            let g = model.gradient(&batch, loss);
            let g = match g {
                Ok(g) if g.iter().all(|v| v.is_finite()) => g,
                Ok(_) => {
                    model.set_params(&last_finite)?;
                    return Err(Error::Diverged { epoch });
                }
                Err(e) => return Err(e),
            };
            opt.step(&mut params, &g)?;
            model.set_params(&params)?;
            steps += 1;
        }
        let pred = model.predict(data.inputs())?;
        let value = loss.value(data.targets(), &pred, &params)?;
        if !value.is_finite() {
            model.set_params(&last_finite)?;
            return Err(Error::Diverged { epoch });
        }
        last_finite.copy_from_slice(&params);
        history.push(value);
    }
    Ok(TrainReport { loss_history: history, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gd_hand_step() {
        let mut opt = OptimizerState::gd(0.1).unwrap();
        let mut w = [1.0];
        opt.step(&mut w, &[2.0]).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_beta_momentum_is_gd() {
        let mut gd = OptimizerState::gd(0.05).unwrap();
        let mut mom = OptimizerState::momentum(0.05, 0.0, 3).unwrap();
        let (mut a, mut b) = ([1.0, -2.0, 0.5], [1.0, -2.0, 0.5]);
        for k in 0..50 {
            let g = [(k as f64).sin(), a[1] * 0.3, -1.5];
            gd.step(&mut a, &g).unwrap();
            mom.step(&mut b, &g).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut opt = OptimizerState::adam_default(3);
        let mut w = [0.0, 1.0, -1.0];
        opt.step(&mut w, &[0.5, -2.0, 1e-2]).unwrap();
        let deltas = [w[0], w[1] - 1.0, w[2] + 1.0];
        for d in deltas {
            assert!(d.abs() <= DEFAULT_LR && d.abs() >= DEFAULT_LR * (1.0 - 1e-4), "{d}");
        }
    }

    #[test]
    fn rmsprop_keeps_eps_under_root() {
        let mut opt = OptimizerState::rmsprop(0.1, 0.5, 0.25, 1).unwrap();
        let mut w = [0.0];
        opt.step(&mut w, &[1.0]).unwrap();
        // s = 0.5, step = 0.1 / sqrt(0.75)
        assert!((w[0] + 0.1 / 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut opt = OptimizerState::adam_default(2);
        assert!(opt.step(&mut [0.0, 0.0], &[1.0]).is_err());
        assert!(opt.step(&mut [0.0], &[1.0]).is_err());
        assert!(matches!(opt.step(&mut [0.0, 0.0], &[f64::NAN, 1.0]), Err(Error::NonFinite(_))));
        assert!(OptimizerState::momentum(0.1, 1.0, 1).is_err());
        assert!(OptimizerState::gd(0.0).is_err());
    }

    #[test]
    fn batches_cover_rows_with_short_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = epoch_batches(25, 10, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![10, 10, 5]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn adam_default_buffers_are_sized() {
        match OptimizerState::adam_default(4) {
            OptimizerState::Adam { m, s, step, .. } => {
                assert_eq!((m.len(), s.len(), step), (4, 4, 1));
            }
            _ => unreachable!(),
        }
    }
}
