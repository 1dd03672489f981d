//! Model assessment by resampling: bootstrap ensembles, bagged predictions
//! and K-fold cross-validation.
//!
//! Members and folds are independent work items and run on the rayon pool.
//! Each bootstrap member draws from its own ChaCha stream selected by the
//! member index, so results do not depend on scheduling.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, FlatParams, Predictor, SplitIndices};
use crate::error::{check_dim, Error, Result};
use crate::losses::mse;

/// Redraws allowed when a with-replacement sample leaves no test rows.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// Disjoint random train/test split per member.
    Split,
    /// Draw the training rows with replacement; test on the rows never drawn.
    Replacement,
}

impl std::str::FromStr for ResampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(ResampleMode::Split),
            "replacement" => Ok(ResampleMode::Replacement),
            other => Err(Error::param(format!("unknown resampling mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// In-sample MSE of each member.
    pub in_sample_mse: Vec<f64>,
    /// Out-of-sample MSE of each member.
    pub out_sample_mse: Vec<f64>,
    /// One column of flat weights per member (`n_w × n_E`).
    pub weight_population: DMatrix<f64>,
    pub splits: Vec<SplitIndices>,
}

impl EnsembleResult {
    pub fn n_members(&self) -> usize {
        self.in_sample_mse.len()
    }

    pub fn in_sample_mean(&self) -> f64 {
        mean(&self.in_sample_mse)
    }

    pub fn out_sample_mean(&self) -> f64 {
        mean(&self.out_sample_mse)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation (divides by `n`).
pub(crate) fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    rng
}

fn member_split(n_p: usize, n_test: usize, mode: ResampleMode, rng: &mut ChaCha8Rng) -> Result<SplitIndices> {
    match mode {
        ResampleMode::Split => {
            let mut perm: Vec<usize> = (0..n_p).collect();
            perm.shuffle(rng);
            Ok(SplitIndices { test: perm[..n_test].to_vec(), train: perm[n_test..].to_vec() })
        }
        ResampleMode::Replacement => {
            let n_train = n_p - n_test;
            for _ in 0..MAX_REDRAWS {
                let train: Vec<usize> = (0..n_train).map(|_| rng.random_range(0..n_p)).collect();
                let mut drawn = vec![false; n_p];
                train.iter().for_each(|&i| drawn[i] = true);
                let test: Vec<usize> = (0..n_p).filter(|&i| !drawn[i]).collect();
                if !test.is_empty() {
                    return Ok(SplitIndices { train, test });
                }
            }
            Err(Error::Numerical(format!("every with-replacement draw covered all rows after {MAX_REDRAWS} attempts")))
        }
    }
}

/// Trains `n_e` models on resampled data and records their in-sample and
/// out-of-sample MSE and flat weights.
///
/// The number of training rows is `n_p − round(test_fraction · n_p)` in
/// both modes.
pub fn bootstrap_ensemble<F, M>(
    d: &Dataset,
    fit_fn: F,
    n_e: usize,
    test_fraction: f64,
    mode: ResampleMode,
    seed: u64,
) -> Result<EnsembleResult>
where
    F: Fn(&Dataset) -> Result<M> + Sync,
    M: Predictor + FlatParams,
{
    if n_e == 0 {
        return Err(Error::param("ensemble needs at least one member"));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::param(format!("test_fraction must lie in [0, 1), got {test_fraction}")));
    }
    let n_p = d.n_samples();
    let n_test = (test_fraction * n_p as f64).round() as usize;
    if n_test >= n_p {
        return Err(Error::param("test_fraction leaves no training rows"));
    }
    if mode == ResampleMode::Split && n_test == 0 {
        return Err(Error::param("split mode needs at least one test row"));
    }

    let members: Vec<(f64, f64, Vec<f64>, SplitIndices)> = (0..n_e)
        .into_par_iter()
        .map(|j| -> Result<_> {
            let mut rng = member_rng(seed, j);
            let split = member_split(n_p, n_test, mode, &mut rng)?;
            let (train, test) = split.apply(d)?;
            let model = fit_fn(&train)?;
            let j_in = mse(train.targets(), &model.predict(train.inputs())?)?;
            let j_out = mse(test.targets(), &model.predict(test.inputs())?)?;
            Ok((j_in, j_out, model.params(), split))
        })
        .collect::<Result<_>>()?;

    let n_w = members[0].2.len();
    let mut population = DMatrix::zeros(n_w, n_e);
    let mut in_sample = Vec::with_capacity(n_e);
    let mut out_sample = Vec::with_capacity(n_e);
    let mut splits = Vec::with_capacity(n_e);
    for (j, (ji, jo, w, s)) in members.into_iter().enumerate() {
        check_dim("member weight count", n_w, w.len())?;
        population.column_mut(j).copy_from_slice(&w);
        in_sample.push(ji);
        out_sample.push(jo);
        splits.push(s);
    }
    Ok(EnsembleResult { in_sample_mse: in_sample, out_sample_mse: out_sample, weight_population: population, splits })
}

/// Bagged prediction: member mean and `sqrt(J_i_mean + Var_model)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub mean: DMatrix<f64>,
    /// Standard deviation of the combined predictive distribution (1σ).
    pub uncertainty: DMatrix<f64>,
}

/// Evaluates every weight column on `xg` and combines them. The model
/// variance is the population variance of member predictions; it is
/// treated as independent of the data noise estimated by `j_i_mean`.
pub fn ensemble_predict<P>(
    xg: &DMatrix<f64>,
    weight_population: &DMatrix<f64>,
    j_i_mean: f64,
    predict_fn: P,
) -> Result<EnsemblePrediction>
where
    P: Fn(&DMatrix<f64>, &[f64]) -> Result<DMatrix<f64>>,
{
    let n_e = weight_population.ncols();
    if n_e == 0 {
        return Err(Error::param("empty weight population"));
    }
    if !(j_i_mean >= 0.0) {
        return Err(Error::param(format!("in-sample error must be >= 0, got {j_i_mean}")));
    }
    let preds: Vec<DMatrix<f64>> = (0..n_e)
        .map(|j| {
            let w: Vec<f64> = weight_population.column(j).iter().copied().collect();
            predict_fn(xg, &w)
        })
        .collect::<Result<_>>()?;
    let shape = preds[0].shape();
    for p in &preds {
        check_dim("member prediction rows", shape.0, p.nrows())?;
        check_dim("member prediction columns", shape.1, p.ncols())?;
    }
    let mut mean_m = DMatrix::zeros(shape.0, shape.1);
    let mut unc = DMatrix::zeros(shape.0, shape.1);
    let mut vals = vec![0.0; n_e];
    for i in 0..shape.0 {
        for c in 0..shape.1 {
            for (v, p) in vals.iter_mut().zip(&preds) {
                *v = p[(i, c)];
            }
            let m = mean(&vals);
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_e as f64;
            mean_m[(i, c)] = m;
            unc[(i, c)] = (j_i_mean + var).sqrt();
        }
    }
    Ok(EnsemblePrediction { mean: mean_m, uncertainty: unc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub per_fold_mse: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub folds: Vec<SplitIndices>,
}

/// K disjoint test folds covering `0..n_p`. The first `n_p mod K` folds hold
/// one extra row. Training indices are the ascending complement.
pub fn kfold_indices(n_p: usize, k: usize, seed: u64, shuffle: bool) -> Result<Vec<SplitIndices>> {
    if k < 2 || k > n_p {
        return Err(Error::param(format!("K must lie in 2..={n_p}, got {k}")));
    }
    let mut order: Vec<usize> = (0..n_p).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let base = n_p / k;
    let extra = n_p % k;
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test = order[start..start + size].to_vec();
        let mut in_test = vec![false; n_p];
        test.iter().for_each(|&i| in_test[i] = true);
        let train = (0..n_p).filter(|&i| !in_test[i]).collect();
        folds.push(SplitIndices { train, test });
        start += size;
    }
    Ok(folds)
}

/// Fits once per fold and reports the out-of-sample MSE of each.
pub fn kfold_cv<F, M>(d: &Dataset, fit_fn: F, k: usize, seed: u64, shuffle: bool) -> Result<CvReport>
where
    F: Fn(&Dataset) -> Result<M> + Sync,
    M: Predictor,
{
    let folds = kfold_indices(d.n_samples(), k, seed, shuffle)?;
    let per_fold: Vec<f64> = folds
        .par_iter()
        .map(|s| -> Result<f64> {
            let (train, test) = s.apply(d)?;
            let model = fit_fn(&train)?;
            mse(test.targets(), &model.predict(test.inputs())?)
        })
        .collect::<Result<_>>()?;
    Ok(CvReport { mean: mean(&per_fold), std: population_std(&per_fold), per_fold_mse: per_fold, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes_balance() {
        let folds = kfold_indices(60, 5, 1, true).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 12 && f.train.len() == 48));
        let folds = kfold_indices(7, 3, 1, false).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        assert_eq!(folds[0].test, vec![0, 1, 2]);
    }

    #[test]
    fn k_out_of_range() {
        assert!(kfold_indices(10, 1, 0, true).is_err());
        assert!(kfold_indices(10, 11, 0, true).is_err());
    }

    #[test]
    fn two_member_band() {
        // Members predict -1 and +1 everywhere: mean 0, population std 1.
        let pop = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let xg = DMatrix::zeros(3, 1);
        let p = ensemble_predict(&xg, &pop, 0.0, |x, w| Ok(DMatrix::from_element(x.nrows(), 1, w[0]))).unwrap();
        assert!(p.mean.iter().all(|&v| v == 0.0));
        assert!(p.uncertainty.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_members_leave_noise_only() {
        let pop = DMatrix::from_row_slice(1, 3, &[2.0, 2.0, 2.0]);
        let xg = DMatrix::zeros(2, 1);
        let p = ensemble_predict(&xg, &pop, 0.25, |x, w| Ok(DMatrix::from_element(x.nrows(), 1, w[0]))).unwrap();
        assert!(p.uncertainty.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn empty_population_is_rejected() {
        let pop = DMatrix::zeros(2, 0);
        assert!(ensemble_predict(&DMatrix::zeros(1, 1), &pop, 0.0, |_, _| Ok(DMatrix::zeros(1, 1))).is_err());
    }

    #[test]
    fn replacement_draws_leave_out_rows() {
        let mut rng = member_rng(5, 0);
        let s = member_split(20, 0, ResampleMode::Replacement, &mut rng).unwrap();
        assert_eq!(s.train.len(), 20);
        assert!(!s.test.is_empty());
        assert!(s.test.iter().all(|t| !s.train.contains(t)));
    }

    #[test]
    fn std_is_population() {
        assert_eq!(population_std(&[1.0, 3.0]), 1.0);
    }
}
