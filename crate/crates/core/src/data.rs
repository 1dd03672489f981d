//! Datasets, CSV ingestion, splitting and the synthetic benchmark generator.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};

/// Paired inputs (`n_p × n_x`) and targets (`n_p × n_y`) with aligned rows.
///
/// Construction checks row alignment and finiteness. Zero-row datasets are
/// allowed so that an empty test split or an unconditioned prior can be
/// expressed; ingestion paths (`load_csv`, the generator) reject them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        check_dim("dataset rows (targets vs inputs)", inputs.nrows(), targets.nrows())?;
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("dataset contains non-finite entries".into()));
        }
        Ok(Self { inputs, targets })
    }

    /// Scalar-in, scalar-out convenience constructor.
    pub fn from_xy(x: &[f64], y: &[f64]) -> Result<Self> {
        check_dim("dataset rows (targets vs inputs)", x.len(), y.len())?;
        Self::new(DMatrix::from_column_slice(x.len(), 1, x), DMatrix::from_column_slice(y.len(), 1, y))
    }

    pub fn empty(n_x: usize, n_y: usize) -> Self {
        Self { inputs: DMatrix::zeros(0, n_x), targets: DMatrix::zeros(0, n_y) }
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.targets.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples() == 0
    }

    /// Rows in the given order; duplicates are allowed.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_samples()) {
            return Err(Error::InvalidParameter(format!(
                "row index {bad} out of range for {} samples",
                self.n_samples()
            )));
        }
        Ok(Self { inputs: self.inputs.select_rows(rows), targets: self.targets.select_rows(rows) })
    }
}

/// Row indices of a train/test division.
///
/// In partition mode the two lists are disjoint and cover every row. In
/// bootstrap-with-replacement mode `train` may repeat rows and `test` holds
/// the rows that were never drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn apply(&self, d: &Dataset) -> Result<(Dataset, Dataset)> {
        Ok((d.select(&self.train)?, d.select(&self.test)?))
    }
}

/// Anything that maps an input matrix to an output matrix row by row.
pub trait Predictor {
    /// Predicts one output row per input row.
    fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// A predictor whose parameters can be read and written as one flat vector.
pub trait FlatParams {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    fn n_params(&self) -> usize {
        self.params().len()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn column_index(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

/// Reads a dataset from CSV. Columns `x0..` become inputs and `y0..` become
/// targets, ordered by their numeric suffix; other columns are ignored.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let (x, y) = parse_csv(reader, true)?;
    Dataset::new(x, y)
}

/// Reads only the `x<i>` columns; target columns may be absent.
pub fn load_inputs_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_inputs_csv(file)
}

pub fn read_inputs_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    Ok(parse_csv(reader, false)?.0)
}

fn parse_csv<R: Read>(reader: R, need_targets: bool) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut x_cols: Vec<(usize, usize)> = Vec::new();
    let mut y_cols: Vec<(usize, usize)> = Vec::new();
    for (pos, h) in headers.iter().enumerate() {
        if let Some(i) = column_index(h, 'x') {
            x_cols.push((i, pos));
        } else if let Some(i) = column_index(h, 'y') {
            y_cols.push((i, pos));
        }
    }
    if x_cols.is_empty() || (need_targets && y_cols.is_empty()) {
        let msg = if need_targets {
            "header must contain at least one x<i> and one y<i> column"
        } else {
            "header must contain at least one x<i> column"
        };
        return Err(Error::InvalidData(msg.into()));
    }
    if !need_targets {
        y_cols.clear();
    }
    x_cols.sort_unstable();
    y_cols.sort_unstable();
    for (prefix, cols) in [('x', &x_cols), ('y', &y_cols)] {
        for (expected, &(found, _)) in cols.iter().enumerate() {
            if expected != found {
                return Err(Error::InvalidData(format!(
                    "columns {prefix}0..{prefix}{} must be contiguous; missing {prefix}{expected}",
                    cols.len() - 1
                )));
            }
        }
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        let cell = |pos: usize| -> Result<f64> {
            let raw = record.get(pos).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::BadCell { row, column: headers[pos].clone(), value: raw.to_string() }),
            }
        };
        for &(_, pos) in &x_cols {
            xs.push(cell(pos)?);
        }
        for &(_, pos) in &y_cols {
            ys.push(cell(pos)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidData("csv has no data rows".into()));
    }
    Ok((DMatrix::from_row_slice(n, x_cols.len(), &xs), DMatrix::from_row_slice(n, y_cols.len(), &ys)))
}

/// Formats a value with 17 significant digits so it parses back to the same
/// `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> =
        (0..d.n_inputs()).map(|i| format!("x{i}")).chain((0..d.n_outputs()).map(|i| format!("y{i}"))).collect();
    w.write_record(&header)?;
    for r in 0..d.n_samples() {
        let row: Vec<String> = d.inputs.row(r).iter().chain(d.targets.row(r).iter()).map(|&v| format_f64(v)).collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_csv(d, std::io::BufWriter::new(file))
}

/// Index-level split used by [`train_test_split`].
pub fn train_test_indices(n_p: usize, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::param(format!("test_fraction must lie in [0, 1), got {test_fraction}")));
    }
    let n_test = (test_fraction * n_p as f64).round() as usize;
    if n_test >= n_p {
        return Err(Error::param(format!("test_fraction {test_fraction} leaves no training rows out of {n_p}")));
    }
    let mut perm: Vec<usize> = (0..n_p).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = perm[..n_test].to_vec();
    let train = perm[n_test..].to_vec();
    Ok(SplitIndices { train, test })
}

/// Random disjoint split; the test part has `round(test_fraction · n_p)` rows.
pub fn train_test_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    train_test_indices(d.n_samples(), test_fraction, seed)?.apply(d)
}

/// Constants of the synthetic noisy-curve generator.
pub mod fig2 {
    /// Sampling interval of the scalar input.
    pub const X_MIN: f64 = -1.0;
    pub const X_MAX: f64 = 1.0;
    /// Open interval left without samples.
    pub const GAP: (f64, f64) = (0.3, 0.6);
    /// Standard deviation of the additive Gaussian noise.
    pub const NOISE_STD: f64 = 0.3;
    /// Fraction of rows turned into outliers, rounded to the nearest count.
    pub const OUTLIER_RATE: f64 = 0.05;
    /// Outliers are shifted by `±OUTLIER_SHIFT · (1 + u)`, `u ~ U[0, 1)`.
    pub const OUTLIER_SHIFT: f64 = 1.5;
    pub const MIN_SAMPLES: usize = 10;

    /// Smooth reference curve underlying the samples.
    pub fn reference(x: f64) -> f64 {
        (std::f64::consts::PI * x).sin() + 0.5 * x
    }

    pub fn outlier_count(n_p: usize) -> usize {
        (OUTLIER_RATE * n_p as f64).round() as usize
    }
}

/// Synthetic noisy curve with a data gap and a few outliers.
pub fn generate_fig2_like(n_p: usize, seed: u64) -> Result<Dataset> {
    generate_fig2_like_flagged(n_p, seed).map(|(d, _)| d)
}

/// Same as [`generate_fig2_like`], also returning the outlier rows (sorted).
pub fn generate_fig2_like_flagged(n_p: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    use fig2::*;
    if n_p < MIN_SAMPLES {
        return Err(Error::param(format!("generator needs at least {MIN_SAMPLES} samples, got {n_p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap_width = GAP.1 - GAP.0;
    let span = (X_MAX - X_MIN) - gap_width;
    let mut x: Vec<f64> = (0..n_p)
        .map(|_| {
            let u = X_MIN + rng.random::<f64>() * span;
            if u <= GAP.0 {
                u
            } else {
                u + gap_width
            }
        })
        .collect();
    x.sort_by(f64::total_cmp);

    let noise = Normal::new(0.0, NOISE_STD).expect("valid noise std");
    let mut y: Vec<f64> = x.iter().map(|&xi| reference(xi) + noise.sample(&mut rng)).collect();

    let mut outliers = rand::seq::index::sample(&mut rng, n_p, outlier_count(n_p)).into_vec();
    outliers.sort_unstable();
    for &i in &outliers {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        y[i] += sign * OUTLIER_SHIFT * (1.0 + rng.random::<f64>());
    }
    Ok((Dataset::from_xy(&x, &y)?, outliers))
}
