//! Simulated benchmark problems, the bundled motorcycle data and CSV I/O.

use std::f64::consts::PI;
use std::path::Path;

use faer::Mat;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predict::PredictiveResult;

const MCYCLE_CSV: &str = include_str!("../data/mcycle.csv");

/// Noise-free mean and noise standard deviation of a simulated observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub mean: Vec<f64>,
    pub noise_sd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    pub truth: Option<Truth>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Mat<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::input(format!("{} input rows but {} targets", x.nrows(), y.len())));
        }
        Ok(Self { name: name.into(), x, y, truth: None, seed: None })
    }

    pub fn from_columns(name: impl Into<String>, x: &[f64], y: Vec<f64>) -> Result<Self> {
        Self::new(name, Mat::from_fn(x.len(), 1, |i, _| x[i]), y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = Mat::from_fn(idx.len(), self.dim(), |i, j| self.x[(idx[i], j)]);
        let truth = self.truth.as_ref().map(|t| Truth {
            mean: idx.iter().map(|&i| t.mean[i]).collect(),
            noise_sd: idx.iter().map(|&i| t.noise_sd[i]).collect(),
        });
        Dataset { name: self.name.clone(), x, y: idx.iter().map(|&i| self.y[i]).collect(), truth, seed: self.seed }
    }
}

/// `N(x | mu, s)` with `s` the standard deviation.
pub fn normal_pdf(x: f64, mu: f64, s: f64) -> f64 {
    let z = (x - mu) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
}

/// Generating functions of a simulated problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimSuite {
    Sim1,
    Sim2,
}

impl SimSuite {
    pub fn signal_sd(self, x: f64) -> f64 {
        match self {
            SimSuite::Sim1 => normal_pdf(x, -2.5, 1.0) + normal_pdf(x, 2.5, 1.0),
            SimSuite::Sim2 => (2.0 * (0.2 * x).sin()).exp(),
        }
    }

    pub fn noise_sd(self, x: f64) -> f64 {
        match self {
            SimSuite::Sim1 => 0.08 + normal_pdf(x, -8.0, 3.0) + normal_pdf(x, 8.0, 3.0),
            SimSuite::Sim2 => (0.75 * (0.5 * x + 1.0).sin()).exp() + 0.1,
        }
    }

    pub fn mean(self, x: f64) -> f64 {
        self.signal_sd(x) * x.sin()
    }

    pub fn default_train_size(self) -> usize {
        match self {
            SimSuite::Sim1 => 200,
            SimSuite::Sim2 => 150,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimSuite::Sim1 => "sim1",
            SimSuite::Sim2 => "sim2",
        }
    }

    /// Training inputs `U(−8, 8)` with noisy targets, and a noiseless test
    /// grid of 1000 points on `[−8, 8]`.
    pub fn generate(self, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if n_train == 0 {
            return Err(Error::input("n_train must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n_train).map(|_| rng.random_range(-8.0..8.0)).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let e: f64 = StandardNormal.sample(&mut rng);
                self.mean(x) + self.noise_sd(x) * e
            })
            .collect();
        let mut train = Dataset::from_columns(format!("{}-train", self.name()), &xs, y)?;
        train.truth = Some(Truth { mean: xs.iter().map(|&x| self.mean(x)).collect(), noise_sd: xs.iter().map(|&x| self.noise_sd(x)).collect() });
        train.seed = Some(seed);

        let grid: Vec<f64> = (0..1000).map(|k| -8.0 + 16.0 * k as f64 / 999.0).collect();
        let mean: Vec<f64> = grid.iter().map(|&x| self.mean(x)).collect();
        let mut test = Dataset::from_columns(format!("{}-test", self.name()), &grid, mean.clone())?;
        test.truth = Some(Truth { mean, noise_sd: grid.iter().map(|&x| self.noise_sd(x)).collect() });
        test.seed = Some(seed);
        Ok((train, test))
    }
}

pub fn generate_sim1(n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    SimSuite::Sim1.generate(n_train, seed)
}

pub fn generate_sim2(n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    SimSuite::Sim2.generate(n_train, seed)
}

/// A column selected by zero-based index or by header name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl From<&str> for Column {
    fn from(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.trim().to_string()),
        }
    }
}

impl From<usize> for Column {
    fn from(i: usize) -> Self {
        Column::Index(i)
    }
}

fn resolve(col: &Column, header: Option<&csv::StringRecord>, width: usize) -> Result<usize> {
    let idx = match col {
        Column::Index(i) => Some(*i),
        Column::Name(name) => header.and_then(|h| h.iter().position(|c| c.trim() == name)),
    };
    match idx {
        Some(i) if i < width => Ok(i),
        _ => Err(Error::Schema(format!("column {col:?} not found"))),
    }
}

/// Parse CSV text into a dataset. Lines are numbered from 1, header included.
pub fn parse_csv(name: &str, text: &str, x_columns: &[Column], y_column: &Column, has_header: bool) -> Result<Dataset> {
    if x_columns.is_empty() {
        return Err(Error::Schema("at least one input column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = rdr.records().enumerate();
    let header = if has_header {
        match records.next() {
            Some((_, r)) => Some(r.map_err(|e| Error::Format { line: 1, msg: e.to_string() })?),
            None => return Err(Error::Format { line: 1, msg: "empty file".into() }),
        }
    } else {
        None
    };
    let mut cols: Option<(Vec<usize>, usize)> = None;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for (k, rec) in records {
        let line = k + 1;
        let rec = rec.map_err(|e| Error::Format { line, msg: e.to_string() })?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if cols.is_none() {
            let width = header.as_ref().map_or(rec.len(), |h| h.len().max(rec.len()));
            let xi = x_columns.iter().map(|c| resolve(c, header.as_ref(), width)).collect::<Result<Vec<_>>>()?;
            cols = Some((xi, resolve(y_column, header.as_ref(), width)?));
        }
        let (xi, yi) = cols.as_ref().unwrap();
        let field = |i: usize| -> Result<f64> {
            let s = rec.get(i).ok_or_else(|| Error::Format { line, msg: format!("missing field {i}") })?;
            s.trim().parse::<f64>().map_err(|_| Error::Format { line, msg: format!("cannot parse {s:?} as a number") })
        };
        xs.push(xi.iter().map(|&i| field(i)).collect::<Result<_>>()?);
        y.push(field(*yi)?);
    }
    if y.is_empty() {
        return Err(Error::Format { line: 1, msg: "no data rows".into() });
    }
    let d = x_columns.len();
    Dataset::new(name, Mat::from_fn(y.len(), d, |i, j| xs[i][j]), y)
}

pub fn load_csv(path: impl AsRef<Path>, x_columns: &[Column], y_column: &Column, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path.file_stem().map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
    parse_csv(&name, &text, x_columns, y_column, has_header)
}

/// Write `x0, x1, …, y` with a header row, followed by `mean, noise_sd`
/// when the dataset carries the generating truth.
pub fn write_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if ds.truth.is_some() {
        header.extend(["mean".into(), "noise_sd".into()]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = (0..ds.dim()).map(|j| ds.x[(i, j)].to_string()).collect();
        row.push(ds.y[i].to_string());
        if let Some(t) = &ds.truth {
            row.extend([t.mean[i].to_string(), t.noise_sd[i].to_string()]);
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read only input columns from a CSV file.
pub fn load_inputs(path: impl AsRef<Path>, x_columns: &[Column], has_header: bool) -> Result<Mat<f64>> {
    let first = x_columns.first().ok_or_else(|| Error::Schema("at least one input column is required".into()))?;
    Ok(load_csv(path, x_columns, first, has_header)?.x)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format { line: 0, msg: format!("{other:?}") },
    }
}

/// The motorcycle crash data: time (ms) against head acceleration (g), 133 rows.
pub fn motorcycle() -> Dataset {
    parse_csv("motorcycle", MCYCLE_CSV, &[Column::Index(0)], &Column::Index(1), true).expect("bundled data parses")
}

/// Affine per-column standardization of inputs and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self { x_mean: vec![0.0; dim], x_sd: vec![1.0; dim], y_mean: 0.0, y_sd: 1.0 }
    }

    /// Column means and sample standard deviations of `ds`. Constant columns
    /// are left untransformed.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.len() < 2 {
            return Err(Error::input("standardization needs at least two rows"));
        }
        let mut x_mean = Vec::with_capacity(ds.dim());
        let mut x_sd = Vec::with_capacity(ds.dim());
        for j in 0..ds.dim() {
            let (m, s) = mean_sd((0..ds.len()).map(|i| ds.x[(i, j)]));
            if s > 0.0 && s.is_finite() {
                x_mean.push(m);
                x_sd.push(s);
            } else {
                warn!("input column {j} has zero variance; left untransformed");
                x_mean.push(0.0);
                x_sd.push(1.0);
            }
        }
        let (mut y_mean, mut y_sd) = mean_sd(ds.y.iter().copied());
        if !(y_sd > 0.0 && y_sd.is_finite()) {
            warn!("target has zero variance; left untransformed");
            y_mean = 0.0;
            y_sd = 1.0;
        }
        Ok(Self { x_mean, x_sd, y_mean, y_sd })
    }

    pub fn transform_x(&self, x: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.x_mean[j]) / self.x_sd[j])
    }

    pub fn transform_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.y_mean) / self.y_sd).collect()
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        Dataset {
            name: ds.name.clone(),
            x: self.transform_x(&ds.x),
            y: self.transform_y(&ds.y),
            truth: ds.truth.as_ref().map(|t| Truth {
                mean: self.transform_y(&t.mean),
                noise_sd: t.noise_sd.iter().map(|s| s / self.y_sd).collect(),
            }),
            seed: ds.seed,
        }
    }

    pub fn inverse_x(&self, x: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * self.x_sd[j] + self.x_mean[j])
    }

    pub fn inverse_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.y_sd + self.y_mean).collect()
    }

    /// Map a prediction made on the standardized scale back to the original scale.
    pub fn inverse_prediction(&self, p: &PredictiveResult) -> PredictiveResult {
        PredictiveResult::new(p.mean * self.y_sd + self.y_mean, p.var * self.y_sd * self.y_sd)
    }

    /// Added to a standardized-scale log density to get the original-scale one.
    pub fn log_jacobian(&self) -> f64 {
        -self.y_sd.ln()
    }
}

pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardization)> {
    let t = Standardization::fit(ds)?;
    Ok((t.apply(ds), t))
}
