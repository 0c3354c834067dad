//! Datasets: correlated synthetic designs, CSV ingestion, z-normalisation
//! and seeded splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::Targets;
use crate::rng::{self, purpose};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn check(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::Data(format!("split index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data("split does not cover every row".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Targets,
    pub feature_names: Vec<String>,
    /// `false` for one-hot indicator columns, which are never rescaled.
    pub continuous: Vec<bool>,
    /// Training-set statistics; identity (0, 1) until [`znormalize`] runs.
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub normalized: bool,
    pub split: Split,
}

impl Dataset {
    /// Wraps raw arrays; every row starts in the training split.
    pub fn new(x: Array2<f64>, y: Targets) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                what: "target count",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        let p = x.ncols();
        Ok(Self {
            split: Split {
                train: (0..x.nrows()).collect(),
                ..Default::default()
            },
            feature_names: (0..p).map(|k| format!("x{k}")).collect(),
            continuous: vec![true; p],
            feature_means: vec![0.0; p],
            feature_stds: vec![1.0; p],
            normalized: false,
            x,
            y,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn rows(&self, idx: &[usize]) -> (Array2<f64>, Targets) {
        (self.x.select(Axis(0), idx), self.y.subset(idx))
    }

    /// Applies the stored statistics to new data with the same columns.
    pub fn normalize_external(&self, x: &mut Array2<f64>) -> Result<()> {
        if x.ncols() != self.n_features() {
            return Err(Error::Dimension {
                what: "feature count",
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        apply_stats(x, &self.feature_means, &self.feature_stds, &self.continuous);
        Ok(())
    }

    pub fn denormalize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (k, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            if self.continuous[k] {
                let (m, s) = (self.feature_means[k], self.feature_stds[k]);
                col.mapv_inplace(|v| v * s + m);
            }
        }
        out
    }

    pub fn sidecar(&self, truth: Option<&TrueSupport>) -> DatasetSidecar {
        DatasetSidecar {
            feature_names: self.feature_names.clone(),
            feature_means: self.feature_means.clone(),
            feature_stds: self.feature_stds.clone(),
            continuous: self.continuous.clone(),
            normalized: self.normalized,
            split: self.split.clone(),
            true_support: truth.cloned(),
        }
    }

    /// Writes the design and targets as a headed CSV with a `target` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.feature_names.clone();
        header.push("target".into());
        w.write_record(&header)?;
        for (n, row) in self.x.outer_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(match &self.y {
                Targets::Regression(y) => format!("{:?}", y[n]),
                Targets::Classes { labels, .. } => labels[n].to_string(),
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn apply_stats(x: &mut Array2<f64>, means: &[f64], stds: &[f64], continuous: &[bool]) {
    for (k, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
        if continuous[k] {
            let (m, s) = (means[k], stds[k]);
            col.mapv_inplace(|v| (v - m) / s);
        }
    }
}

/// Normalisation statistics and scoring metadata stored next to exported data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub feature_names: Vec<String>,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub continuous: Vec<bool>,
    pub normalized: bool,
    pub split: Split,
    pub true_support: Option<TrueSupport>,
}

/// Zero-based indices of the nonzero coefficients of the generating model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueSupport {
    pub num_features: usize,
    pub indices: Vec<usize>,
}

impl TrueSupport {
    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub correlation: f64,
    pub support_size: usize,
    pub noise_std: f64,
    /// Extra held-out rows drawn from the same law.
    pub n_test: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_samples: usize, n_features: usize, correlation: f64, support_size: usize) -> Self {
        Self {
            n_samples,
            n_features,
            correlation,
            support_size,
            noise_std: 0.5,
            n_test: 10_000,
            train_fraction: 0.8,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 || self.n_features == 0 || self.support_size == 0 {
            return Err(Error::Config(
                "synthetic data needs n >= 2, p >= 1 and k >= 1".into(),
            ));
        }
        if self.support_size > self.n_features {
            return Err(Error::Config(format!(
                "support size {} exceeds feature count {}",
                self.support_size, self.n_features
            )));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::Config(format!(
                "correlation must lie in [0, 1), got {}",
                self.correlation
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Equi-spaced support: zero-based `(r − 1)·⌊p/k⌋` for `r = 1..=k`.
pub fn equispaced_support(p: usize, k: usize) -> TrueSupport {
    let gap = p / k;
    TrueSupport {
        num_features: p,
        indices: (0..k).map(|r| r * gap).collect(),
    }
}

/// Fills `out` with rows of `N(0, Σ)`, `Σ_ij = σ^|i−j|`, via the AR(1)
/// recurrence `x_1 = z_1`, `x_j = σ x_{j−1} + √(1 − σ²) z_j`.
pub fn sample_ar1<R: rand::Rng>(out: &mut Array2<f64>, sigma: f64, rng: &mut R) {
    let innovation = (1.0 - sigma * sigma).sqrt();
    for mut row in out.outer_iter_mut() {
        let mut prev = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            prev = if j == 0 { z } else { sigma * prev + innovation * z };
            *v = prev;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, TrueSupport)> {
    spec.validate()?;
    let (n, p, nt) = (spec.n_samples, spec.n_features, spec.n_test);
    let truth = equispaced_support(p, spec.support_size);

    let mut fit_rng = rng::child(spec.seed, &[purpose::DATA]);
    let mut test_rng = rng::child(spec.seed, &[purpose::TEST_DATA]);
    let mut fit = Array2::zeros((n, p));
    sample_ar1(&mut fit, spec.correlation, &mut fit_rng);
    let mut test = Array2::zeros((nt, p));
    sample_ar1(&mut test, spec.correlation, &mut test_rng);
    let x = ndarray::concatenate(Axis(0), &[fit.view(), test.view()]).expect("same width");

    let y: Vec<f64> = x
        .outer_iter()
        .enumerate()
        .map(|(row_idx, row)| {
            let signal: f64 = truth.indices.iter().map(|&k| row[k]).sum();
            let rng = if row_idx < n { &mut fit_rng } else { &mut test_rng };
            let eps: f64 = StandardNormal.sample(rng);
            signal + spec.noise_std * eps
        })
        .collect();

    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut ds = Dataset::new(x, Targets::Regression(y))?;
    ds.split = Split {
        train: (0..n_train).collect(),
        validation: (n_train..n).collect(),
        test: (n..n + nt).collect(),
    };
    Ok((ds, truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Regression,
    Classification,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvOptions {
    pub target: String,
    pub categorical: Vec<String>,
    pub task: TargetKind,
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "NaN" | "nan" | "?" | "null")
}

/// Reads a headed, comma-separated file. Declared categorical columns are
/// one-hot encoded with levels in sorted order; classification labels are
/// numbered in sorted order (numerically when every label parses).
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_col = header
        .iter()
        .position(|h| *h == opts.target)
        .ok_or_else(|| Error::Data(format!("target column {:?} not found", opts.target)))?;
    for c in &opts.categorical {
        if !header.contains(c) {
            return Err(Error::Data(format!("categorical column {c:?} not found")));
        }
    }

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        if let Some(col) = fields.iter().position(|f| is_missing(f)) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("missing value in column {:?}", header[col]),
            });
        }
        records.push((line, fields));
    }
    if records.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }

    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != target_col).collect();
    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for &c in &feature_cols {
        if opts.categorical.contains(&header[c]) {
            let set: BTreeSet<&str> = records.iter().map(|(_, f)| f[c].as_str()).collect();
            levels.insert(c, set.into_iter().map(String::from).collect());
        }
    }

    let mut names = Vec::new();
    let mut continuous = Vec::new();
    for &c in &feature_cols {
        match levels.get(&c) {
            Some(lv) => {
                for l in lv {
                    names.push(format!("{}={}", header[c], l));
                    continuous.push(false);
                }
            }
            None => {
                names.push(header[c].clone());
                continuous.push(true);
            }
        }
    }

    let mut x = Array2::zeros((records.len(), names.len()));
    for (n, (line, fields)) in records.iter().enumerate() {
        let mut col = 0;
        for &c in &feature_cols {
            match levels.get(&c) {
                Some(lv) => {
                    let hit = lv.iter().position(|l| *l == fields[c]).expect("level collected");
                    x[[n, col + hit]] = 1.0;
                    col += lv.len();
                }
                None => {
                    x[[n, col]] = fields[c].parse::<f64>().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: *line,
                        msg: format!("cannot parse {:?} in column {:?} as a number", fields[c], header[c]),
                    })?;
                    col += 1;
                }
            }
        }
    }

    let raw_targets: Vec<&str> = records.iter().map(|(_, f)| f[target_col].as_str()).collect();
    let y = match opts.task {
        TargetKind::Regression => {
            let mut y = Vec::with_capacity(raw_targets.len());
            for ((line, _), t) in records.iter().zip(&raw_targets) {
                y.push(t.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    msg: format!("cannot parse target {t:?} as a number"),
                })?);
            }
            Targets::Regression(y)
        }
        TargetKind::Classification => {
            let mut distinct: Vec<&str> = raw_targets.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            if distinct.iter().all(|t| t.parse::<f64>().is_ok()) {
                distinct.sort_by(|a, b| {
                    a.parse::<f64>()
                        .unwrap()
                        .total_cmp(&b.parse::<f64>().unwrap())
                });
            }
            let labels = raw_targets
                .iter()
                .map(|t| distinct.iter().position(|d| d == t).expect("label collected"))
                .collect();
            Targets::Classes { labels, n_classes: distinct.len() }
        }
    };

    let mut ds = Dataset::new(x, y)?;
    ds.feature_names = names;
    ds.continuous = continuous;
    Ok(ds)
}

/// Standardises continuous columns with training-split statistics
/// (population standard deviation; constant columns get std 1).
pub fn znormalize(mut ds: Dataset) -> Result<Dataset> {
    if ds.split.train.is_empty() {
        return Err(Error::Data("cannot normalise without training rows".into()));
    }
    if ds.normalized {
        return Ok(ds);
    }
    let n = ds.split.train.len() as f64;
    for k in 0..ds.n_features() {
        if !ds.continuous[k] {
            continue;
        }
        let col = ds.x.column(k);
        let mean = ds.split.train.iter().map(|&i| col[i]).sum::<f64>() / n;
        let var = ds.split.train.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        ds.feature_means[k] = mean;
        ds.feature_stds[k] = if std > 0.0 { std } else { 1.0 };
    }
    let (means, stds, cont) = (ds.feature_means.clone(), ds.feature_stds.clone(), ds.continuous.clone());
    apply_stats(&mut ds.x, &means, &stds, &cont);
    ds.normalized = true;
    Ok(ds)
}

/// Seeded shuffle followed by a contiguous train/validation/test partition.
pub fn split(mut ds: Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    if fractions.iter().any(|f| *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must sum to 1")));
    }
    let n = ds.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::child(seed, &[purpose::SPLIT]));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Data(format!(
            "split of {n} rows gives an empty part ({n_train}/{n_val}/{n_test})"
        )));
    }
    ds.split = Split {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    Ok(ds)
}
