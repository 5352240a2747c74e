//! Training data container, train/test splitting, and train-statistic
//! standardization.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A design matrix `X` (n rows, p columns) with a response vector `y`.
///
/// All estimators in this crate consume a `Dataset`. Entries must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    /// Present when the dataset was produced by [`standardize`].
    standardization: Option<StandardizeStats>,
}

/// Per-column statistics recorded when standardizing with train-set moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    /// Original (pre-drop) indices of zero-variance columns removed from
    /// both splits.
    pub dropped_columns: Vec<usize>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Data(format!(
                "design matrix must be nonempty, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite entry in X or y".into()));
        }
        Ok(Self {
            x,
            y,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Row `i` of the design matrix as a column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn standardization(&self) -> Option<&StandardizeStats> {
        self.standardization.as_ref()
    }

    /// Seeded random split into (train, test); `ratio` is the train fraction.
    pub fn split_random(&self, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        self.split_by_order(&idx, ratio)
    }

    /// Sequential split: the first `ratio` fraction of rows (in stored order)
    /// becomes the train set. Intended for time-ordered data.
    pub fn split_sequential(&self, ratio: f64) -> Result<(Dataset, Dataset)> {
        let idx: Vec<usize> = (0..self.n()).collect();
        self.split_by_order(&idx, ratio)
    }

    fn split_by_order(&self, order: &[usize], ratio: f64) -> Result<(Dataset, Dataset)> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Parameter(format!(
                "split ratio must lie in (0,1), got {ratio}"
            )));
        }
        let n_train = ((self.n() as f64) * ratio).round() as usize;
        if n_train == 0 || n_train == self.n() {
            return Err(Error::Data(format!(
                "split ratio {ratio} leaves an empty train or test set for n={}",
                self.n()
            )));
        }
        let take = |ids: &[usize]| -> Dataset {
            let x = DMatrix::from_fn(ids.len(), self.p(), |i, j| self.x[(ids[i], j)]);
            let y = DVector::from_fn(ids.len(), |i, _| self.y[ids[i]]);
            Dataset {
                x,
                y,
                standardization: None,
            }
        };
        Ok((take(&order[..n_train]), take(&order[n_train..])))
    }
}

/// Standardize `train` and `test` using the train set's column means and
/// standard deviations only; the target is standardized likewise.
///
/// Zero-variance train columns are dropped from both sets and recorded in
/// the returned stats.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, StandardizeStats)> {
    if train.p() != test.p() {
        return Err(Error::Dimension(format!(
            "train has p={} but test has p={}",
            train.p(),
            test.p()
        )));
    }
    let n = train.n() as f64;
    let p = train.p();
    let mut means = Vec::with_capacity(p);
    let mut stds = Vec::with_capacity(p);
    let mut keep = Vec::with_capacity(p);
    let mut dropped = Vec::new();
    for j in 0..p {
        let col = train.x().column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            dropped.push(j);
        } else {
            keep.push(j);
            means.push(mean);
            stds.push(std);
        }
    }
    if keep.is_empty() {
        return Err(Error::Data("all columns have zero variance".into()));
    }
    let ty_mean = train.y().sum() / n;
    let ty_var = train
        .y()
        .iter()
        .map(|v| (v - ty_mean) * (v - ty_mean))
        .sum::<f64>()
        / n;
    let ty_std = ty_var.sqrt();
    if ty_std <= 1e-12 * ty_mean.abs().max(1.0) {
        return Err(Error::Data("target is constant on the train set".into()));
    }

    let transform = |d: &Dataset| -> Dataset {
        let x = DMatrix::from_fn(d.n(), keep.len(), |i, jj| {
            (d.x()[(i, keep[jj])] - means[jj]) / stds[jj]
        });
        let y = DVector::from_fn(d.n(), |i, _| (d.y()[i] - ty_mean) / ty_std);
        Dataset {
            x,
            y,
            standardization: None,
        }
    };
    let stats = StandardizeStats {
        feature_means: means.clone(),
        feature_stds: stds.clone(),
        target_mean: ty_mean,
        target_std: ty_std,
        dropped_columns: dropped,
    };
    let mut tr = transform(train);
    let mut te = transform(test);
    tr.standardization = Some(stats.clone());
    te.standardization = Some(stats.clone());
    Ok((tr, te, stats))
}
