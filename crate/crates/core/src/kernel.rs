//! RBF kernel machinery shared by kPCA and the SVMs.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    gamma: f64,
}

impl KernelParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(Self { gamma })
        } else {
            Err(Error::Precondition(format!(
                "rbf gamma must be positive and finite, got {gamma}"
            )))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum();
        (-self.gamma * d2).exp()
    }
}

/// `K[i][j] = exp(-gamma * ||x_i - y_j||^2)`.
pub fn rbf_kernel_matrix(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    params: KernelParams,
) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "kernel inputs have {} and {} columns",
            x.ncols(),
            y.ncols()
        )));
    }
    let xs = x.as_standard_layout();
    let ys = y.as_standard_layout();
    let (n, m) = (x.nrows(), y.nrows());
    let mut k = Array2::zeros((n, m));
    k.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let xi = xs.row(i);
            let xi = xi.as_slice().expect("standard layout row");
            for (j, out) in row.iter_mut().enumerate() {
                let yj = ys.row(j);
                *out = params.eval(xi, yj.as_slice().expect("standard layout row"));
            }
        });
    Ok(k)
}

/// Gram matrix of a point set against itself; exactly symmetric with unit diagonal.
pub fn rbf_gram(x: ArrayView2<'_, f64>, params: KernelParams) -> Array2<f64> {
    let mut k = rbf_kernel_matrix(x, x, params).expect("same matrix");
    let n = k.nrows();
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in 0..i {
            k[[i, j]] = k[[j, i]];
        }
    }
    k
}

/// Scale heuristic `gamma = 1 / (D * mean per-column population variance)`.
pub fn default_gamma(x: ArrayView2<'_, f64>) -> Result<KernelParams> {
    let (n, d) = x.dim();
    if n < 2 || d == 0 {
        return Err(Error::Precondition(format!(
            "gamma heuristic needs at least 2 rows and 1 column, got {n}x{d}"
        )));
    }
    let var = x.var_axis(Axis(0), 0.0);
    let total = var.sum() / d as f64;
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    KernelParams::new(1.0 / (d as f64 * total))
}

/// Column means and grand mean of an uncentered training Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCentering {
    col_means: Array1<f64>,
    grand_mean: f64,
}

impl KernelCentering {
    pub fn from_train(k_train: &Array2<f64>) -> Self {
        let col_means = k_train
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(k_train.ncols()));
        let grand_mean = col_means.mean().unwrap_or(0.0);
        Self {
            col_means,
            grand_mean,
        }
    }

    pub fn len(&self) -> usize {
        self.col_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.col_means.is_empty()
    }

    /// Centers rows of a cross kernel `K(X_new, X_train)` with the training statistics.
    pub fn apply(&self, k_test: &Array2<f64>) -> Result<Array2<f64>> {
        if k_test.ncols() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "cross kernel has {} columns, training set has {}",
                k_test.ncols(),
                self.len()
            )));
        }
        let mut out = k_test.clone();
        for mut row in out.rows_mut() {
            let row_mean = row.mean().unwrap_or(0.0);
            for (v, cm) in row.iter_mut().zip(&self.col_means) {
                *v = *v - cm - row_mean + self.grand_mean;
            }
        }
        Ok(out)
    }
}

/// Double-centers a symmetric Gram matrix: `K - 1K - K1 + 1K1`.
pub fn center_kernel(k: &Array2<f64>) -> Result<Array2<f64>> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "kernel must be square, got {:?}",
            k.dim()
        )));
    }
    let dev = k
        .iter()
        .zip(k.t().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if dev > SYMMETRY_TOL {
        return Err(Error::Asymmetric(dev));
    }
    let stats = KernelCentering::from_train(k);
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = k[[i, j]] - stats.col_means[i] - stats.col_means[j] + stats.grand_mean;
        }
    }
    // symmetrize away round-off so downstream eigensolvers see an exactly symmetric matrix
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (out[[i, j]] + out[[j, i]]);
            out[[i, j]] = avg;
            out[[j, i]] = avg;
        }
    }
    Ok(out)
}

/// Centers a cross kernel `K_test` (M×N) with the statistics of the uncentered `K_train` (N×N).
pub fn center_kernel_cross(k_test: &Array2<f64>, k_train: &Array2<f64>) -> Result<Array2<f64>> {
    if k_train.nrows() != k_train.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "training kernel must be square, got {:?}",
            k_train.dim()
        )));
    }
    KernelCentering::from_train(k_train).apply(k_test)
}

/// Per-dimension standardization fitted on a training split.
///
/// Constant columns are centered but not scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mean = x
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(x.ncols()));
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "standardizer fitted on {} columns, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok((&x - &self.mean) / &self.scale)
    }
}
