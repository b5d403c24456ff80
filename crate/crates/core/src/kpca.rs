//! Kernel PCA with an RBF kernel.
//!
//! The fitted model projects points onto the top-`d` eigenvectors of the
//! double-centered training Gram matrix. Coefficients are the eigenvectors
//! scaled by `1/sqrt(lambda)`, so projected training coordinates along
//! component `k` are `sqrt(lambda_k) * v_k` and have variance `lambda_k / N`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::kernel::{center_kernel, rbf_gram, rbf_kernel_matrix, KernelCentering, KernelParams};

pub const DEFAULT_DIM: usize = 3;

/// Relative eigenvalue threshold below which a component is treated as absent.
const RANK_TOL: f64 = 1e-10;
/// Negative eigenvalues smaller than this fraction of the largest are round-off.
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct KpcaModel {
    training: Array2<f64>,
    params: KernelParams,
    centering: KernelCentering,
    eigenvalues: Vec<f64>,
    coefficients: Array2<f64>,
    train_coords: Array2<f64>,
    deficient_dims: usize,
}

impl KpcaModel {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn coefficients(&self) -> &Array2<f64> {
        &self.coefficients
    }

    /// Coordinates of the training points, computed during the fit.
    pub fn train_coords(&self) -> &Array2<f64> {
        &self.train_coords
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    /// Number of requested components whose eigenvalue fell below the rank
    /// threshold; those coordinates are identically zero.
    pub fn deficient_dims(&self) -> usize {
        self.deficient_dims
    }

    pub fn transform(&self, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x_new.ncols() != self.training.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "kpca fitted on {} columns, got {}",
                self.training.ncols(),
                x_new.ncols()
            )));
        }
        let cross = rbf_kernel_matrix(x_new, self.training.view(), self.params)?;
        let centered = self.centering.apply(&cross)?;
        Ok(centered.dot(&self.coefficients))
    }
}

pub fn fit_kpca(x: ArrayView2<'_, f64>, params: KernelParams, d: usize) -> Result<KpcaModel> {
    let n = x.nrows();
    if d == 0 || d + 1 > n {
        return Err(Error::Precondition(format!(
            "kpca dimension must satisfy 1 <= d <= N-1, got d = {d}, N = {n}"
        )));
    }
    let gram = rbf_gram(x, params);
    let centering = KernelCentering::from_train(&gram);
    let centered = center_kernel(&gram)?;

    let dense = DMatrix::from_fn(n, n, |i, j| centered[[i, j]]);
    let eig = SymmetricEigen::new(dense);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);

    let mut eigenvalues = Vec::with_capacity(d);
    let mut coefficients = Array2::zeros((n, d));
    let mut train_coords = Array2::zeros((n, d));
    let mut deficient_dims = 0;
    for (k, &idx) in order.iter().take(d).enumerate() {
        let raw = eig.eigenvalues[idx];
        if raw < -PSD_TOL * lambda_max {
            log::warn!("centered kernel has eigenvalue {raw:e} below round-off tolerance");
        }
        let lambda = raw.max(0.0);
        if lambda_max <= 0.0 || lambda <= RANK_TOL * lambda_max {
            deficient_dims += 1;
            eigenvalues.push(0.0);
            continue;
        }
        eigenvalues.push(lambda);
        let v = eig.eigenvectors.column(idx);
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &e)| {
                if e.abs() > best.1.abs() {
                    (i, e)
                } else {
                    best
                }
            })
            .1;
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let root = lambda.sqrt();
        for i in 0..n {
            let vi = sign * v[i];
            coefficients[[i, k]] = vi / root;
            train_coords[[i, k]] = vi * root;
        }
    }
    if deficient_dims > 0 {
        log::warn!(
            "kpca: {deficient_dims} of {d} requested components are rank deficient and were zeroed"
        );
    }
    Ok(KpcaModel {
        training: x.to_owned(),
        params,
        centering,
        eigenvalues,
        coefficients,
        train_coords,
        deficient_dims,
    })
}
