//! Class-by-class distortion matrices and the Euclidean (symbol) distortion.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    L2,
    GmmConfidence,
    GmmConfusion,
    SvmConfusion,
}

impl DistortionKind {
    pub fn is_row_stochastic(self) -> bool {
        matches!(
            self,
            DistortionKind::GmmConfusion | DistortionKind::SvmConfusion
        )
    }
}

/// A C×C matrix relating samples of class `i` (rows) to the structure of class `j` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionMatrix {
    values: Array2<f64>,
    kind: DistortionKind,
    model_id: String,
    layer_id: String,
}

impl DistortionMatrix {
    pub fn new(
        values: Array2<f64>,
        kind: DistortionKind,
        model_id: impl Into<String>,
        layer_id: impl Into<String>,
    ) -> Result<Self> {
        if values.nrows() != values.ncols() || values.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "distortion matrix must be square and non-empty, got {:?}",
                values.dim()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Precondition(format!(
                "distortion entries must be finite and non-negative, found {v}"
            )));
        }
        if kind == DistortionKind::GmmConfidence && values.iter().any(|&v| v > 1.0) {
            return Err(Error::Precondition(
                "confidence entries must lie in [0, 1]".into(),
            ));
        }
        if kind.is_row_stochastic() {
            for (i, row) in values.rows().into_iter().enumerate() {
                let s: f64 = row.sum();
                if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&v| v > 1.0) {
                    return Err(Error::Precondition(format!(
                        "row {i} of a confusion matrix sums to {s}, expected 1"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            kind,
            model_id: model_id.into(),
            layer_id: layer_id.into(),
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> DistortionKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }
}

/// Mean of the diagonal.
pub fn normalized_trace(dm: &DistortionMatrix) -> f64 {
    let c = dm.num_classes();
    dm.values.diag().sum() / c as f64
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// For each query row, the Euclidean distance to the nearest reference row.
///
/// With `exclude_identical_index` the two matrices are the same point set and
/// reference `i` is skipped for query `i` (exclusion by index, so exact
/// duplicates still give zero).
pub fn min_distances(
    queries: ArrayView2<'_, f64>,
    references: ArrayView2<'_, f64>,
    exclude_identical_index: bool,
) -> Result<Vec<f64>> {
    if queries.ncols() != references.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "queries have {} columns, references {}",
            queries.ncols(),
            references.ncols()
        )));
    }
    if exclude_identical_index && queries.nrows() != references.nrows() {
        return Err(Error::ShapeMismatch(
            "index exclusion requires queries and references to be the same set".into(),
        ));
    }
    let usable = references.nrows() - usize::from(exclude_identical_index);
    if usable == 0 {
        return Err(Error::Precondition(
            "no reference points left after exclusion".into(),
        ));
    }
    let q = queries.as_standard_layout();
    let r = references.as_standard_layout();
    let d = q.ncols();
    let q = q.as_slice().expect("standard layout");
    let r = r.as_slice().expect("standard layout");
    let refs: Vec<&[f64]> = if d == 0 {
        vec![&[][..]; references.nrows()]
    } else {
        r.chunks_exact(d).collect()
    };
    let rows: Vec<&[f64]> = if d == 0 {
        vec![&[][..]; queries.nrows()]
    } else {
        q.chunks_exact(d).collect()
    };
    Ok(rows
        .par_iter()
        .enumerate()
        .map(|(i, qi)| {
            refs.iter()
                .enumerate()
                .filter(|(j, _)| !(exclude_identical_index && *j == i))
                .map(|(_, rj)| squared_distance(qi, rj))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Mean minimum intra-class (diagonal) and inter-class (off-diagonal) distances.
///
/// Entry `[i][j]` averages, over samples of class `i`, the distance to the
/// nearest sample of class `j`. The matrix is not symmetric in general.
pub fn l2_distortion_matrix(fs: &FeatureSet) -> Result<DistortionMatrix> {
    let c = fs.num_classes();
    let counts = fs.class_counts();
    if let Some(class) = counts.iter().position(|&n| n < 2) {
        return Err(Error::Precondition(format!(
            "class {class} has a single sample; intra-class distance undefined"
        )));
    }
    let per_class: Vec<Array2<f64>> = (0..c).map(|k| fs.class_features(k)).collect();
    let rows: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|i| {
            (0..c)
                .map(|j| {
                    let mins = min_distances(per_class[i].view(), per_class[j].view(), i == j)
                        .expect("class sizes checked above");
                    mins.iter().sum::<f64>() / mins.len() as f64
                })
                .collect()
        })
        .collect();
    let values = Array2::from_shape_fn((c, c), |(i, j)| rows[i][j]);
    DistortionMatrix::new(values, DistortionKind::L2, fs.model_id(), fs.layer_id())
}
