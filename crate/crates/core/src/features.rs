//! Labeled per-layer feature sets: loading, validation, subsampling and
//! stratified splitting.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::npy;

/// Per-class cap applied before any kernel-method fit.
pub const DEFAULT_MAX_PER_CLASS: usize = 500;

/// Feature vectors of one layer of one model, with dense class labels.
///
/// Immutable after construction; every constructor validates that features
/// are finite and that every class in `0..num_classes` occurs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    model_id: String,
    layer_id: String,
}

impl FeatureSet {
    /// Builds a feature set, inferring the class count as `1 + max(label)`.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<i64>,
        model_id: impl Into<String>,
        layer_id: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let labels = labels
            .into_iter()
            .map(|l| usize::try_from(l).map_err(|_| Error::NegativeLabel(l)))
            .collect::<Result<Vec<_>>>()?;
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::with_classes(features, labels, num_classes, model_id, layer_id)
    }

    /// Builds a feature set with an explicit class count.
    pub fn with_classes(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        model_id: impl Into<String>,
        layer_id: impl Into<String>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidFeatureSet(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidFeatureSet(format!(
                "need at least 2 classes, found {num_classes}"
            )));
        }
        if let Some((row, col)) = features
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(ix, _)| ix)
        {
            return Err(Error::NonFinite { row, col });
        }
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::InvalidFeatureSet(format!(
                    "label {l} outside 0..{num_classes}"
                )));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::MissingClass(missing));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            model_id: model_id.into(),
            layer_id: layer_id.into(),
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false for a validated set; present for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices of each class, in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Rows belonging to one class.
    pub fn class_features(&self, class: usize) -> Array2<f64> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect();
        self.features.select(Axis(0), &idx)
    }

    /// Selects rows by index, keeping the class count. Fails if a class ends up empty.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::with_classes(
            self.features.select(Axis(0), indices),
            labels,
            self.num_classes,
            self.model_id.clone(),
            self.layer_id.clone(),
        )
    }

    /// Same labels and ids, different feature matrix (e.g. projected coordinates).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::with_classes(
            features,
            self.labels.clone(),
            self.num_classes,
            self.model_id.clone(),
            self.layer_id.clone(),
        )
    }

    /// Writes features (`<f8`) and labels (`<i8`) in NPY format.
    pub fn save(&self, feature_path: &Path, label_path: &Path) -> Result<()> {
        npy::write_matrix_file(feature_path, &self.features)?;
        let labels: Vec<i64> = self.labels.iter().map(|&l| l as i64).collect();
        npy::write_labels_file(label_path, &labels)
    }
}

pub fn load_feature_set(
    feature_path: &Path,
    label_path: &Path,
    model_id: &str,
    layer_id: &str,
) -> Result<FeatureSet> {
    let features = npy::read_matrix_file(feature_path)?;
    let labels = npy::read_labels_file(label_path)?;
    FeatureSet::new(features, labels, model_id, layer_id)
}

/// Indices kept by [`subsample_per_class`], ascending.
pub fn subsample_indices(fs: &FeatureSet, max_per_class: usize, seed: u64) -> Result<Vec<usize>> {
    if max_per_class < 2 {
        return Err(Error::Precondition(format!(
            "max_per_class must be at least 2, got {max_per_class}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(fs.len());
    for members in fs.class_indices() {
        if members.len() <= max_per_class {
            keep.extend(members);
        } else {
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, members.len(), max_per_class)
                    .into_iter()
                    .map(|k| members[k])
                    .collect();
            picked.sort_unstable();
            keep.extend(picked);
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Caps every class at `max_per_class` samples, drawn uniformly without
/// replacement. Relative sample order is preserved.
pub fn subsample_per_class(fs: &FeatureSet, max_per_class: usize, seed: u64) -> Result<FeatureSet> {
    let keep = subsample_indices(fs, max_per_class, seed)?;
    if keep.len() == fs.len() {
        return Ok(fs.clone());
    }
    fs.select(&keep)
}

/// Stratified cap on the total sample count. Each class keeps a share
/// proportional to its size (largest remainder), and at least
/// `min_per_class` samples when it has them.
pub fn cap_total(
    fs: &FeatureSet,
    max_total: usize,
    min_per_class: usize,
    seed: u64,
) -> Result<FeatureSet> {
    let n = fs.len();
    if n <= max_total {
        return Ok(fs.clone());
    }
    let counts = fs.class_counts();
    let mut quota: Vec<usize> = counts.iter().map(|&c| c * max_total / n).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // largest fractional remainder first, then lower class id
    order.sort_by_key(|&c| (std::cmp::Reverse((counts[c] * max_total) % n), c));
    let mut left = max_total - quota.iter().sum::<usize>();
    for &c in order.iter().cycle().take(counts.len() * 2) {
        if left == 0 {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            left -= 1;
        }
    }
    for (q, &c) in quota.iter_mut().zip(&counts) {
        *q = (*q).max(min_per_class.min(c));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(max_total);
    for (members, &q) in fs.class_indices().iter().zip(&quota) {
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, members.len(), q)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picked.sort_unstable();
        keep.extend(picked);
    }
    keep.sort_unstable();
    fs.select(&keep)
}

/// Index sets of [`split_subsets`]: `k` disjoint, stratified, ascending lists covering `0..N`.
pub fn split_indices(fs: &FeatureSet, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Precondition(format!("need k >= 2 subsets, got {k}")));
    }
    let classes = fs.class_indices();
    if let Some((c, m)) = classes.iter().enumerate().find(|(_, m)| m.len() < k) {
        return Err(Error::Precondition(format!(
            "class {c} has {} samples, fewer than k = {k}",
            m.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for mut members in classes {
        members.shuffle(&mut rng);
        for (pos, idx) in members.iter().enumerate() {
            folds[(offset + pos) % k].push(*idx);
        }
        // rotate so leftover samples of successive classes land in different folds
        offset = (offset + members.len()) % k;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Partitions a feature set into `k` mutually exclusive stratified subsets.
pub fn split_subsets(fs: &FeatureSet, k: usize, seed: u64) -> Result<Vec<FeatureSet>> {
    split_indices(fs, k, seed)?
        .iter()
        .map(|idx| fs.select(idx))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::BTreeSet;

    fn blob(counts: &[usize]) -> FeatureSet {
        let labels: Vec<i64> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as i64, n))
            .collect();
        let n = labels.len();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 3 + j) as f64 * 0.1);
        FeatureSet::new(x, labels, "m", "l").unwrap()
    }

    #[test]
    fn direct_construction() {
        let fs = FeatureSet::new(
            array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]],
            vec![0, 0, 1, 1],
            "m",
            "l",
        )
        .unwrap();
        assert_eq!((fs.len(), fs.dim(), fs.num_classes()), (4, 2, 2));
    }

    #[test]
    fn validation_errors() {
        let x = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            FeatureSet::new(x.clone(), vec![0, 1, 1], "m", "l"),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            FeatureSet::new(Array2::zeros((2, 2)), vec![0, 2], "m", "l"),
            Err(Error::MissingClass(1))
        ));
        assert!(matches!(
            FeatureSet::new(x.clone(), vec![0, 0, 0, 0], "m", "l"),
            Err(Error::InvalidFeatureSet(_))
        ));
        assert!(matches!(
            FeatureSet::new(x.clone(), vec![0, -1, 1, 1], "m", "l"),
            Err(Error::NegativeLabel(-1))
        ));
        let mut bad = x;
        bad[[2, 1]] = f64::NAN;
        assert!(matches!(
            FeatureSet::new(bad, vec![0, 0, 1, 1], "m", "l"),
            Err(Error::NonFinite { row: 2, col: 1 })
        ));
    }

    #[test]
    fn subsample_caps_each_class() {
        let fs = blob(&[100, 30]);
        let sub = subsample_per_class(&fs, 50, 7).unwrap();
        assert_eq!(sub.class_counts(), vec![50, 30]);
        let idx = subsample_indices(&fs, 50, 7).unwrap();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx, subsample_indices(&fs, 50, 7).unwrap());
    }

    #[test]
    fn subsample_identity_when_under_cap() {
        let fs = blob(&[10, 12]);
        assert_eq!(subsample_per_class(&fs, 12, 1).unwrap(), fs);
        assert!(subsample_per_class(&fs, 1, 1).is_err());
    }

    #[test]
    fn cap_total_is_stratified() {
        let fs = blob(&[300, 100, 100]);
        let capped = cap_total(&fs, 250, 2, 3).unwrap();
        assert_eq!(capped.class_counts(), vec![150, 50, 50]);
        let capped = cap_total(&fs, 101, 2, 3).unwrap();
        assert_eq!(capped.len(), 101);
    }

    #[test]
    fn split_two_balanced_classes() {
        let fs = blob(&[5, 5]);
        let parts = split_subsets(&fs, 2, 11).unwrap();
        assert_eq!(parts.len(), 2);
        for c in 0..2 {
            let per: Vec<usize> = parts.iter().map(|p| p.class_counts()[c]).collect();
            assert_eq!(per.iter().sum::<usize>(), 5);
            assert!(per.iter().all(|&n| n == 2 || n == 3));
        }
        assert!(split_subsets(&fs, 1, 0).is_err());
        assert!(split_subsets(&blob(&[5, 2]), 3, 0).is_err());
    }

    #[test]
    fn split_partitions_indices() {
        let fs = blob(&[20, 20, 20]);
        let folds = split_indices(&fs, 3, 5).unwrap();
        let mut all = BTreeSet::new();
        for f in &folds {
            for &i in f {
                assert!(all.insert(i), "index {i} appears twice");
            }
        }
        assert_eq!(all, (0..60).collect());
    }
}
