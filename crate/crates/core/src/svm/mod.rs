//! RBF support vector machines: binary SMO training, one-vs-one multiclass
//! ensembles, confusion distortion and the support-vector count measure.

mod smo;

pub use smo::{solve_dual, DualSolution, SmoOptions};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::{DistortionKind, DistortionMatrix};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::gmm::row_normalize;
use crate::kernel::{default_gamma, rbf_gram, rbf_kernel_matrix, KernelParams, Standardizer};

#[derive(Debug, Clone)]
pub struct BinarySvm {
    support_vectors: Array2<f64>,
    dual_coefs: Vec<f64>,
    bias: f64,
    params: KernelParams,
    c: f64,
    support_indices: Vec<usize>,
    objective: f64,
    converged: bool,
}

impl BinarySvm {
    fn from_solution(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        c: f64,
        params: KernelParams,
        sol: DualSolution,
    ) -> Self {
        let support_indices: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
        Self {
            support_vectors: x.select(Axis(0), &support_indices),
            dual_coefs: support_indices
                .iter()
                .map(|&i| sol.alpha[i] * y[i])
                .collect(),
            bias: sol.bias,
            params,
            c,
            support_indices,
            objective: sol.objective,
            converged: sol.converged,
        }
    }

    pub fn support_vectors(&self) -> &Array2<f64> {
        &self.support_vectors
    }

    /// `alpha_i * y_i` for every stored support vector.
    pub fn dual_coefs(&self) -> &[f64] {
        &self.dual_coefs
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    /// Training-set indices of the support vectors, ascending.
    pub fn support_indices(&self) -> &[usize] {
        &self.support_indices
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn decision_function(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.support_vectors.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "svm trained on {} columns, got {}",
                self.support_vectors.ncols(),
                x.ncols()
            )));
        }
        let k = rbf_kernel_matrix(x, self.support_vectors.view(), self.params)?;
        Ok(k.rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(&self.dual_coefs)
                    .map(|(k, a)| k * a)
                    .sum::<f64>()
                    + self.bias
            })
            .collect())
    }
}

fn binary_from_kernel(
    x: ArrayView2<'_, f64>,
    kernel: &Array2<f64>,
    y: &[f64],
    c: f64,
    params: KernelParams,
    opts: &SmoOptions,
) -> Result<BinarySvm> {
    let sol = solve_dual(kernel, y, c, opts)?;
    Ok(BinarySvm::from_solution(x, y, c, params, sol))
}

/// Trains a binary soft-margin SVM on labels in {-1, +1}.
pub fn train_binary_svm(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    c: f64,
    params: KernelParams,
    opts: &SmoOptions,
) -> Result<BinarySvm> {
    if x.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::SingleClass);
    }
    let kernel = rbf_gram(x, params);
    binary_from_kernel(x, &kernel, y, c, params, opts)
}

/// One binary machine separating class `positive` (+1) from class `negative` (-1).
#[derive(Debug, Clone)]
pub struct PairMachine {
    pub positive: usize,
    pub negative: usize,
    pub svm: BinarySvm,
    /// Support vectors as indices into the ensemble's training set.
    pub support_indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SvmEnsemble {
    machines: Vec<PairMachine>,
    num_classes: usize,
    c: f64,
    params: KernelParams,
    standardizer: Standardizer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// Winning vote count minus the runner-up's.
    pub vote_margin: usize,
}

impl SvmEnsemble {
    pub fn machines(&self) -> &[PairMachine] {
        &self.machines
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    /// Distinct training indices that are a support vector of at least one machine.
    pub fn distinct_support_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .machines
            .iter()
            .flat_map(|m| m.support_indices.iter().copied())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Pairwise decision values for already standardized inputs, one vector per machine.
    fn decision_values(&self, z: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
        self.machines
            .par_iter()
            .map(|m| m.svm.decision_function(z))
            .collect()
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Prediction>> {
        let z = self.standardizer.transform(x)?;
        let values = self.decision_values(z.view())?;
        Ok((0..x.nrows())
            .map(|s| {
                vote(
                    self.num_classes,
                    self.machines
                        .iter()
                        .zip(&values)
                        .map(|(m, v)| (m.positive, m.negative, v[s])),
                )
            })
            .collect())
    }
}

/// One-vs-one vote. Positive decision values vote for `positive`, negative
/// for `negative`, zero abstains. Ties go to the larger summed |decision|
/// over won contests, then the lower class id.
pub fn vote(
    num_classes: usize,
    decisions: impl Iterator<Item = (usize, usize, f64)>,
) -> Prediction {
    let mut votes = vec![0usize; num_classes];
    let mut strength = vec![0.0f64; num_classes];
    for (pos, neg, f) in decisions {
        if f > 0.0 {
            votes[pos] += 1;
            strength[pos] += f.abs();
        } else if f < 0.0 {
            votes[neg] += 1;
            strength[neg] += f.abs();
        }
    }
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        votes[b]
            .cmp(&votes[a])
            .then(
                strength[b]
                    .partial_cmp(&strength[a])
                    .expect("finite decisions"),
            )
            .then(a.cmp(&b))
    });
    let label = order[0];
    let runner_up = order.get(1).map_or(0, |&c| votes[c]);
    Prediction {
        label,
        vote_margin: votes[label] - runner_up,
    }
}

/// A standardized training set with its Gram matrix, reusable across box constraints.
pub struct MulticlassProblem {
    standardized: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    gram: Array2<f64>,
    params: KernelParams,
    standardizer: Standardizer,
}

impl MulticlassProblem {
    /// Standardizes `fs` and, when `params` is `None`, picks gamma by the
    /// scale heuristic on the standardized features.
    pub fn new(fs: &FeatureSet, params: Option<KernelParams>) -> Result<Self> {
        let standardizer = Standardizer::fit(fs.features().view());
        let standardized = standardizer.transform(fs.features().view())?;
        let params = match params {
            Some(p) => p,
            None => default_gamma(standardized.view())?,
        };
        let gram = rbf_gram(standardized.view(), params);
        Ok(Self {
            standardized,
            labels: fs.labels().to_vec(),
            num_classes: fs.num_classes(),
            gram,
            params,
            standardizer,
        })
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn train(&self, c: f64, opts: &SmoOptions) -> Result<SvmEnsemble> {
        let pairs: Vec<(usize, usize)> = (0..self.num_classes)
            .flat_map(|i| ((i + 1)..self.num_classes).map(move |j| (i, j)))
            .collect();
        let machines = pairs
            .par_iter()
            .map(|&(pos, neg)| {
                let idx: Vec<usize> = (0..self.labels.len())
                    .filter(|&s| self.labels[s] == pos || self.labels[s] == neg)
                    .collect();
                let y: Vec<f64> = idx
                    .iter()
                    .map(|&s| if self.labels[s] == pos { 1.0 } else { -1.0 })
                    .collect();
                let sub_gram = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| {
                    self.gram[[idx[a], idx[b]]]
                });
                let x = self.standardized.select(Axis(0), &idx);
                let svm = binary_from_kernel(x.view(), &sub_gram, &y, c, self.params, opts)?;
                let support_indices = svm.support_indices().iter().map(|&k| idx[k]).collect();
                Ok(PairMachine {
                    positive: pos,
                    negative: neg,
                    svm,
                    support_indices,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SvmEnsemble {
            machines,
            num_classes: self.num_classes,
            c,
            params: self.params,
            standardizer: self.standardizer.clone(),
        })
    }

    /// Training predictions read straight from the cached Gram matrix.
    pub fn training_predictions(&self, ensemble: &SvmEnsemble) -> Vec<Prediction> {
        let n = self.labels.len();
        let values: Vec<Vec<f64>> = ensemble
            .machines
            .iter()
            .map(|m| {
                (0..n)
                    .map(|s| {
                        m.support_indices
                            .iter()
                            .zip(m.svm.dual_coefs())
                            .map(|(&k, a)| a * self.gram[[s, k]])
                            .sum::<f64>()
                            + m.svm.bias()
                    })
                    .collect()
            })
            .collect();
        (0..n)
            .map(|s| {
                vote(
                    self.num_classes,
                    ensemble
                        .machines
                        .iter()
                        .zip(&values)
                        .map(|(m, v)| (m.positive, m.negative, v[s])),
                )
            })
            .collect()
    }

    pub fn training_error(&self, ensemble: &SvmEnsemble) -> f64 {
        let wrong = self
            .training_predictions(ensemble)
            .iter()
            .zip(&self.labels)
            .filter(|(p, &l)| p.label != l)
            .count();
        wrong as f64 / self.labels.len() as f64
    }
}

/// One-vs-one ensemble: a binary machine per class pair, trained on those two classes only.
pub fn train_multiclass(
    fs: &FeatureSet,
    c: f64,
    params: Option<KernelParams>,
    opts: &SmoOptions,
) -> Result<SvmEnsemble> {
    MulticlassProblem::new(fs, params)?.train(c, opts)
}

/// Validation confusion matrix of an ensemble trained on `train`.
pub fn svm_confusion_distortion(
    train: &FeatureSet,
    validation: &FeatureSet,
    c: f64,
    params: Option<KernelParams>,
    opts: &SmoOptions,
) -> Result<DistortionMatrix> {
    if validation.num_classes() != train.num_classes() {
        return Err(Error::Precondition(format!(
            "validation has {} classes, training {}",
            validation.num_classes(),
            train.num_classes()
        )));
    }
    let ensemble = train_multiclass(train, c, params, opts)?;
    let predictions = ensemble.predict(validation.features().view())?;
    let k = train.num_classes();
    let mut counts = Array2::<usize>::zeros((k, k));
    for (p, &l) in predictions.iter().zip(validation.labels()) {
        counts[[l, p.label]] += 1;
    }
    DistortionMatrix::new(
        row_normalize(&counts),
        DistortionKind::SvmConfusion,
        validation.model_id(),
        validation.layer_id(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvCount {
    pub count: usize,
    pub achieved_error: f64,
    pub c_used: f64,
}

/// Number of distinct support vectors needed to reach `epsilon` training error.
///
/// Walks the ascending `c_schedule` and stops at the first box constraint
/// whose ensemble meets the target; falls back to the last one otherwise.
pub fn count_support_vectors(
    fs: &FeatureSet,
    epsilon: f64,
    params: Option<KernelParams>,
    opts: &SmoOptions,
    c_schedule: &[f64],
) -> Result<SvCount> {
    if c_schedule.is_empty() {
        return Err(Error::Precondition("C schedule is empty".into()));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Precondition(format!(
            "epsilon {epsilon} outside [0, 1)"
        )));
    }
    if c_schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition(
            "C schedule must be strictly ascending".into(),
        ));
    }
    let problem = MulticlassProblem::new(fs, params)?;
    let mut last = None;
    for &c in c_schedule {
        let ensemble = problem.train(c, opts)?;
        let err = problem.training_error(&ensemble);
        let out = SvCount {
            count: ensemble.distinct_support_indices().len(),
            achieved_error: err,
            c_used: c,
        };
        if err <= epsilon {
            return Ok(out);
        }
        last = Some(out);
    }
    Ok(last.expect("schedule is non-empty"))
}
