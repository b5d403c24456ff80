//! Cross-subset validation, per-layer and per-model complexity scores, and
//! correlation of those scores with test accuracy across a model zoo.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::{l2_distortion_matrix, normalized_trace, DistortionMatrix};
use crate::error::{Error, Result};
use crate::features::{
    cap_total, split_indices, subsample_per_class, FeatureSet, DEFAULT_MAX_PER_CLASS,
};
use crate::gmm::{fit_class_models, gmm_centroid_confusion, gmm_confidence_distortion, GmmOptions};
use crate::kernel::{default_gamma, KernelParams};
use crate::kpca::{fit_kpca, DEFAULT_DIM};
use crate::manifest::{Manifest, ModelEntry};
use crate::seed;
use crate::stats::LinearFit;
use crate::svm::{count_support_vectors, svm_confusion_distortion, SmoOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    L2Trace,
    GmmTrace,
    SvmTrace,
    SvCount,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::L2Trace,
        Measure::GmmTrace,
        Measure::SvmTrace,
        Measure::SvCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::L2Trace => "l2_trace",
            Measure::GmmTrace => "gmm_trace",
            Measure::SvmTrace => "svm_trace",
            Measure::SvCount => "sv_count",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "l2" | "l2_trace" => Ok(Measure::L2Trace),
            "gmm" | "gmm_trace" => Ok(Measure::GmmTrace),
            "svm" | "svm_trace" => Ok(Measure::SvmTrace),
            "svs" | "sv_count" => Ok(Measure::SvCount),
            other => Err(Error::Config(format!(
                "unknown measure {other:?} (expected l2, gmm, svm or svs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Last,
    Min,
    Max,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "last" => Ok(Aggregation::Last),
            "min" => Ok(Aggregation::Min),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

impl Aggregation {
    pub fn apply(self, values: &[f64]) -> Result<f64> {
        if values.is_empty() {
            return Err(Error::Precondition("no layer values to aggregate".into()));
        }
        Ok(match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Last => *values.last().expect("non-empty"),
            Aggregation::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Which GMM matrix feeds `gmm_trace`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmReadout {
    /// Mean maximal component posterior (label-distortion matrix).
    Confidence,
    /// Closest-mixture-centroid confusion matrix.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMethod {
    Gmm,
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Box constraint for the confusion-matrix measure.
    pub c: f64,
    /// Ascending box constraints searched by the support-vector count.
    pub c_schedule: Vec<f64>,
    /// Target training error for the support-vector count.
    pub epsilon: f64,
    #[serde(flatten)]
    pub smo: SmoOptions,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            c_schedule: vec![1.0, 10.0, 100.0, 1000.0],
            epsilon: 0.01,
            smo: SmoOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub folds: usize,
    pub max_per_class: usize,
    /// Stratified cap on samples entering any kPCA/GMM/SVM fit.
    pub kernel_cap: usize,
    /// RBF gamma override; the scale heuristic is used when absent.
    pub gamma: Option<f64>,
    pub kpca_dim: usize,
    pub gmm: GmmOptions,
    pub gmm_readout: GmmReadout,
    pub svm: SvmConfig,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            max_per_class: DEFAULT_MAX_PER_CLASS,
            kernel_cap: 2000,
            gamma: None,
            kpca_dim: DEFAULT_DIM,
            gmm: GmmOptions::default(),
            gmm_readout: GmmReadout::Confidence,
            svm: SvmConfig::default(),
            aggregation: Aggregation::Mean,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.folds < 2 {
            return fail(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.max_per_class < 2 {
            return fail(format!(
                "max_per_class must be >= 2, got {}",
                self.max_per_class
            ));
        }
        if self.kernel_cap < 4 {
            return fail(format!("kernel_cap must be >= 4, got {}", self.kernel_cap));
        }
        if let Some(g) = self.gamma {
            KernelParams::new(g).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.kpca_dim == 0 {
            return fail("kpca_dim must be >= 1".into());
        }
        if self.gmm.n_components == 0 || self.gmm.max_iter == 0 || self.gmm.restarts == 0 {
            return fail("gmm n_components, max_iter and restarts must be >= 1".into());
        }
        if self.gmm.tol.is_nan() || self.gmm.tol <= 0.0 {
            return fail(format!("gmm tol must be > 0, got {}", self.gmm.tol));
        }
        if !(self.svm.c > 0.0 && self.svm.c.is_finite()) {
            return fail(format!("svm c must be positive, got {}", self.svm.c));
        }
        if self.svm.c_schedule.is_empty()
            || self
                .svm
                .c_schedule
                .iter()
                .any(|c| !(*c > 0.0 && c.is_finite()))
            || self.svm.c_schedule.windows(2).any(|w| w[0] >= w[1])
        {
            return fail(
                "svm c_schedule must be non-empty, positive and strictly ascending".into(),
            );
        }
        if !(0.0..1.0).contains(&self.svm.epsilon) {
            return fail(format!(
                "svm epsilon must be in [0, 1), got {}",
                self.svm.epsilon
            ));
        }
        if self.svm.smo.tol.is_nan() || self.svm.smo.tol <= 0.0 || self.svm.smo.max_passes == 0 {
            return fail("svm tol must be > 0 and max_passes >= 1".into());
        }
        Ok(())
    }

    fn gamma_override(&self) -> Option<KernelParams> {
        self.gamma.and_then(|g| KernelParams::new(g).ok())
    }
}

fn fold_distortion(
    train: &FeatureSet,
    held: &FeatureSet,
    method: CvMethod,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<DistortionMatrix> {
    let train = cap_total(
        train,
        cfg.kernel_cap,
        cfg.gmm.n_components.max(2),
        seed::derive(seed, &[0]),
    )?;
    match method {
        CvMethod::Svm => {
            svm_confusion_distortion(&train, held, cfg.svm.c, cfg.gamma_override(), &cfg.svm.smo)
        }
        CvMethod::Gmm => {
            let params = match cfg.gamma_override() {
                Some(p) => p,
                None => default_gamma(train.features().view())?,
            };
            let kpca = fit_kpca(train.features().view(), params, cfg.kpca_dim)?;
            let train_coords = train.with_features(kpca.train_coords().clone())?;
            let held_coords = held.with_features(kpca.transform(held.features().view())?)?;
            let models = fit_class_models(&train_coords, &cfg.gmm, seed::derive(seed, &[1]))?;
            match cfg.gmm_readout {
                GmmReadout::Confidence => gmm_confidence_distortion(&models, &held_coords),
                GmmReadout::Centroid => gmm_centroid_confusion(&models, &held_coords),
            }
        }
    }
}

/// Per-fold matrices of [`cross_validated_distortion`], in fold order.
pub fn fold_distortions(
    fs: &FeatureSet,
    k: usize,
    method: CvMethod,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<DistortionMatrix>> {
    let folds = split_indices(fs, k, seed::derive(seed, &[0]))?;
    (0..k)
        .into_par_iter()
        .map(|f| {
            let complement: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let train = fs.select(&complement)?;
            let held = fs.select(&folds[f])?;
            fold_distortion(
                &train,
                &held,
                method,
                cfg,
                seed::derive(seed, &[1, f as u64]),
            )
        })
        .collect()
}

/// Fits on each fold's complement, evaluates on the held-out fold and
/// averages the `k` matrices entrywise.
pub fn cross_validated_distortion(
    fs: &FeatureSet,
    k: usize,
    method: CvMethod,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<DistortionMatrix> {
    let per_fold = fold_distortions(fs, k, method, cfg, seed)?;
    let c = fs.num_classes();
    let mut mean = Array2::zeros((c, c));
    for dm in &per_fold {
        mean += dm.values();
    }
    mean /= per_fold.len() as f64;
    DistortionMatrix::new(mean, per_fold[0].kind(), fs.model_id(), fs.layer_id())
}

/// Value of one measure on one layer. Applies the per-class subsample first.
pub fn layer_value(fs: &FeatureSet, measure: Measure, cfg: &EvalConfig, seed: u64) -> Result<f64> {
    let fs = subsample_per_class(fs, cfg.max_per_class, seed::derive(seed, &[0]))?;
    let unit_seed = seed::derive(seed, &[1]);
    match measure {
        Measure::L2Trace => Ok(normalized_trace(&l2_distortion_matrix(&fs)?)),
        Measure::GmmTrace => Ok(normalized_trace(&cross_validated_distortion(
            &fs,
            cfg.folds,
            CvMethod::Gmm,
            cfg,
            unit_seed,
        )?)),
        Measure::SvmTrace => Ok(normalized_trace(&cross_validated_distortion(
            &fs,
            cfg.folds,
            CvMethod::Svm,
            cfg,
            unit_seed,
        )?)),
        Measure::SvCount => {
            let capped = cap_total(&fs, cfg.kernel_cap, 2, unit_seed)?;
            let out = count_support_vectors(
                &capped,
                cfg.svm.epsilon,
                cfg.gamma_override(),
                &cfg.svm.smo,
                &cfg.svm.c_schedule,
            )?;
            Ok(out.count as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore {
    pub model_id: String,
    pub measure: Measure,
    pub per_layer: Vec<(String, f64)>,
    pub aggregate: f64,
}

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn measure_tag(m: Measure) -> u64 {
    match m {
        Measure::L2Trace => 0,
        Measure::GmmTrace => 1,
        Measure::SvmTrace => 2,
        Measure::SvCount => 3,
    }
}

/// Scores one model for several measures, loading each layer once.
///
/// Seeds depend only on the run seed and the model/layer ids, so a model's
/// scores do not depend on its position in the manifest.
pub fn score_model_measures(
    manifest: &Manifest,
    entry: &ModelEntry,
    measures: &[Measure],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<ComplexityScore>> {
    let model_seed = seed::derive(seed, &[stable_hash(&entry.model_id)]);
    let per_layer: Vec<Vec<f64>> = entry
        .layers
        .par_iter()
        .map(|layer| {
            let wrap = |e: Error| Error::Layer {
                model: entry.model_id.clone(),
                layer: layer.layer_id.clone(),
                source: Box::new(e),
            };
            let fs = manifest.load_layer(entry, layer).map_err(wrap)?;
            let layer_seed = seed::derive(model_seed, &[stable_hash(&layer.layer_id)]);
            measures
                .iter()
                .map(|&m| {
                    layer_value(&fs, m, cfg, seed::derive(layer_seed, &[measure_tag(m)]))
                        .map_err(wrap)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    measures
        .iter()
        .enumerate()
        .map(|(mi, &measure)| {
            let values: Vec<f64> = per_layer.iter().map(|v| v[mi]).collect();
            Ok(ComplexityScore {
                model_id: entry.model_id.clone(),
                measure,
                per_layer: entry
                    .layers
                    .iter()
                    .zip(&values)
                    .map(|(l, &v)| (l.layer_id.clone(), v))
                    .collect(),
                aggregate: cfg.aggregation.apply(&values)?,
            })
        })
        .collect()
}

pub fn score_model(
    manifest: &Manifest,
    entry: &ModelEntry,
    measure: Measure,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ComplexityScore> {
    Ok(
        score_model_measures(manifest, entry, &[measure], cfg, seed)?
            .pop()
            .expect("one measure requested"),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelScores {
    pub model_id: String,
    pub test_accuracy: Option<f64>,
    /// One score per requested measure, in request order.
    pub scores: Vec<ComplexityScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelFailure {
    pub model_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooScores {
    pub measures: Vec<Measure>,
    pub models: Vec<ModelScores>,
    pub failures: Vec<ModelFailure>,
}

/// Scores every model in the manifest; failures are collected rather than
/// aborting the run. Output order follows the manifest.
pub fn score_zoo(
    manifest: &Manifest,
    measures: &[Measure],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ZooScores> {
    cfg.validate()?;
    let results: Vec<(String, Option<f64>, Result<Vec<ComplexityScore>>)> = manifest
        .models
        .par_iter()
        .map(|entry| {
            (
                entry.model_id.clone(),
                entry.test_accuracy,
                score_model_measures(manifest, entry, measures, cfg, seed),
            )
        })
        .collect();
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for (model_id, test_accuracy, r) in results {
        match r {
            Ok(scores) => models.push(ModelScores {
                model_id,
                test_accuracy,
                scores,
            }),
            Err(e) => {
                log::error!("model {model_id}: {e}");
                failures.push(ModelFailure {
                    model_id,
                    error: e.to_string(),
                })
            }
        }
    }
    Ok(ZooScores {
        measures: measures.to_vec(),
        models,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationPoint {
    pub model_id: String,
    pub score: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub measure: Measure,
    pub r_squared: f64,
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<CorrelationPoint>,
}

impl ZooScores {
    /// Models with a known test accuracy, as correlation points for one measure.
    pub fn points(&self, measure: Measure) -> Result<Vec<CorrelationPoint>> {
        let mi = self
            .measures
            .iter()
            .position(|&m| m == measure)
            .ok_or_else(|| Error::Precondition(format!("measure {measure} was not scored")))?;
        Ok(self
            .models
            .iter()
            .filter_map(|m| {
                m.test_accuracy.map(|acc| CorrelationPoint {
                    model_id: m.model_id.clone(),
                    score: m.scores[mi].aggregate,
                    test_accuracy: acc,
                })
            })
            .collect())
    }

    pub fn correlate(&self, measure: Measure) -> Result<CorrelationReport> {
        let points = self.points(measure)?;
        if points.len() < 2 {
            return Err(Error::Precondition(format!(
                "need at least 2 models with test accuracy, found {}",
                points.len()
            )));
        }
        let scores: Vec<f64> = points.iter().map(|p| p.score).collect();
        let accs: Vec<f64> = points.iter().map(|p| p.test_accuracy).collect();
        let LinearFit {
            r_squared,
            slope,
            intercept,
        } = crate::stats::r_squared(&scores, &accs)?;
        Ok(CorrelationReport {
            measure,
            r_squared,
            slope,
            intercept,
            points,
        })
    }
}

/// Scores the zoo and correlates every measure with test accuracy.
pub fn correlate_zoo(
    manifest: &Manifest,
    measures: &[Measure],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<CorrelationReport>> {
    let with_acc = manifest
        .models
        .iter()
        .filter(|m| m.test_accuracy.is_some())
        .count();
    if with_acc < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 models with test accuracy, found {with_acc}"
        )));
    }
    let zoo = score_zoo(manifest, measures, cfg, seed)?;
    if let Some(f) = zoo.failures.first() {
        return Err(Error::Precondition(format!(
            "model {} failed: {}",
            f.model_id, f.error
        )));
    }
    measures.iter().map(|&m| zoo.correlate(m)).collect()
}
