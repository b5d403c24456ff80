//! Synthetic model zoo: Gaussian class blobs whose separation grows with
//! layer depth at a per-model rate, with nearest-class-mean ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::manifest::{LayerEntry, Manifest, ModelEntry};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_models: usize,
    pub n_classes: usize,
    pub dims: usize,
    pub n_layers: usize,
    pub per_class: usize,
    /// Holdout samples per class for the ground-truth accuracy.
    pub holdout_per_class: usize,
    /// Separation rate of the last model; model `m` gets `max_rate * (m + 1) / n_models`.
    pub max_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_models: 8,
            n_classes: 4,
            dims: 16,
            n_layers: 3,
            per_class: 60,
            holdout_per_class: 500,
            max_rate: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("models", self.n_models),
            ("layers", self.n_layers),
            ("dims", self.dims),
            ("holdout_per_class", self.holdout_per_class),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth: {name} must be positive")));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("synth: need at least 2 classes".into()));
        }
        if self.per_class < 2 {
            return Err(Error::Config(
                "synth: need at least 2 samples per class".into(),
            ));
        }
        if !(self.max_rate >= 0.0 && self.max_rate.is_finite()) {
            return Err(Error::Config(format!(
                "synth: invalid max_rate {}",
                self.max_rate
            )));
        }
        Ok(())
    }

    pub fn rate(&self, model: usize) -> f64 {
        self.max_rate * (model + 1) as f64 / self.n_models as f64
    }
}

#[derive(Debug, Clone)]
pub struct SynthModel {
    pub model_id: String,
    pub rate: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub layers: Vec<FeatureSet>,
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn class_directions(cfg: &SynthConfig) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[0]));
    let mut u = normal_matrix(cfg.n_classes, cfg.dims, &mut rng);
    for mut row in u.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    u
}

fn class_labels(n_classes: usize, per_class: usize) -> Vec<usize> {
    (0..n_classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect()
}

/// Blob samples `scale * u[label] + noise`.
fn blobs(u: &Array2<f64>, labels: &[usize], scale: f64, noise: &Array2<f64>) -> Array2<f64> {
    let mut x = noise.clone();
    for (mut row, &c) in x.rows_mut().into_iter().zip(labels) {
        row.scaled_add(scale, &u.row(c));
    }
    x
}

/// Divides by the root mean per-dimension variance so layers share a scale.
fn normalize_scale(mut x: Array2<f64>) -> Array2<f64> {
    let var = x.var_axis(Axis(0), 0.0).mean().unwrap_or(0.0);
    if var > 0.0 {
        x /= var.sqrt();
    }
    x
}

pub fn class_means(x: &Array2<f64>, labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut means = Array2::zeros((n_classes, x.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &c) in x.rows().into_iter().zip(labels) {
        means.row_mut(c).scaled_add(1.0, &row);
        counts[c] += 1;
    }
    for (mut m, n) in means.rows_mut().into_iter().zip(counts) {
        if n > 0 {
            m /= n as f64;
        }
    }
    means
}

fn nearest_mean(means: &Array2<f64>, x: ArrayView1<'_, f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, m) in means.rows().into_iter().enumerate() {
        let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Fraction of rows whose nearest class mean belongs to their own label.
pub fn nearest_mean_accuracy(means: &Array2<f64>, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = x
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &c)| nearest_mean(means, row.view()) == c)
        .count();
    hits as f64 / labels.len() as f64
}

/// Generates the zoo in memory. Noise draws are shared across models so
/// models differ only in their separation rate.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthModel>> {
    cfg.validate()?;
    let u = class_directions(cfg);
    let labels = class_labels(cfg.n_classes, cfg.per_class);
    let n = labels.len();
    let layer_noise: Vec<Array2<f64>> = (0..cfg.n_layers)
        .map(|l| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[1, l as u64]));
            normal_matrix(n, cfg.dims, &mut rng)
        })
        .collect();
    let holdout_labels = class_labels(cfg.n_classes, cfg.holdout_per_class);
    let holdout_noise = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[2]));
        normal_matrix(holdout_labels.len(), cfg.dims, &mut rng)
    };

    (0..cfg.n_models)
        .map(|m| {
            let rate = cfg.rate(m);
            let model_id = format!("model_{m:02}");
            let mut layers = Vec::with_capacity(cfg.n_layers);
            let mut last = Array2::zeros((0, 0));
            for (l, noise) in layer_noise.iter().enumerate() {
                let depth = (l + 1) as f64 / cfg.n_layers as f64;
                let raw = blobs(&u, &labels, rate * depth, noise);
                if l + 1 == cfg.n_layers {
                    last = raw.clone();
                }
                let fs = FeatureSet::with_classes(
                    normalize_scale(raw),
                    labels.clone(),
                    cfg.n_classes,
                    &model_id,
                    format!("layer_{}", l + 1),
                )?;
                layers.push(fs);
            }
            let means = class_means(&last, &labels, cfg.n_classes);
            let holdout = blobs(&u, &holdout_labels, rate, &holdout_noise);
            Ok(SynthModel {
                model_id,
                rate,
                train_accuracy: nearest_mean_accuracy(&means, &last, &labels),
                test_accuracy: nearest_mean_accuracy(&means, &holdout, &holdout_labels),
                layers,
            })
        })
        .collect()
}

/// Writes features, labels and `manifest.json` under `out`; returns the manifest path.
pub fn write_zoo(models: &[SynthModel], out: &Path) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(models.len());
    for model in models {
        let dir = out.join(&model.model_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut layers = Vec::with_capacity(model.layers.len());
        for fs in &model.layers {
            let features =
                PathBuf::from(&model.model_id).join(format!("{}_features.npy", fs.layer_id()));
            let labels =
                PathBuf::from(&model.model_id).join(format!("{}_labels.npy", fs.layer_id()));
            fs.save(&out.join(&features), &out.join(&labels))?;
            layers.push(LayerEntry {
                layer_id: fs.layer_id().to_string(),
                features,
                labels,
            });
        }
        entries.push(ModelEntry {
            model_id: model.model_id.clone(),
            train_accuracy: model.train_accuracy,
            test_accuracy: Some(model.test_accuracy),
            layers,
        });
    }
    let manifest = Manifest::new(entries, out)?;
    let path = out.join(MANIFEST_FILE);
    manifest.save(&path)?;
    Ok(path)
}

pub fn synthesize(cfg: &SynthConfig, out: &Path) -> Result<PathBuf> {
    write_zoo(&generate(cfg)?, out)
}
