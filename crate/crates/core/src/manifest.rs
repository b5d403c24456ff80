//! JSON manifest describing a model zoo: models, their accuracies and the
//! feature/label files of every probed layer.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{load_feature_set, FeatureSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer_id: String,
    pub features: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model_id: String,
    pub train_accuracy: f64,
    #[serde(default)]
    pub test_accuracy: Option<f64>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub models: Vec<ModelEntry>,
    /// Directory that relative layer paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(models: Vec<ModelEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            models,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for model in &self.models {
            if !ids.insert(model.model_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate model_id {:?}",
                    model.model_id
                )));
            }
            let in_unit = |a: f64| (0.0..=1.0).contains(&a);
            if !in_unit(model.train_accuracy) {
                return Err(Error::Manifest(format!(
                    "model {:?}: train_accuracy {} outside [0, 1]",
                    model.model_id, model.train_accuracy
                )));
            }
            if let Some(t) = model.test_accuracy.filter(|&t| !in_unit(t)) {
                return Err(Error::Manifest(format!(
                    "model {:?}: test_accuracy {t} outside [0, 1]",
                    model.model_id
                )));
            }
            if model.layers.is_empty() {
                return Err(Error::Manifest(format!(
                    "model {:?} lists no layers",
                    model.model_id
                )));
            }
            let mut layers = HashSet::new();
            for layer in &model.layers {
                if !layers.insert(layer.layer_id.as_str()) {
                    return Err(Error::Manifest(format!(
                        "model {:?}: duplicate layer_id {:?}",
                        model.model_id, layer.layer_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn load_layer(&self, model: &ModelEntry, layer: &LayerEntry) -> Result<FeatureSet> {
        load_feature_set(
            &self.resolve(&layer.features),
            &self.resolve(&layer.labels),
            &model.model_id,
            &layer.layer_id,
        )
    }
}
