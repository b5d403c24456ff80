//! Run reports: a JSON document with per-measure fits and per-model scores,
//! plus a flat CSV of every layer value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evaluation::{ModelFailure, ZooScores};

pub const REPORT_FILE: &str = "report.json";
pub const CSV_FILE: &str = "scores.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_id: String,
    pub aggregate: f64,
    pub per_layer: Map<String, Value>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub measure: String,
    /// Absent when fewer than two models carry a test accuracy or a side
    /// of the correlation is constant.
    pub r_squared: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub models: Vec<ModelReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedModel {
    pub model_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub measures: Vec<MeasureReport>,
    #[serde(default)]
    pub failed_models: Vec<FailedModel>,
}

impl Report {
    pub fn from_scores(zoo: &ZooScores) -> Self {
        let measures = zoo
            .measures
            .iter()
            .enumerate()
            .map(|(mi, &measure)| {
                let fit = match zoo.correlate(measure) {
                    Ok(r) => Some((r.r_squared, r.slope, r.intercept)),
                    Err(e) => {
                        log::warn!("no correlation for {measure}: {e}");
                        None
                    }
                };
                MeasureReport {
                    measure: measure.name().to_string(),
                    r_squared: fit.map(|f| f.0),
                    slope: fit.map(|f| f.1),
                    intercept: fit.map(|f| f.2),
                    models: zoo
                        .models
                        .iter()
                        .map(|m| {
                            let score = &m.scores[mi];
                            ModelReport {
                                model_id: m.model_id.clone(),
                                aggregate: score.aggregate,
                                per_layer: score
                                    .per_layer
                                    .iter()
                                    .map(|(l, v)| (l.clone(), Value::from(*v)))
                                    .collect(),
                                test_accuracy: m.test_accuracy,
                            }
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            measures,
            failed_models: zoo
                .failures
                .iter()
                .map(|ModelFailure { model_id, error }| FailedModel {
                    model_id: model_id.clone(),
                    error: error.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Report = serde_json::from_str(&text)?;
        for m in &report.measures {
            for model in &m.models {
                if let Some((layer, _)) = model.per_layer.iter().find(|(_, v)| !v.is_number()) {
                    return Err(Error::Config(format!(
                        "report: non-numeric value for layer {layer} of {}",
                        model.model_id
                    )));
                }
            }
        }
        Ok(report)
    }

    /// Rows `(model_id, measure, layer_id, value)`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model_id", "measure", "layer_id", "value"])?;
        for m in &self.measures {
            for model in &m.models {
                for (layer, v) in &model.per_layer {
                    w.write_record([
                        model.model_id.as_str(),
                        m.measure.as_str(),
                        layer.as_str(),
                        &v.to_string(),
                    ])?;
                }
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.json` and `scores.csv` into `dir`, returning both paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(REPORT_FILE);
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(CSV_FILE);
        fs::write(&csv, self.to_csv()?).map_err(|e| Error::io(&csv, e))?;
        Ok((json, csv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ComplexityScore, Measure, ModelScores};

    fn zoo() -> ZooScores {
        let model = |id: &str, acc: Option<f64>, v: f64| ModelScores {
            model_id: id.into(),
            test_accuracy: acc,
            scores: vec![ComplexityScore {
                model_id: id.into(),
                measure: Measure::L2Trace,
                per_layer: vec![("b".into(), v), ("a".into(), v + 1.0)],
                aggregate: v + 0.5,
            }],
        };
        ZooScores {
            measures: vec![Measure::L2Trace],
            models: vec![
                model("m1", Some(0.9), 1.0),
                model("m2", Some(0.5), 3.0),
                model("m3", None, 2.0),
            ],
            failures: vec![ModelFailure {
                model_id: "m4".into(),
                error: "boom".into(),
            }],
        }
    }

    #[test]
    fn json_layout_and_round_trip() {
        let r = Report::from_scores(&zoo());
        let json = r.to_json().unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        let m = &v["measures"][0];
        assert_eq!(m["measure"], "l2_trace");
        assert!((m["r_squared"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m["models"].as_array().unwrap().len(), 3);
        assert_eq!(m["models"][2]["test_accuracy"], Value::Null);
        // layer order is manifest order, not sorted
        let keys: Vec<&String> = m["models"][0]["per_layer"]
            .as_object()
            .unwrap()
            .keys()
            .collect();
        assert_eq!(keys, ["b", "a"]);
        assert_eq!(v["failed_models"][0]["model_id"], "m4");

        let dir = tempfile::tempdir().unwrap();
        let (path, csv) = r.write(dir.path()).unwrap();
        assert_eq!(Report::load(&path).unwrap(), r);
        let csv = fs::read_to_string(csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
        assert!(csv.starts_with("model_id,measure,layer_id,value\nm1,l2_trace,b,1.0\n"));
    }

    #[test]
    fn missing_fit_is_null() {
        let mut z = zoo();
        z.models.truncate(1);
        let r = Report::from_scores(&z);
        assert_eq!(r.measures[0].r_squared, None);
        let v: Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["measures"][0]["slope"], Value::Null);
    }
}
