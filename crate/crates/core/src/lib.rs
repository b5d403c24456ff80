//! Layer-wise vector-quantization distortion measures for predicting how
//! well trained classifiers generalize.
//!
//! A model's intermediate-layer features are summarized by distortion
//! matrices (nearest-neighbour L2 distances, kPCA/GMM label distortion,
//! kernel-SVM confusion) and by the number of support vectors an RBF SVM
//! needs to fit them. Per-layer values are aggregated into complexity scores
//! that are correlated with test accuracy across a model zoo.

pub mod config;
pub mod distortion;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gmm;
pub mod kernel;
pub mod kpca;
pub mod manifest;
pub mod npy;
pub mod plot;
pub mod report;
pub mod seed;
pub mod stats;
pub mod svm;
pub mod synth;

pub use config::RunConfig;
pub use distortion::{l2_distortion_matrix, normalized_trace, DistortionKind, DistortionMatrix};
pub use error::{Error, Result};
pub use evaluation::{
    correlate_zoo, score_model, score_zoo, Aggregation, ComplexityScore, CorrelationReport,
    EvalConfig, Measure, ZooScores,
};
pub use features::FeatureSet;
pub use manifest::Manifest;
pub use report::Report;
pub use stats::{r_squared, LinearFit};
