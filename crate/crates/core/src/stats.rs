//! Correlation of complexity scores with accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares line `accuracy = slope * score + intercept` and its r².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub r_squared: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Squared Pearson correlation of `(scores, accuracies)` plus the univariate
/// least-squares fit of accuracy on score.
pub fn r_squared(scores: &[f64], accuracies: &[f64]) -> Result<LinearFit> {
    if scores.len() != accuracies.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores but {} accuracies",
            scores.len(),
            accuracies.len()
        )));
    }
    let n = scores.len();
    if n < 2 {
        return Err(Error::Precondition(format!(
            "correlation needs at least 2 points, got {n}"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(scores), mean(accuracies));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in scores.iter().zip(accuracies) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    // relative threshold so rescaled constant inputs are still caught
    let degenerate = |s: f64, v: &[f64]| {
        let scale = v.iter().map(|x| x * x).sum::<f64>();
        s <= 1e-24 * scale.max(f64::MIN_POSITIVE)
    };
    if degenerate(sxx, scores) || degenerate(syy, accuracies) {
        return Err(Error::ZeroVariance);
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        r_squared: ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0),
        slope,
        intercept: my - slope * mx,
    })
}
