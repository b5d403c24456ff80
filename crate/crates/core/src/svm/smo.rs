//! Soft-margin SVM dual solved by sequential minimal optimization.
//!
//! Minimizes `f(a) = 1/2 a'Qa - e'a` with `Q_ij = y_i y_j K_ij`, subject to
//! `0 <= a_i <= C` and `y'a = 0`. Working pairs are chosen with second-order
//! gain information (maximal violating `i`, best-gain `j`); the gradient is
//! kept up to date against a precomputed kernel matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoOptions {
    /// Stop when the maximal KKT violation gap falls below this.
    pub tol: f64,
    /// Give up after this many consecutive sweeps (N pair updates each)
    /// without a new smallest violation gap.
    pub max_passes: usize,
}

impl Default for SmoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_passes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset `b` of the decision function `sum_i a_i y_i K(x_i, x) + b`.
    pub bias: f64,
    /// Dual objective `sum a - 1/2 a'Qa` (maximized).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the dual for a precomputed kernel matrix and labels in {-1, +1}.
pub fn solve_dual(
    kernel: &Array2<f64>,
    y: &[f64],
    c: f64,
    opts: &SmoOptions,
) -> Result<DualSolution> {
    let n = y.len();
    if kernel.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "kernel {:?} does not match {n} labels",
            kernel.dim()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Precondition(format!(
            "box constraint C must be positive, got {c}"
        )));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Precondition("labels must be +1 or -1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let diag: Vec<f64> = (0..n).map(|i| kernel[[i, i]]).collect();

    let mut iterations = 0;
    let mut best_gap = f64::INFINITY;
    let mut stalled_sweeps = 0;
    let mut converged = false;
    loop {
        let Some((i, j, gap)) = select_pair(kernel, y, &alpha, &grad, &diag, c) else {
            converged = true;
            break;
        };
        if gap < opts.tol {
            converged = true;
            break;
        }
        if gap < best_gap {
            best_gap = gap;
            stalled_sweeps = 0;
        }
        iterations += 1;
        if iterations % n == 0 {
            stalled_sweeps += 1;
            if stalled_sweeps >= opts.max_passes {
                log::warn!("smo stopped after {iterations} updates with violation gap {gap:e}");
                break;
            }
        }
        update_pair(kernel, y, &mut alpha, &mut grad, &diag, c, i, j);
    }

    let bias = -rho(y, &alpha, &grad, c);
    let objective = -alpha
        .iter()
        .zip(&grad)
        .map(|(a, g)| a * (g - 1.0))
        .sum::<f64>()
        / 2.0;
    Ok(DualSolution {
        alpha,
        bias,
        objective,
        iterations,
        converged,
    })
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Returns the working pair and the current violation gap `m(a) - M(a)`.
fn select_pair(
    kernel: &Array2<f64>,
    y: &[f64],
    alpha: &[f64],
    grad: &[f64],
    diag: &[f64],
    c: f64,
) -> Option<(usize, usize, f64)> {
    let n = y.len();
    let mut gmax = f64::NEG_INFINITY;
    let mut i = None;
    for t in 0..n {
        if in_up(y[t], alpha[t], c) {
            let v = -y[t] * grad[t];
            if v >= gmax {
                gmax = v;
                i = Some(t);
            }
        }
    }
    let i = i?;
    let mut gmin = f64::INFINITY;
    let mut best_obj = f64::INFINITY;
    let mut j = None;
    for t in 0..n {
        if !in_low(y[t], alpha[t], c) {
            continue;
        }
        let v = -y[t] * grad[t];
        gmin = gmin.min(v);
        let b = gmax - v;
        if b > 0.0 {
            let mut quad = diag[i] + diag[t] - 2.0 * kernel[[i, t]];
            if quad <= 0.0 {
                quad = TAU;
            }
            let obj = -(b * b) / quad;
            if obj <= best_obj {
                best_obj = obj;
                j = Some(t);
            }
        }
    }
    let gap = gmax - gmin;
    j.map(|j| (i, j, gap))
}

#[allow(clippy::too_many_arguments)]
fn update_pair(
    kernel: &Array2<f64>,
    y: &[f64],
    alpha: &mut [f64],
    grad: &mut [f64],
    diag: &[f64],
    c: f64,
    i: usize,
    j: usize,
) {
    let (old_i, old_j) = (alpha[i], alpha[j]);
    let mut quad = diag[i] + diag[j] - 2.0 * kernel[[i, j]];
    if quad <= 0.0 {
        quad = TAU;
    }
    if y[i] != y[j] {
        let delta = (-grad[i] - grad[j]) / quad;
        let diff = alpha[i] - alpha[j];
        alpha[i] += delta;
        alpha[j] += delta;
        if diff > 0.0 {
            if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = -diff;
        }
        if diff > 0.0 {
            if alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            }
        } else if alpha[j] > c {
            alpha[j] = c;
            alpha[i] = c + diff;
        }
    } else {
        let delta = (grad[i] - grad[j]) / quad;
        let sum = alpha[i] + alpha[j];
        alpha[i] -= delta;
        alpha[j] += delta;
        if sum > c {
            if alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            }
        } else if alpha[j] < 0.0 {
            alpha[j] = 0.0;
            alpha[i] = sum;
        }
        if sum > c {
            if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = sum;
        }
    }
    let di = alpha[i] - old_i;
    let dj = alpha[j] - old_j;
    let (yi, yj) = (y[i], y[j]);
    for (k, g) in grad.iter_mut().enumerate() {
        *g += y[k] * (yi * kernel[[i, k]] * di + yj * kernel[[j, k]] * dj);
    }
}

/// Threshold `rho` with `f(x) = sum a_i y_i K(x_i, x) - rho`: the mean of
/// `y_i g_i` over free vectors, or the midpoint of the feasible interval.
fn rho(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    }
}
