//! Per-class Gaussian mixture models fitted by EM, and the label-distortion
//! matrices built from them.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::{DistortionKind, DistortionMatrix};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::seed;

/// Added to every covariance diagonal in each M-step.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmOptions {
    pub n_components: usize,
    pub max_iter: usize,
    /// Stop once the per-sample log-likelihood gains less than `tol * max(|ll|, 1)`.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            n_components: 3,
            max_iter: 200,
            tol: 1e-6,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmComponent {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    log_det: f64,
}

impl GmmComponent {
    pub fn new(weight: f64, mean: Vec<f64>, covariance: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.dim() != (d, d) {
            return Err(Error::ShapeMismatch(format!(
                "covariance {:?} does not match mean length {d}",
                covariance.dim()
            )));
        }
        if weight.is_nan() || weight <= 0.0 {
            return Err(Error::Precondition(format!(
                "component weight {weight} must be > 0"
            )));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| covariance[[i, j]]);
        Self::from_parts(weight, DVector::from_vec(mean), cov)
            .ok_or_else(|| Error::Precondition("covariance is not positive definite".into()))
    }

    fn from_parts(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Option<Self> {
        let chol = covariance.clone().cholesky()?;
        let chol_lower = chol.l();
        let log_det = 2.0 * chol_lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Some(Self {
            weight,
            mean,
            covariance,
            chol_lower,
            log_det,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> Array2<f64> {
        let d = self.mean.len();
        Array2::from_shape_fn((d, d), |(i, j)| self.covariance[(i, j)])
    }

    pub fn log_density(&self, x: ArrayView1<'_, f64>) -> f64 {
        let d = self.mean.len();
        let diff = DVector::from_fn(d, |i, _| x[i] - self.mean[i]);
        let z = self
            .chol_lower
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        -0.5 * (d as f64 * LN_2PI + self.log_det + z.norm_squared())
    }
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    class_id: usize,
    components: Vec<GmmComponent>,
    degenerate: bool,
    log_likelihood: Vec<f64>,
}

impl GmmModel {
    pub fn from_components(class_id: usize, components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Precondition(
                "a mixture needs at least one component".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "component weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            class_id,
            components,
            degenerate: false,
            log_likelihood: Vec::new(),
        })
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn with_class(mut self, class_id: usize) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// True when every input point was identical and a single floor-covariance
    /// component was returned instead of an EM fit.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Mean per-sample log-likelihood after initialization and after every EM
    /// iteration of the retained restart.
    pub fn log_likelihood_history(&self) -> &[f64] {
        &self.log_likelihood
    }

    pub fn mean_log_likelihood(&self, points: ArrayView2<'_, f64>) -> f64 {
        let total: f64 = points
            .rows()
            .into_iter()
            .map(|x| {
                log_sum_exp(
                    self.components
                        .iter()
                        .map(|c| c.weight.ln() + c.log_density(x)),
                )
            })
            .sum();
        total / points.nrows() as f64
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn kmeans_pp(points: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = points.nrows();
    let mut centers = vec![rng.random_range(0..m)];
    let mut nearest: Vec<f64> = (0..m)
        .map(|i| squared_distance(points.row(i), points.row(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = m - 1;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centers.push(next);
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(squared_distance(points.row(i), points.row(next)));
        }
    }
    centers
}

/// M-step from a responsibility matrix (M × K).
fn maximize(points: ArrayView2<'_, f64>, resp: &Array2<f64>) -> Vec<GmmComponent> {
    let (m, d) = points.dim();
    let k = resp.ncols();
    (0..k)
        .map(|c| {
            let nk: f64 = resp.column(c).sum() + 10.0 * f64::EPSILON;
            let mut mean = DVector::zeros(d);
            for i in 0..m {
                let r = resp[[i, c]];
                for j in 0..d {
                    mean[j] += r * points[[i, j]];
                }
            }
            mean /= nk;
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..m {
                let r = resp[[i, c]];
                if r == 0.0 {
                    continue;
                }
                for a in 0..d {
                    let da = points[[i, a]] - mean[a];
                    for b in 0..=a {
                        cov[(a, b)] += r * da * (points[[i, b]] - mean[b]);
                    }
                }
            }
            cov /= nk;
            for a in 0..d {
                for b in 0..a {
                    cov[(b, a)] = cov[(a, b)];
                }
                cov[(a, a)] += COVARIANCE_FLOOR;
            }
            let weight = nk / m as f64;
            regularized_component(weight, mean, cov)
        })
        .collect()
}

/// Builds a component, bumping the diagonal until the Cholesky factorization succeeds.
fn regularized_component(weight: f64, mean: DVector<f64>, mut cov: DMatrix<f64>) -> GmmComponent {
    let mut bump = COVARIANCE_FLOOR;
    loop {
        if let Some(c) = GmmComponent::from_parts(weight, mean.clone(), cov.clone()) {
            return c;
        }
        for a in 0..cov.nrows() {
            cov[(a, a)] += bump;
        }
        bump *= 10.0;
    }
}

/// E-step: responsibilities and mean per-sample log-likelihood.
fn expect(points: ArrayView2<'_, f64>, comps: &[GmmComponent]) -> (Array2<f64>, f64) {
    let m = points.nrows();
    let k = comps.len();
    let mut resp = Array2::zeros((m, k));
    let mut total = 0.0;
    let log_w: Vec<f64> = comps.iter().map(|c| c.weight.ln()).collect();
    for (i, x) in points.rows().into_iter().enumerate() {
        let logs: Vec<f64> = comps
            .iter()
            .zip(&log_w)
            .map(|(c, lw)| lw + c.log_density(x))
            .collect();
        let norm = log_sum_exp(logs.iter().copied());
        total += norm;
        for (c, l) in logs.iter().enumerate() {
            resp[[i, c]] = (l - norm).exp();
        }
    }
    (resp, total / m as f64)
}

fn em_run(
    points: ArrayView2<'_, f64>,
    opts: &GmmOptions,
    rng: &mut ChaCha8Rng,
) -> (Vec<GmmComponent>, Vec<f64>) {
    let m = points.nrows();
    let k = opts.n_components;
    let centers = kmeans_pp(points, k, rng);
    let mut resp = Array2::zeros((m, k));
    for i in 0..m {
        let mut best = (0, f64::INFINITY);
        for (c, &ci) in centers.iter().enumerate() {
            let d = squared_distance(points.row(i), points.row(ci));
            if d < best.1 {
                best = (c, d);
            }
        }
        resp[[i, best.0]] = 1.0;
    }
    let mut comps = maximize(points, &resp);
    let (r, mut ll) = expect(points, &comps);
    resp = r;
    let mut history = vec![ll];
    for _ in 0..opts.max_iter {
        comps = maximize(points, &resp);
        let (r, next) = expect(points, &comps);
        resp = r;
        history.push(next);
        let gain = next - ll;
        ll = next;
        if gain < opts.tol * ll.abs().max(1.0) {
            break;
        }
    }
    (comps, history)
}

/// Fits a Gaussian mixture to `points` (M × d) by EM with k-means++ seeding.
///
/// The best of `opts.restarts` runs (by final log-likelihood) is kept. The
/// returned model has class id 0; use [`GmmModel::with_class`] to label it.
pub fn fit_gmm(points: ArrayView2<'_, f64>, opts: &GmmOptions, seed: u64) -> Result<GmmModel> {
    let (m, d) = points.dim();
    if opts.n_components == 0 {
        return Err(Error::Precondition(
            "n_components must be at least 1".into(),
        ));
    }
    if m < opts.n_components {
        return Err(Error::Precondition(format!(
            "{m} points cannot support {} mixture components",
            opts.n_components
        )));
    }
    if d == 0 {
        return Err(Error::Precondition("points have zero dimensions".into()));
    }
    let first = points.row(0);
    if points.rows().into_iter().all(|r| r == first) {
        log::warn!("gmm: all {m} points identical; returning a single floor-covariance component");
        let comp = GmmComponent::from_parts(
            1.0,
            DVector::from_iterator(d, first.iter().copied()),
            DMatrix::identity(d, d) * COVARIANCE_FLOOR,
        )
        .expect("floor covariance is positive definite");
        return Ok(GmmModel {
            class_id: 0,
            components: vec![comp],
            degenerate: true,
            log_likelihood: Vec::new(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<GmmComponent>, Vec<f64>)> = None;
    for _ in 0..opts.restarts.max(1) {
        let (comps, history) = em_run(points, opts, &mut rng);
        let ll = *history.last().expect("history is never empty");
        if best
            .as_ref()
            .is_none_or(|(_, h)| ll > *h.last().expect("history is never empty"))
        {
            best = Some((comps, history));
        }
    }
    let (mut components, log_likelihood) = best.expect("at least one restart");
    // renormalize the 10*eps mass added to each component
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    Ok(GmmModel {
        class_id: 0,
        components,
        degenerate: false,
        log_likelihood,
    })
}

/// Fits one mixture per class of `coords`; independent per-class seeds.
pub fn fit_class_models(
    coords: &FeatureSet,
    opts: &GmmOptions,
    seed: u64,
) -> Result<Vec<GmmModel>> {
    (0..coords.num_classes())
        .into_par_iter()
        .map(|c| {
            let pts = coords.class_features(c);
            fit_gmm(pts.view(), opts, seed::derive(seed, &[c as u64]))
                .map(|m| m.with_class(c))
                .map_err(|e| Error::Precondition(format!("class {c}: {e}")))
        })
        .collect()
}

fn check_models(models: &[GmmModel], num_classes: usize) -> Result<()> {
    if models.len() != num_classes || models.iter().enumerate().any(|(i, m)| m.class_id != i) {
        return Err(Error::Precondition(format!(
            "expected one mixture per class 0..{num_classes}, ordered by class id"
        )));
    }
    Ok(())
}

/// Posterior over every (class, component) pair under a uniform class prior.
///
/// Output is flattened class-major: all components of class 0, then class 1, ...
pub fn responsibilities(models: &[GmmModel], x: ArrayView1<'_, f64>) -> Vec<f64> {
    let log_prior = -(models.len() as f64).ln();
    let logs: Vec<f64> = models
        .iter()
        .flat_map(|m| {
            m.components
                .iter()
                .map(move |c| log_prior + c.weight.ln() + c.log_density(x))
        })
        .collect();
    let norm = log_sum_exp(logs.iter().copied());
    logs.iter().map(|l| (l - norm).exp()).collect()
}

/// Entry `[i][j]`: mean over class-`i` samples of the largest posterior held
/// by any single component of class `j`.
pub fn gmm_confidence_distortion(
    models: &[GmmModel],
    coords: &FeatureSet,
) -> Result<DistortionMatrix> {
    let c = coords.num_classes();
    check_models(models, c)?;
    let offsets: Vec<usize> = models
        .iter()
        .scan(0, |acc, m| {
            let start = *acc;
            *acc += m.components.len();
            Some(start)
        })
        .collect();
    let per_sample: Vec<Vec<f64>> = (0..coords.len())
        .into_par_iter()
        .map(|s| {
            let r = responsibilities(models, coords.row(s));
            models
                .iter()
                .zip(&offsets)
                .map(|(m, &o)| {
                    r[o..o + m.components.len()]
                        .iter()
                        .copied()
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect();
    let mut values = Array2::<f64>::zeros((c, c));
    let counts = coords.class_counts();
    for (s, row) in per_sample.iter().enumerate() {
        let i = coords.labels()[s];
        for (j, v) in row.iter().enumerate() {
            values[[i, j]] += v;
        }
    }
    for i in 0..c {
        for j in 0..c {
            values[[i, j]] = (values[[i, j]] / counts[i] as f64).min(1.0);
        }
    }
    DistortionMatrix::new(
        values,
        DistortionKind::GmmConfidence,
        coords.model_id(),
        coords.layer_id(),
    )
}

/// Class owning the component mean nearest to `x`; ties go to the lower
/// class id, then the lower component index.
pub fn nearest_centroid_class(models: &[GmmModel], x: ArrayView1<'_, f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for m in models {
        for comp in &m.components {
            let d: f64 = x
                .iter()
                .zip(comp.mean.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.1 {
                best = (m.class_id, d);
            }
        }
    }
    best.0
}

/// Confusion matrix of the closest-mixture-centroid classifier.
pub fn gmm_centroid_confusion(
    models: &[GmmModel],
    coords: &FeatureSet,
) -> Result<DistortionMatrix> {
    let c = coords.num_classes();
    check_models(models, c)?;
    let mut counts = Array2::<usize>::zeros((c, c));
    for (s, &label) in coords.labels().iter().enumerate() {
        counts[[label, nearest_centroid_class(models, coords.row(s))]] += 1;
    }
    DistortionMatrix::new(
        row_normalize(&counts),
        DistortionKind::GmmConfusion,
        coords.model_id(),
        coords.layer_id(),
    )
}

pub(crate) fn row_normalize(counts: &Array2<usize>) -> Array2<f64> {
    let mut out = Array2::zeros(counts.dim());
    for (i, row) in counts.rows().into_iter().enumerate() {
        let total: usize = row.sum();
        for (j, &n) in row.iter().enumerate() {
            out[[i, j]] = n as f64 / total as f64;
        }
    }
    out
}

/// 2-D view of one fitted component (first two coordinates), for scatter plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipseRecord {
    pub class_id: usize,
    pub component: usize,
    pub weight: f64,
    pub center: [f64; 2],
    /// One-standard-deviation semi-axes, major first.
    pub semi_axes: [f64; 2],
    /// Rotation of the major axis from the x axis, radians.
    pub angle: f64,
}

pub fn ellipse_records(models: &[GmmModel]) -> Vec<EllipseRecord> {
    let mut out = Vec::new();
    for m in models {
        for (k, comp) in m.components.iter().enumerate() {
            if comp.mean.len() < 2 {
                continue;
            }
            let (a, b, c) = (
                comp.covariance[(0, 0)],
                comp.covariance[(0, 1)],
                comp.covariance[(1, 1)],
            );
            let half_tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let (l1, l2) = (half_tr + disc, (half_tr - disc).max(0.0));
            out.push(EllipseRecord {
                class_id: m.class_id,
                component: k,
                weight: comp.weight,
                center: [comp.mean[0], comp.mean[1]],
                semi_axes: [l1.sqrt(), l2.sqrt()],
                angle: 0.5 * (2.0 * b).atan2(a - c),
            });
        }
    }
    out
}
