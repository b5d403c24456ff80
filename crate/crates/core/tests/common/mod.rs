//! Independent reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use distortion_lens::FeatureSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Class-blocked labels with `per_class` samples of each class.
pub fn blocked_labels(classes: usize, per_class: usize) -> Vec<usize> {
    (0..classes).flat_map(|c| vec![c; per_class]).collect()
}

pub fn random_feature_set(classes: usize, per_class: usize, dims: usize, seed: u64) -> FeatureSet {
    let mut r = rng(seed);
    let x = normal_matrix(classes * per_class, dims, &mut r);
    FeatureSet::with_classes(x, blocked_labels(classes, per_class), classes, "m", "l").unwrap()
}

/// Gaussian blobs centered at `spread * e_c` (coordinate axes) with unit noise.
pub fn blob_feature_set(
    classes: usize,
    per_class: usize,
    dims: usize,
    spread: f64,
    seed: u64,
) -> FeatureSet {
    let mut r = rng(seed);
    let mut x = normal_matrix(classes * per_class, dims, &mut r);
    let labels = blocked_labels(classes, per_class);
    for (i, &c) in labels.iter().enumerate() {
        x[[i, c % dims]] += spread;
    }
    FeatureSet::with_classes(x, labels, classes, "m", "l").unwrap()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn row(x: &Array2<f64>, i: usize) -> Vec<f64> {
    x.row(i).to_vec()
}

/// Mean over class-i samples of the distance to the nearest class-j sample,
/// excluding the sample itself when i == j.
pub fn brute_l2_matrix(fs: &FeatureSet) -> Array2<f64> {
    let c = fs.num_classes();
    let x = fs.features();
    let labels = fs.labels();
    let mut out = Array2::zeros((c, c));
    for i in 0..c {
        for j in 0..c {
            let mut total = 0.0;
            let mut count = 0;
            for a in 0..fs.len() {
                if labels[a] != i {
                    continue;
                }
                let mut best = f64::INFINITY;
                for b in 0..fs.len() {
                    if labels[b] != j || a == b {
                        continue;
                    }
                    best = best.min(euclid(&row(x, a), &row(x, b)));
                }
                total += best;
                count += 1;
            }
            out[[i, j]] = total / count as f64;
        }
    }
    out
}

pub fn brute_rbf(x: &Array2<f64>, y: &Array2<f64>, gamma: f64) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), y.nrows()), |(i, j)| {
        let d = euclid(&row(x, i), &row(y, j));
        (-gamma * d * d).exp()
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with eigenvectors as matching columns.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let scale: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[[b, b]].partial_cmp(&m[[a, a]]).unwrap());
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

/// Centering by the textbook formula `K - 1K - K1 + 1K1`.
pub fn formula_center(k: &Array2<f64>) -> Array2<f64> {
    let n = k.nrows();
    let one = Array2::from_elem((n, n), 1.0 / n as f64);
    k - &one.dot(k) - &k.dot(&one) + &one.dot(k).dot(&one)
}

/// Explicit feature vectors `V sqrt(Lambda)` with `Phi Phi' = K` for a PSD kernel.
pub fn explicit_features(k: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = jacobi_eigen(k);
    let n = k.nrows();
    Array2::from_shape_fn((n, n), |(i, c)| vecs[[i, c]] * vals[c].max(0.0).sqrt())
}

/// Centered kernel between rows `test` and `train` of an augmented point set,
/// computed as inner products of explicitly centered feature vectors.
pub fn feature_space_cross_center(
    k_all: &Array2<f64>,
    train: &[usize],
    test: &[usize],
) -> Array2<f64> {
    let phi = explicit_features(k_all);
    let dim = phi.ncols();
    let mean: Vec<f64> = (0..dim)
        .map(|c| train.iter().map(|&i| phi[[i, c]]).sum::<f64>() / train.len() as f64)
        .collect();
    Array2::from_shape_fn((test.len(), train.len()), |(a, b)| {
        (0..dim)
            .map(|c| (phi[[test[a], c]] - mean[c]) * (phi[[train[b], c]] - mean[c]))
            .sum()
    })
}

/// Kernel PCA as linear PCA in an explicit feature space: features for every
/// point come from the augmented kernel, are centered with the training mean,
/// and are projected onto the top-`d` covariance axes of the training part.
/// Returns projected coordinates for the `train` and `test` rows.
pub fn feature_space_kpca(
    k_all: &Array2<f64>,
    train: &[usize],
    test: &[usize],
    d: usize,
) -> (Array2<f64>, Array2<f64>) {
    let phi = explicit_features(k_all);
    let dim = phi.ncols();
    let n = train.len();
    let mean: Vec<f64> = (0..dim)
        .map(|c| train.iter().map(|&i| phi[[i, c]]).sum::<f64>() / n as f64)
        .collect();
    let centered = |i: usize| -> Vec<f64> { (0..dim).map(|c| phi[[i, c]] - mean[c]).collect() };
    let mut scatter = Array2::<f64>::zeros((dim, dim));
    for &i in train {
        let v = centered(i);
        for a in 0..dim {
            for b in 0..dim {
                scatter[[a, b]] += v[a] * v[b];
            }
        }
    }
    let (_, axes) = jacobi_eigen(&scatter);
    let project = |rows: &[usize]| {
        Array2::from_shape_fn((rows.len(), d), |(r, k)| {
            let v = centered(rows[r]);
            (0..dim).map(|a| v[a] * axes[[a, k]]).sum()
        })
    };
    (project(train), project(test))
}

/// Asserts two coordinate matrices agree up to a global sign per column.
pub fn assert_close_up_to_sign(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
    assert_eq!(a.dim(), b.dim());
    for k in 0..a.ncols() {
        let dot: f64 = a
            .column(k)
            .iter()
            .zip(b.column(k))
            .map(|(x, y)| x * y)
            .sum();
        let s = if dot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..a.nrows() {
            let diff = (a[[i, k]] - s * b[[i, k]]).abs();
            assert!(
                diff < tol,
                "column {k} row {i}: {} vs {} (diff {diff:e})",
                a[[i, k]],
                s * b[[i, k]]
            );
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-13 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

#[derive(Debug, Clone)]
pub struct QpOptimum {
    pub alpha: Vec<f64>,
    pub objective: f64,
}

/// Exhaustive active-set solver for the SVM dual
/// `max sum(a) - 1/2 a'Qa, 0 <= a <= C, y'a = 0`.
///
/// Every assignment of each `a_i` to {0, C, free} is tried; for free
/// variables the stationarity equations together with the equality
/// constraint form a linear system in `(a_free, b)`. The first assignment
/// satisfying all KKT conditions is the optimum (the problem is convex).
pub fn brute_force_dual(k: &Array2<f64>, y: &[f64], c: f64) -> QpOptimum {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[[i, j]];
    let total = 3usize.pow(n as u32);
    let mut best: Option<QpOptimum> = None;
    for code in 0..total {
        // state: 0 = lower bound, 1 = upper bound, 2 = free
        let mut state = vec![0u8; n];
        let mut t = code;
        for s in state.iter_mut() {
            *s = (t % 3) as u8;
            t /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state
            .iter()
            .map(|&s| if s == 1 { c } else { 0.0 })
            .collect();
        if free.is_empty() {
            let eq: f64 = (0..n).map(|i| y[i] * alpha[i]).sum();
            if eq.abs() > 1e-9 * c {
                continue;
            }
            // b is any value satisfying the bound conditions; check interval
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for i in 0..n {
                let g: f64 = (0..n).map(|j| q(i, j) * alpha[j]).sum::<f64>() - 1.0;
                // stationarity residual r_i = g_i + b y_i; need r_i >= 0 at 0, <= 0 at C
                let need_ge = state[i] == 0;
                let bound = -g * y[i];
                match (need_ge, y[i] > 0.0) {
                    (true, true) | (false, false) => lo = lo.max(bound),
                    (true, false) | (false, true) => hi = hi.min(bound),
                }
            }
            if lo > hi + 1e-9 {
                continue;
            }
        } else {
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut rhs = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    a[r][cc] = q(i, j);
                }
                a[r][m] = y[i];
                let fixed: f64 = (0..n)
                    .filter(|j| state[*j] != 2)
                    .map(|j| q(i, j) * alpha[j])
                    .sum();
                rhs[r] = 1.0 - fixed;
            }
            for (cc, &j) in free.iter().enumerate() {
                a[m][cc] = y[j];
            }
            rhs[m] = -(0..n)
                .filter(|j| state[*j] != 2)
                .map(|j| y[j] * alpha[j])
                .sum::<f64>();
            let Some(sol) = solve_linear(a, rhs) else {
                continue;
            };
            if free.iter().zip(&sol).any(|(_, &v)| v <= 0.0 || v >= c) {
                continue;
            }
            for (&i, &v) in free.iter().zip(&sol) {
                alpha[i] = v;
            }
            let b = sol[m];
            let tol = 1e-9 * (1.0 + c);
            let ok = (0..n).filter(|&i| state[i] != 2).all(|i| {
                let g: f64 = (0..n).map(|j| q(i, j) * alpha[j]).sum::<f64>() - 1.0;
                let r = g + b * y[i];
                if state[i] == 0 {
                    r >= -tol
                } else {
                    r <= tol
                }
            });
            if !ok {
                continue;
            }
        }
        let quad: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| alpha[i] * alpha[j] * q(i, j))
            .sum();
        let objective = alpha.iter().sum::<f64>() - 0.5 * quad;
        if best.as_ref().is_none_or(|bst| objective > bst.objective) {
            best = Some(QpOptimum { alpha, objective });
        }
    }
    best.expect("convex dual always has a KKT point")
}

/// One-vs-one vote tally by explicit counting over every class pair.
pub fn brute_vote(num_classes: usize, decisions: &[(usize, usize, f64)]) -> usize {
    let mut votes = vec![0usize; num_classes];
    let mut strength = vec![0.0f64; num_classes];
    for &(p, n, f) in decisions {
        if f > 0.0 {
            votes[p] += 1;
            strength[p] += f.abs();
        } else if f < 0.0 {
            votes[n] += 1;
            strength[n] += f.abs();
        }
    }
    let mut best = 0;
    for c in 1..num_classes {
        if votes[c] > votes[best] || (votes[c] == votes[best] && strength[c] > strength[best]) {
            best = c;
        }
    }
    best
}
