mod common;

use ndarray::{array, Array2};
use proptest::prelude::*;

use distortion_lens::gmm::{
    fit_class_models, fit_gmm, gmm_centroid_confusion, gmm_confidence_distortion, responsibilities,
    GmmComponent, GmmModel, GmmOptions,
};
use distortion_lens::FeatureSet;

fn density_2d(x: [f64; 2], mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [
        [cov[1][1] / det, -cov[0][1] / det],
        [-cov[1][0] / det, cov[0][0] / det],
    ];
    let d = [x[0] - mean[0], x[1] - mean[1]];
    let q =
        d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

struct Toy {
    weight: f64,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

fn toy_models() -> (Vec<Vec<Toy>>, Vec<GmmModel>) {
    let spec = vec![
        vec![
            Toy {
                weight: 0.3,
                mean: [0.0, 0.0],
                cov: [[1.0, 0.2], [0.2, 0.5]],
            },
            Toy {
                weight: 0.7,
                mean: [1.0, -1.0],
                cov: [[0.4, 0.0], [0.0, 0.4]],
            },
        ],
        vec![Toy {
            weight: 1.0,
            mean: [3.0, 1.0],
            cov: [[0.8, -0.3], [-0.3, 0.6]],
        }],
        vec![
            Toy {
                weight: 0.5,
                mean: [-2.0, 2.0],
                cov: [[0.3, 0.1], [0.1, 0.3]],
            },
            Toy {
                weight: 0.5,
                mean: [-1.0, 3.0],
                cov: [[0.5, 0.0], [0.0, 0.2]],
            },
        ],
    ];
    let models = spec
        .iter()
        .enumerate()
        .map(|(c, comps)| {
            let comps = comps
                .iter()
                .map(|t| {
                    let cov = array![[t.cov[0][0], t.cov[0][1]], [t.cov[1][0], t.cov[1][1]]];
                    GmmComponent::new(t.weight, t.mean.to_vec(), cov).unwrap()
                })
                .collect();
            GmmModel::from_components(c, comps).unwrap()
        })
        .collect();
    (spec, models)
}

fn toy_points() -> FeatureSet {
    let mut r = common::rng(5);
    let mut x = common::normal_matrix(30, 2, &mut r);
    let labels = common::blocked_labels(3, 10);
    let centers = [[0.5, -0.5], [3.0, 1.0], [-1.5, 2.5]];
    for (i, &c) in labels.iter().enumerate() {
        x[[i, 0]] += centers[c][0];
        x[[i, 1]] += centers[c][1];
    }
    FeatureSet::with_classes(x, labels, 3, "m", "l").unwrap()
}

#[test]
fn log_density_matches_formula() {
    let (spec, models) = toy_models();
    for x in [[0.0, 0.0], [1.5, -0.3], [-2.0, 4.0]] {
        for (comps, m) in spec.iter().zip(&models) {
            for (t, c) in comps.iter().zip(m.components()) {
                let got = c.log_density(ndarray::aview1(&x));
                let want = density_2d(x, t.mean, t.cov).ln();
                assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn confidence_matrix_matches_brute_force() {
    let (spec, models) = toy_models();
    let fs = toy_points();
    let dm = gmm_confidence_distortion(&models, &fs).unwrap();
    let mut want = Array2::<f64>::zeros((3, 3));
    for s in 0..fs.len() {
        let x = [fs.features()[[s, 0]], fs.features()[[s, 1]]];
        let joint: Vec<Vec<f64>> = spec
            .iter()
            .map(|comps| {
                comps
                    .iter()
                    .map(|t| t.weight * density_2d(x, t.mean, t.cov) / 3.0)
                    .collect()
            })
            .collect();
        let total: f64 = joint.iter().flatten().sum();
        for (j, comps) in joint.iter().enumerate() {
            let best = comps.iter().map(|p| p / total).fold(0.0, f64::max);
            want[[fs.labels()[s], j]] += best / 10.0;
        }
    }
    for (a, b) in dm.values().iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    assert!(dm.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn centroid_confusion_matches_brute_force() {
    let (spec, models) = toy_models();
    let fs = toy_points();
    let dm = gmm_centroid_confusion(&models, &fs).unwrap();
    let mut counts = Array2::<f64>::zeros((3, 3));
    for s in 0..fs.len() {
        let x = [fs.features()[[s, 0]], fs.features()[[s, 1]]];
        let mut best = (f64::INFINITY, 0);
        for (c, comps) in spec.iter().enumerate() {
            for t in comps {
                let d = (x[0] - t.mean[0]).powi(2) + (x[1] - t.mean[1]).powi(2);
                if d < best.0 {
                    best = (d, c);
                }
            }
        }
        counts[[fs.labels()[s], best.1]] += 1.0;
    }
    assert_eq!(dm.values(), &(counts / 10.0));
    for row in dm.values().rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn em_log_likelihood_is_monotone() {
    let opts = GmmOptions::default();
    for seed in 0..100u64 {
        let mut r = common::rng(1000 + seed);
        let n = 20 + (seed as usize % 5) * 10;
        let mut x = common::normal_matrix(n, 3, &mut r);
        for i in 0..n / 2 {
            x[[i, 0]] += 3.0;
        }
        let m = fit_gmm(x.view(), &opts, seed).unwrap();
        let h = m.log_likelihood_history();
        assert!(h.len() >= 2);
        for w in h.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} then {}", w[0], w[1]);
        }
    }
}

#[test]
fn two_blob_recovery() {
    let opts = GmmOptions {
        n_components: 2,
        ..GmmOptions::default()
    };
    let mut ok = 0;
    for seed in 0..10u64 {
        let mut r = common::rng(seed);
        let (na, nb) = (120, 80);
        let mut x = common::normal_matrix(na + nb, 2, &mut r) * 0.2;
        for i in 0..na {
            x[[i, 0]] -= 3.0;
        }
        for i in na..na + nb {
            x[[i, 0]] += 3.0;
            x[[i, 1]] += 2.0;
        }
        let m = fit_gmm(x.view(), &opts, seed).unwrap();
        let mut comps: Vec<_> = m.components().iter().collect();
        comps.sort_by(|a, b| a.mean()[0].partial_cmp(&b.mean()[0]).unwrap());
        let good = comps.len() == 2
            && (comps[0].mean()[0] + 3.0).abs() < 0.1
            && comps[0].mean()[1].abs() < 0.1
            && (comps[1].mean()[0] - 3.0).abs() < 0.1
            && (comps[1].mean()[1] - 2.0).abs() < 0.1
            && (comps[0].weight() - 0.6).abs() < 0.05
            && (comps[1].weight() - 0.4).abs() < 0.05;
        ok += usize::from(good);
    }
    assert!(ok >= 9, "{ok} of 10");
}

#[test]
fn fitting_is_deterministic() {
    let fs = common::blob_feature_set(3, 30, 3, 4.0, 9);
    let opts = GmmOptions::default();
    let a = fit_class_models(&fs, &opts, 4).unwrap();
    let b = fit_class_models(&fs, &opts, 4).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.components().iter().zip(y.components()) {
            assert_eq!(p.mean(), q.mean());
            assert_eq!(p.weight(), q.weight());
            assert_eq!(p.covariance(), q.covariance());
        }
    }
}

#[test]
fn separable_centroid_confusion_is_identity() {
    let fs = common::blob_feature_set(3, 25, 3, 30.0, 2);
    let models = fit_class_models(&fs, &GmmOptions::default(), 1).unwrap();
    let dm = gmm_centroid_confusion(&models, &fs).unwrap();
    assert_eq!(dm.values(), &Array2::<f64>::eye(3));
    assert_eq!(distortion_lens::normalized_trace(&dm), 1.0);
}

proptest! {
    #[test]
    fn responsibilities_sum_to_one(x0 in -50.0f64..50.0, x1 in -50.0f64..50.0) {
        let (_, models) = toy_models();
        let r = responsibilities(&models, ndarray::aview1(&[x0, x1]));
        prop_assert_eq!(r.len(), 5);
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
