mod common;

use std::collections::HashMap;

use common::{hc1, invert_dense, mean, ols};
use multisite::metamodel::{build_design, design_width, fit_ols_crse, predict, MetaDesign, MetaRow};
use multisite::rng::rng_from_seed;
use multisite::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const NAMES: [&str; 3] = ["size", "dose", "arm"];
const LEVELS: [&[&str]; 3] = [&["10", "20", "40"], &["lo", "hi"], &["a", "b", "c"]];

fn reference() -> HashMap<String, String> {
    [("size", "10"), ("dose", "lo"), ("arm", "a")]
        .iter()
        .map(|(f, l)| (f.to_string(), l.to_string()))
        .collect()
}

/// Fully crossed rows, `per_cluster` rows per cluster, standard normal noise.
fn crossed(reps: usize, per_cluster: usize, seed: u64, mean_fn: impl Fn(&[&str]) -> f64) -> Vec<MetaRow> {
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::new();
    let mut i = 0;
    for _ in 0..reps {
        for a in LEVELS[0] {
            for b in LEVELS[1] {
                for c in LEVELS[2] {
                    let levels = [*a, *b, *c];
                    let z: f64 = StandardNormal.sample(&mut rng);
                    rows.push(MetaRow {
                        levels: levels.iter().map(|s| s.to_string()).collect(),
                        y: mean_fn(&levels) + z,
                        cluster: format!("g{}", i / per_cluster),
                    });
                    i += 1;
                }
            }
        }
    }
    rows
}

fn x_rows(d: &MetaDesign) -> Vec<Vec<f64>> {
    (0..d.x.nrows()).map(|i| d.x.row(i).iter().copied().collect()).collect()
}

fn pretty_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn widths() {
    assert_eq!(design_width(&[2]), 2);
    assert_eq!(design_width(&[2, 2]), 4);
    let rows = crossed(1, 1, 0, |_| 0.0);
    assert_eq!(build_design(&NAMES, &rows, &reference()).unwrap().names.len(), design_width(&[3, 2, 3]));
}

#[test]
fn full_study_design_width() {
    // J, n_bar, sigma (5 levels each), cv (4), model and method (3 each)
    let counts = [5usize, 5, 5, 4, 3, 3];
    // by hand: 1 + 19 main effects + 148 two-way terms
    assert_eq!(design_width(&counts), 168);
    let mut rows = Vec::new();
    let mut idx = vec![0usize; counts.len()];
    'outer: loop {
        rows.push(MetaRow {
            levels: idx.iter().enumerate().map(|(f, l)| format!("f{f}l{l}")).collect(),
            y: rows.len() as f64,
            cluster: (rows.len() % 50).to_string(),
        });
        for f in (0..counts.len()).rev() {
            idx[f] += 1;
            if idx[f] < counts[f] {
                continue 'outer;
            }
            idx[f] = 0;
        }
        break;
    }
    let names = ["J", "n", "s", "cv", "model", "method"];
    let d = build_design(&names, &rows, &HashMap::new()).unwrap();
    assert_eq!(d.names.len(), 168);
    // no column repeats
    let unique: std::collections::HashSet<&String> = d.names.iter().collect();
    assert_eq!(unique.len(), 168);
}

#[test]
fn coefficients_match_normal_equations() {
    let rows = crossed(6, 3, 1, |l| if l[1] == "hi" { 0.5 } else { 0.0 });
    let d = build_design(&NAMES, &rows, &reference()).unwrap();
    let fit = fit_ols_crse(&d).unwrap();
    let y: Vec<f64> = d.y.iter().copied().collect();
    let oracle = ols(&x_rows(&d), &y);
    for (b, o) in fit.coefficients.iter().zip(&oracle) {
        assert!(pretty_close(*b, *o, 1e-8), "{b} vs {o}");
    }
    // residuals orthogonal to every column
    let xte = d.x.transpose() * &fit.residuals;
    assert!(xte.iter().all(|v| v.abs() < 1e-8));
}

#[test]
fn singleton_clusters_reduce_to_hc1() {
    let rows = crossed(4, 1, 2, |_| 1.0);
    let d = build_design(&NAMES, &rows, &reference()).unwrap();
    let fit = fit_ols_crse(&d).unwrap();
    let y: Vec<f64> = d.y.iter().copied().collect();
    let oracle = hc1(&x_rows(&d), &y);
    for a in 0..oracle.len() {
        for b in 0..oracle.len() {
            assert!(pretty_close(fit.vcov[(a, b)], oracle[a][b], 1e-8));
        }
    }
}

#[test]
fn clustered_covariance_matches_direct_sandwich() {
    let rows = crossed(8, 4, 3, |_| 0.0);
    let d = build_design(&NAMES, &rows, &reference()).unwrap();
    let fit = fit_ols_crse(&d).unwrap();
    let x = x_rows(&d);
    let (n, k, g) = (x.len(), x[0].len(), d.n_clusters);
    let mut xtx = vec![vec![0.0; k]; k];
    for r in &x {
        for a in 0..k {
            for b in 0..k {
                xtx[a][b] += r[a] * r[b];
            }
        }
    }
    let inv = invert_dense(&xtx);
    let mut scores = vec![vec![0.0; k]; g];
    for (i, r) in x.iter().enumerate() {
        for a in 0..k {
            scores[d.clusters[i]][a] += r[a] * fit.residuals[i];
        }
    }
    let c = g as f64 / (g - 1) as f64 * (n - 1) as f64 / (n - k) as f64;
    for a in 0..k {
        for e in 0..k {
            let mut s = 0.0;
            for b in 0..k {
                for f in 0..k {
                    let meat: f64 = scores.iter().map(|u| u[b] * u[f]).sum();
                    s += inv[a][b] * meat * inv[f][e];
                }
            }
            assert!(pretty_close(fit.vcov[(a, e)], c * s, 1e-8));
        }
    }
}

#[test]
fn predictions_average_to_mean_response() {
    let rows = crossed(5, 2, 4, |l| l[0].parse::<f64>().unwrap().ln());
    let d = build_design(&NAMES, &rows, &reference()).unwrap();
    let fit = fit_ols_crse(&d).unwrap();
    let preds: Vec<f64> = rows
        .iter()
        .map(|r| {
            let l: Vec<&str> = r.levels.iter().map(String::as_str).collect();
            predict(&fit, &l).unwrap().point
        })
        .collect();
    let ybar = mean(&rows.iter().map(|r| r.y).collect::<Vec<_>>());
    assert!((mean(&preds) - ybar).abs() < 1e-10);
}

#[test]
fn reference_and_planted_changes() {
    // y = X beta exactly: main effects and one interaction
    let effect = |l: &[&str]| {
        let mut v = 0.3;
        if l[0] == "40" {
            v += 0.7;
        }
        if l[1] == "hi" {
            v -= 0.2;
        }
        if l[0] == "40" && l[1] == "hi" {
            v += 0.1;
        }
        v
    };
    let mut rows = crossed(3, 2, 5, effect);
    // tiny noise keeps the covariance non-degenerate
    for r in rows.iter_mut() {
        let l: Vec<&str> = r.levels.iter().map(String::as_str).collect();
        r.y = effect(&l) + (r.y - effect(&l)) * 1e-6;
    }
    let d = build_design(&NAMES, &rows, &reference()).unwrap();
    let fit = fit_ols_crse(&d).unwrap();
    let p = predict(&fit, &["10", "lo", "a"]).unwrap();
    assert_eq!(p.change, 1.0);
    let q = predict(&fit, &["40", "hi", "c"]).unwrap();
    assert!((q.change - (0.7f64 - 0.2 + 0.1).exp()).abs() < 1e-4);
    assert!(q.lower <= q.point && q.point <= q.upper);
    assert!(matches!(predict(&fit, &["80", "lo", "a"]), Err(Error::UnknownLevel { .. })));
    assert!(matches!(predict(&fit, &["10", "lo"]), Err(Error::LengthMismatch(3, 2))));
}

#[test]
fn rank_deficiency_is_reported() {
    // "dose" is perfectly aliased with "arm" b/c
    let rows: Vec<MetaRow> = ["a", "b", "a", "b", "a", "b"]
        .iter()
        .enumerate()
        .map(|(i, arm)| MetaRow {
            levels: vec![arm.to_string(), if *arm == "a" { "lo" } else { "hi" }.to_string()],
            y: i as f64,
            cluster: i.to_string(),
        })
        .collect();
    assert!(matches!(build_design(&["arm", "dose"], &rows, &HashMap::new()), Err(Error::RankDeficient { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cluster_labels_and_row_order_do_not_matter(seed in any::<u64>()) {
        let rows = crossed(4, 3, seed, |_| 0.0);
        let d = build_design(&NAMES, &rows, &reference()).unwrap();
        let fit = fit_ols_crse(&d).unwrap();

        let mut rng = rng_from_seed(seed ^ 1);
        let mut relabeled: Vec<MetaRow> = rows
            .iter()
            .map(|r| MetaRow { cluster: format!("c-{}", r.cluster.chars().rev().collect::<String>()), ..r.clone() })
            .collect();
        for i in (1..relabeled.len()).rev() {
            relabeled.swap(i, rng.random_range(0..=i));
        }
        let d2 = build_design(&NAMES, &relabeled, &reference()).unwrap();
        let fit2 = fit_ols_crse(&d2).unwrap();
        prop_assert_eq!(d.n_clusters, d2.n_clusters);
        for (a, b) in fit.coefficients.iter().zip(fit2.coefficients.iter()) {
            prop_assert!(pretty_close(*a, *b, 1e-9));
        }
        for (a, b) in fit.vcov.iter().zip(fit2.vcov.iter()) {
            prop_assert!(pretty_close(*a, *b, 1e-9));
        }
    }
}
