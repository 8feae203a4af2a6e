//! Tidy tables (and two small SVG renderings) for re-drawing figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::calibration::ClusterPriorModel;
use crate::error::{Error, Result};
use crate::io::ResultRow;
use crate::metamodel::{MetaFit, Outcome};
use crate::summaries::{Method, Model};

/// Multiplicative change of one factor level relative to the reference
/// setting, all other factors at reference.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorEffect {
    pub factor: String,
    pub level: String,
    pub change: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn factor_effects(fit: &MetaFit) -> Vec<FactorEffect> {
    let mut out = Vec::new();
    let mut col = 1;
    for f in &fit.factors {
        for level in &f.levels[1..] {
            let b = fit.coefficients[col];
            let se = fit.vcov[(col, col)].max(0.0).sqrt();
            out.push(FactorEffect {
                factor: f.name.clone(),
                level: level.clone(),
                change: b.exp(),
                lower: (b - 1.96 * se).exp(),
                upper: (b + 1.96 * se).exp(),
            });
            col += 1;
        }
    }
    out
}

pub fn factor_effects_csv(outcome: Outcome, effects: &[FactorEffect]) -> String {
    let mut s = String::from("outcome,factor,level,change,lower,upper\n");
    for e in effects {
        let _ = writeln!(s, "{outcome},{},{},{},{},{}", e.factor, e.level, e.change, e.lower, e.upper);
    }
    s
}

/// Lowest mean loss in one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct BestCombo {
    pub scenario_id: String,
    pub loss: &'static str,
    pub model: Model,
    pub method: Method,
    pub mean: f64,
}

pub const LOSS_NAMES: [&str; 4] = ["rmse", "isel", "mselp", "mse_p90"];

fn loss_value(r: &ResultRow, name: &str) -> f64 {
    match name {
        "rmse" => r.rmse,
        "isel" => r.isel,
        "mselp" => r.mselp,
        _ => r.mse_p90,
    }
}

/// Mean loss per `(scenario, model, method)`.
pub fn cell_means(rows: &[ResultRow], loss: &str) -> BTreeMap<(String, Model, Method), f64> {
    let mut acc: BTreeMap<(String, Model, Method), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.scenario_id.clone(), r.model, r.method)).or_insert((0.0, 0));
        e.0 += loss_value(r, loss);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Best model-method combination per scenario for each loss; ties go to
/// the earlier model, then method.
pub fn best_combos(rows: &[ResultRow]) -> Vec<BestCombo> {
    let mut out = Vec::new();
    for loss in LOSS_NAMES {
        let mut best: BTreeMap<String, BestCombo> = BTreeMap::new();
        for ((sid, model, method), mean) in cell_means(rows, loss) {
            let better = best.get(&sid).is_none_or(|b| mean < b.mean);
            if better {
                best.insert(
                    sid.clone(),
                    BestCombo {
                        scenario_id: sid,
                        loss,
                        model,
                        method,
                        mean,
                    },
                );
            }
        }
        out.extend(best.into_values());
    }
    out
}

pub fn best_combos_csv(combos: &[BestCombo]) -> String {
    let mut s = String::from("scenario_id,loss,model,method,mean\n");
    for c in combos {
        let _ = writeln!(s, "{},{},{},{},{}", c.scenario_id, c.loss, c.model, c.method, c.mean);
    }
    s
}

/// Equal-width histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::InvalidParameter("histogram needs values and at least one bin".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{},{c}", h.edges[i], h.edges[i + 1]);
    }
    s
}

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD / 2.0
    );
    s
}

pub fn histogram_svg(h: &Histogram, title: &str) -> String {
    let mut s = svg_open(title);
    let max = *h.counts.iter().max().unwrap_or(&1) as f64;
    let bw = (W - 1.5 * PAD) / h.counts.len() as f64;
    for (i, &c) in h.counts.iter().enumerate() {
        let bh = (H - 2.0 * PAD) * c as f64 / max.max(1.0);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a78a8" stroke="white"/>"##,
            PAD + i as f64 * bw,
            H - PAD - bh,
            bw,
            bh
        );
    }
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">{:.3}</text>"#, H - PAD + 15.0, h.edges[0]);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
        W - PAD / 2.0,
        H - PAD + 15.0,
        h.edges[h.edges.len() - 1]
    );
    s.push_str("</svg>\n");
    s
}

/// Induced pmf of `K` for one `(J, a, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorCurve {
    pub j: usize,
    pub a: f64,
    pub b: f64,
    pub pmf: Vec<f64>,
}

pub fn cluster_prior_curves(specs: &[(usize, f64, f64)]) -> Result<Vec<PriorCurve>> {
    specs
        .iter()
        .map(|&(j, a, b)| {
            Ok(PriorCurve {
                j,
                a,
                b,
                pmf: ClusterPriorModel::new(j)?.pmf(a, b)?.pmf(),
            })
        })
        .collect()
}

pub fn cluster_prior_csv(curves: &[PriorCurve]) -> String {
    let mut s = String::from("J,a,b,K,pmf\n");
    for c in curves {
        for (k, p) in c.pmf.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{p}", c.j, c.a, c.b, k + 1);
        }
    }
    s
}

pub fn cluster_prior_svg(curves: &[PriorCurve]) -> String {
    const COLORS: [&str; 4] = ["#c0392b", "#2c7fb8", "#27ae60", "#8e44ad"];
    let mut s = svg_open("Prior on the number of clusters K");
    let kmax = curves.iter().map(|c| c.pmf.len()).max().unwrap_or(1) as f64;
    let pmax = curves
        .iter()
        .flat_map(|c| c.pmf.iter().copied())
        .fold(0.0, f64::max)
        .max(1e-12);
    let x = |k: f64| PAD + (W - 1.5 * PAD) * (k - 1.0) / (kmax - 1.0).max(1.0);
    let y = |p: f64| H - PAD - (H - 2.0 * PAD) * p / pmax;
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c
            .pmf
            .iter()
            .enumerate()
            .map(|(k, p)| format!("{:.2},{:.2}", x(k as f64 + 1.0), y(*p)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}" text-anchor="end">J={} a={} b={}</text>"#,
            W - PAD / 2.0,
            40.0 + 14.0 * i as f64,
            c.j,
            c.a,
            c.b
        );
    }
    s.push_str("</svg>\n");
    s
}
