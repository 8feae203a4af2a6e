//! Regression of log losses on simulation-factor dummies and their two-way
//! interactions, with standard errors clustered on datasets (CR1).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::datagen::{ScenarioKey, ShapeKind};
use crate::error::{Error, Result};
use crate::io::ResultRow;

/// Factors of the campaign meta-model, in column order.
pub const FACTORS: [&str; 6] = ["J", "n_bar", "sigma", "cv", "model", "method"];

/// Reference level of each factor in [`FACTORS`].
pub const REFERENCE_LEVELS: [(&str, &str); 6] = [
    ("J", "25"),
    ("n_bar", "10"),
    ("sigma", "0.05"),
    ("cv", "0"),
    ("model", "gaussian"),
    ("method", "pm"),
];

/// Loss used as the response, on the log scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    LogRmse,
    LogIsel,
    LogMselp,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::LogRmse => "log_rmse",
            Outcome::LogIsel => "log_isel",
            Outcome::LogMselp => "log_mselp",
        }
    }

    fn loss(self, r: &ResultRow) -> f64 {
        match self {
            Outcome::LogRmse => r.rmse,
            Outcome::LogIsel => r.isel,
            Outcome::LogMselp => r.mselp,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_rmse" | "rmse" => Ok(Outcome::LogRmse),
            "log_isel" | "isel" => Ok(Outcome::LogIsel),
            "log_mselp" | "mselp" => Ok(Outcome::LogMselp),
            _ => Err(Error::UnknownLevel {
                factor: "outcome".into(),
                level: s.into(),
            }),
        }
    }
}

/// One observation: a level per factor, the response and its cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaRow {
    pub levels: Vec<String>,
    pub y: f64,
    pub cluster: String,
}

/// A factor with its levels; `levels[0]` is the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    fn index(&self, level: &str) -> Result<usize> {
        self.levels.iter().position(|l| l == level).ok_or_else(|| Error::UnknownLevel {
            factor: self.name.clone(),
            level: level.into(),
        })
    }
}

/// Sorts numerically when every level parses as a number.
fn sort_levels(levels: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = levels.into_iter().collect();
    if v.iter().all(|l| l.parse::<f64>().is_ok()) {
        v.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    v
}

/// Treatment-coded design matrix.
#[derive(Clone, Debug)]
pub struct MetaDesign {
    pub factors: Vec<Factor>,
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Cluster index per row.
    pub clusters: Vec<usize>,
    pub n_clusters: usize,
}

impl MetaDesign {
    /// Design row for a full factor setting.
    pub fn encode(&self, levels: &[&str]) -> Result<DVector<f64>> {
        encode_row(&self.factors, levels, self.names.len())
    }
}

fn encode_row(factors: &[Factor], levels: &[&str], width: usize) -> Result<DVector<f64>> {
    if levels.len() != factors.len() {
        return Err(Error::LengthMismatch(factors.len(), levels.len()));
    }
    let idx = factors
        .iter()
        .zip(levels)
        .map(|(f, l)| f.index(l))
        .collect::<Result<Vec<usize>>>()?;
    let mut x = DVector::zeros(width);
    x[0] = 1.0;
    let mut col = 1;
    for (f, &i) in factors.iter().zip(&idx) {
        if i > 0 {
            x[col + i - 1] = 1.0;
        }
        col += f.levels.len() - 1;
    }
    for a in 0..factors.len() {
        for b in a + 1..factors.len() {
            let lb = factors[b].levels.len() - 1;
            if idx[a] > 0 && idx[b] > 0 {
                x[col + (idx[a] - 1) * lb + (idx[b] - 1)] = 1.0;
            }
            col += (factors[a].levels.len() - 1) * lb;
        }
    }
    debug_assert_eq!(col, width);
    Ok(x)
}

/// `1 + sum (L_f - 1) + sum_{f < g} (L_f - 1)(L_g - 1)`.
pub fn design_width(level_counts: &[usize]) -> usize {
    let m: Vec<usize> = level_counts.iter().map(|l| l - 1).collect();
    let mut w = 1 + m.iter().sum::<usize>();
    for a in 0..m.len() {
        for b in a + 1..m.len() {
            w += m[a] * m[b];
        }
    }
    w
}

/// Builds the design from rows. `reference` maps factor name to its
/// reference level; a reference absent from the data falls back to the
/// first observed level.
pub fn build_design(factor_names: &[&str], rows: &[MetaRow], reference: &HashMap<String, String>) -> Result<MetaDesign> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter("meta-model needs at least one row".into()));
    }
    let nf = factor_names.len();
    if let Some(r) = rows.iter().find(|r| r.levels.len() != nf) {
        return Err(Error::LengthMismatch(nf, r.levels.len()));
    }
    let factors: Vec<Factor> = factor_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let observed: BTreeSet<String> = rows.iter().map(|r| r.levels[k].clone()).collect();
            let mut levels = sort_levels(observed);
            if let Some(pos) = reference.get(*name).and_then(|r| levels.iter().position(|l| l == r)) {
                let r = levels.remove(pos);
                levels.insert(0, r);
            }
            Factor {
                name: name.to_string(),
                levels,
            }
        })
        .collect();

    let mut names = vec!["(Intercept)".to_string()];
    for f in &factors {
        names.extend(f.levels[1..].iter().map(|l| format!("{}={}", f.name, l)));
    }
    for a in 0..nf {
        for b in a + 1..nf {
            for la in &factors[a].levels[1..] {
                for lb in &factors[b].levels[1..] {
                    names.push(format!("{}={}:{}={}", factors[a].name, la, factors[b].name, lb));
                }
            }
        }
    }
    let width = names.len();
    let mut x = DMatrix::zeros(rows.len(), width);
    for (i, r) in rows.iter().enumerate() {
        let levels: Vec<&str> = r.levels.iter().map(String::as_str).collect();
        x.set_row(i, &encode_row(&factors, &levels, width)?.transpose());
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.y));
    let mut cluster_index: HashMap<&str, usize> = HashMap::new();
    let clusters = rows
        .iter()
        .map(|r| {
            let next = cluster_index.len();
            *cluster_index.entry(r.cluster.as_str()).or_insert(next)
        })
        .collect();
    let design = MetaDesign {
        factors,
        names,
        x,
        y,
        clusters,
        n_clusters: cluster_index.len(),
    };
    check_rank(&design.x)?;
    Ok(design)
}

fn upper_r(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().qr().r()
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let cols = x.ncols();
    if x.nrows() < cols {
        return Err(Error::RankDeficient { rank: x.nrows(), cols });
    }
    let r = upper_r(x);
    let diag: Vec<f64> = (0..cols).map(|i| r[(i, i)].abs()).collect();
    let scale = diag.iter().copied().fold(0.0, f64::max);
    let rank = diag.iter().filter(|d| **d > 1e-10 * scale.max(1.0)).count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, cols });
    }
    Ok(())
}

/// OLS fit with cluster-robust covariance.
#[derive(Clone, Debug)]
pub struct MetaFit {
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub factors: Vec<Factor>,
}

impl MetaFit {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len()).map(|i| self.vcov[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// OLS through a QR factorization and the CR1 sandwich
/// `c (X'X)^-1 [sum_g X_g' e_g e_g' X_g] (X'X)^-1`, with
/// `c = G/(G-1) * (N-1)/(N-K)`.
pub fn fit_ols_crse(design: &MetaDesign) -> Result<MetaFit> {
    let x = &design.x;
    let (n, k) = x.shape();
    let g = design.n_clusters;
    if n <= k || g < 2 {
        return Err(Error::SingularSandwich(format!("N = {n}, K = {k}, G = {g}")));
    }
    check_rank(x)?;
    let qr = x.clone().qr();
    let r = qr.r();
    let mut qty = design.y.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or(Error::RankDeficient { rank: 0, cols: k })?;
    let residuals = &design.y - x * &beta;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::RankDeficient { rank: 0, cols: k })?;
    let bread = &r_inv * r_inv.transpose();

    let mut scores = DMatrix::<f64>::zeros(g, k);
    for (i, &c) in design.clusters.iter().enumerate() {
        let e = residuals[i];
        for j in 0..k {
            scores[(c, j)] += x[(i, j)] * e;
        }
    }
    let meat = scores.transpose() * &scores;
    let c = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
    let v = &bread * meat * &bread * c;
    let vcov = (&v + v.transpose()) * 0.5;
    if vcov.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSandwich("non-finite covariance".into()));
    }
    Ok(MetaFit {
        names: design.names.clone(),
        coefficients: beta,
        vcov,
        residuals,
        n_obs: n,
        n_clusters: g,
        factors: design.factors.clone(),
    })
}

/// Prediction at one factor setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    /// `x' beta` on the log scale.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    /// `exp` of the difference from the reference-setting prediction.
    pub change: f64,
}

/// Point prediction with a 95% confidence band for the mean,
/// `x' beta +- 1.96 sqrt(x' V x)`.
pub fn predict(fit: &MetaFit, levels: &[&str]) -> Result<Prediction> {
    let x = encode_row(&fit.factors, levels, fit.names.len())?;
    let point = x.dot(&fit.coefficients);
    let se = (x.transpose() * &fit.vcov * &x)[(0, 0)].max(0.0).sqrt();
    // the intercept is the reference prediction, so drop it from the sum
    let delta: f64 = x.iter().zip(fit.coefficients.iter()).skip(1).map(|(a, b)| a * b).sum();
    Ok(Prediction {
        point,
        lower: point - 1.96 * se,
        upper: point + 1.96 * se,
        change: delta.exp(),
    })
}

/// Meta-model rows from campaign results; rows whose loss is not positive
/// cannot be logged and are counted in the second return value.
pub fn rows_from_results(results: &[ResultRow], outcome: Outcome, shape: Option<ShapeKind>) -> Result<(Vec<MetaRow>, usize)> {
    let mut rows = Vec::with_capacity(results.len());
    let mut dropped = 0;
    for r in results {
        let key = ScenarioKey::parse(&r.scenario_id)?;
        if shape.is_some_and(|s| s != key.shape) {
            continue;
        }
        let loss = outcome.loss(r);
        if !(loss > 0.0) || !loss.is_finite() {
            dropped += 1;
            continue;
        }
        rows.push(MetaRow {
            levels: vec![
                key.j.to_string(),
                key.n_bar.to_string(),
                key.sigma.to_string(),
                key.cv.to_string(),
                r.model.to_string(),
                r.method.to_string(),
            ],
            y: loss.ln(),
            cluster: format!("{}#{}", r.scenario_id, r.rep),
        });
    }
    Ok((rows, dropped))
}

pub fn reference_map() -> HashMap<String, String> {
    REFERENCE_LEVELS.iter().map(|(f, l)| (f.to_string(), l.to_string())).collect()
}

/// Fits the campaign meta-model for one outcome.
pub fn fit_campaign(results: &[ResultRow], outcome: Outcome, shape: Option<ShapeKind>) -> Result<(MetaFit, usize)> {
    let (rows, dropped) = rows_from_results(results, outcome, shape)?;
    let design = build_design(&FACTORS, &rows, &reference_map())?;
    Ok((fit_ols_crse(&design)?, dropped))
}

/// Every observed factor setting, in sorted order, with its prediction.
pub fn predict_observed(fit: &MetaFit, rows: &[MetaRow]) -> Result<Vec<(Vec<String>, Prediction)>> {
    let settings: BTreeMap<Vec<String>, ()> = rows.iter().map(|r| (r.levels.clone(), ())).collect();
    settings
        .into_keys()
        .map(|levels| {
            let refs: Vec<&str> = levels.iter().map(String::as_str).collect();
            let p = predict(fit, &refs)?;
            Ok((levels, p))
        })
        .collect()
}
