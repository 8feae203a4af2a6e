//! Site estimates from posterior draws: posterior means (PM), constrained
//! Bayes (CB) and triple-goal (GR).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;

/// Summary method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pm,
    Cb,
    Gr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pm, Method::Cb, Method::Gr];

    pub fn label(self) -> &'static str {
        match self {
            Method::Pm => "pm",
            Method::Cb => "cb",
            Method::Gr => "gr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pm" => Ok(Method::Pm),
            "cb" => Ok(Method::Cb),
            "gr" => Ok(Method::Gr),
            _ => Err(Error::UnknownLevel {
                factor: "method".into(),
                level: s.into(),
            }),
        }
    }
}

/// Analysis model that produced the draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "gaussian")]
    Gaussian,
    #[serde(rename = "dp-diffuse")]
    DpDiffuse,
    #[serde(rename = "dp-inform")]
    DpInform,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Gaussian, Model::DpDiffuse, Model::DpInform];

    pub fn label(self) -> &'static str {
        match self {
            Model::Gaussian => "gaussian",
            Model::DpDiffuse => "dp-diffuse",
            Model::DpInform => "dp-inform",
        }
    }

    pub fn is_dp(self) -> bool {
        self != Model::Gaussian
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "gaussian" => Ok(Model::Gaussian),
            "dp-diffuse" => Ok(Model::DpDiffuse),
            "dp-inform" => Ok(Model::DpInform),
            _ => Err(Error::UnknownLevel {
                factor: "model".into(),
                level: s.into(),
            }),
        }
    }
}

/// One estimate per site.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteEstimates {
    pub site_ids: Vec<String>,
    pub estimates: Vec<f64>,
    pub method: Method,
    pub model: Option<Model>,
}

impl SiteEstimates {
    pub fn new(site_ids: Vec<String>, estimates: Vec<f64>, method: Method, model: Option<Model>) -> Result<Self> {
        if site_ids.len() != estimates.len() {
            return Err(Error::LengthMismatch(site_ids.len(), estimates.len()));
        }
        if let Some(j) = estimates.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFiniteEstimate(site_ids[j].clone()));
        }
        Ok(Self {
            site_ids,
            estimates,
            method,
            model,
        })
    }

    pub fn with_model(mut self, model: Model) -> Self {
        self.model = Some(model);
        self
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

/// Per-site posterior moments and the CB target spread.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummaryStats {
    /// Posterior means.
    pub eta: Vec<f64>,
    /// Posterior variances (denominator `S - 1`).
    pub lambda: Vec<f64>,
    pub eta_bar: f64,
    /// Spread of the posterior means, denominator `J - 1`.
    pub v: f64,
    /// `sqrt(mean(lambda) + v)`.
    pub sigma_hat: f64,
}

fn require_draws(draws: &PosteriorDraws) -> Result<()> {
    if draws.n_draws() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 draws, got {}", draws.n_draws())));
    }
    Ok(())
}

fn column_means(draws: &PosteriorDraws) -> Vec<f64> {
    let s = draws.n_draws() as f64;
    let mut sums = vec![0.0; draws.n_sites()];
    for row in draws.rows() {
        for (acc, x) in sums.iter_mut().zip(row) {
            *acc += x;
        }
    }
    sums.iter().map(|t| t / s).collect()
}

pub fn posterior_stats(draws: &PosteriorDraws) -> Result<PosteriorSummaryStats> {
    require_draws(draws)?;
    let j = draws.n_sites();
    if j < 2 {
        return Err(Error::TooFewSites(j));
    }
    let eta = column_means(draws);
    let mut ss = vec![0.0; j];
    for row in draws.rows() {
        for ((acc, x), m) in ss.iter_mut().zip(row).zip(&eta) {
            *acc += (x - m) * (x - m);
        }
    }
    let s = draws.n_draws() as f64;
    let lambda: Vec<f64> = ss.iter().map(|t| t / (s - 1.0)).collect();
    let eta_bar = eta.iter().sum::<f64>() / j as f64;
    let v = eta.iter().map(|e| (e - eta_bar) * (e - eta_bar)).sum::<f64>() / (j as f64 - 1.0);
    let sigma_hat = (lambda.iter().sum::<f64>() / j as f64 + v).sqrt();
    Ok(PosteriorSummaryStats {
        eta,
        lambda,
        eta_bar,
        v,
        sigma_hat,
    })
}

/// Posterior means.
pub fn summarize_pm(draws: &PosteriorDraws) -> Result<SiteEstimates> {
    require_draws(draws)?;
    SiteEstimates::new(draws.site_ids().to_vec(), column_means(draws), Method::Pm, None)
}

/// Constrained Bayes: posterior means stretched about their average so
/// their spread (denominator `J - 1`) equals `sigma_hat^2`.
pub fn summarize_cb(draws: &PosteriorDraws) -> Result<SiteEstimates> {
    let st = posterior_stats(draws)?;
    if !(st.v > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let scale = st.sigma_hat / st.v.sqrt();
    let est = st.eta.iter().map(|e| st.eta_bar + (e - st.eta_bar) * scale).collect();
    SiteEstimates::new(draws.site_ids().to_vec(), est, Method::Cb, None)
}

/// Left-continuous generalized inverse of the EDF of `sorted`: the smallest
/// value `x` with `F(x) >= p`.
pub fn left_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let target = p * n as f64;
    // absorb rounding in p * n so that exact fractions land on their index
    let k = (target - 1e-9 * target.max(1.0)).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

fn sorted_pool(draws: &PosteriorDraws) -> Vec<f64> {
    let mut pool = draws.values().to_vec();
    pool.sort_by(f64::total_cmp);
    pool
}

/// The `J` evenly spaced quantiles `U_k = G^-1((2k - 1) / 2J)` of the
/// pooled draws, in increasing order.
pub fn gr_quantiles(draws: &PosteriorDraws) -> Result<Vec<f64>> {
    require_draws(draws)?;
    let pool = sorted_pool(draws);
    let s = draws.n_draws();
    Ok((1..=draws.n_sites())
        .map(|k| {
            // ceil((2k - 1) S / 2), 1-based
            let idx = ((2 * k - 1) * s + 1) / 2;
            pool[idx - 1]
        })
        .collect())
}

/// `R_j * S`, where `R_j = sum_k Pr(tau_k <= tau_j)` is the posterior
/// expected rank computed from joint draws. Integer counts keep ties exact.
pub fn rank_counts(draws: &PosteriorDraws) -> Vec<u64> {
    let j = draws.n_sites();
    let mut counts = vec![0u64; j];
    let mut order: Vec<usize> = (0..j).collect();
    for row in draws.rows() {
        order.sort_by(|&x, &y| row[x].total_cmp(&row[y]));
        let mut start = 0;
        while start < j {
            let mut end = start + 1;
            while end < j && row[order[end]] == row[order[start]] {
                end += 1;
            }
            for &site in &order[start..end] {
                counts[site] += end as u64;
            }
            start = end;
        }
    }
    counts
}

/// Posterior expected ranks `R_j`.
pub fn expected_ranks(draws: &PosteriorDraws) -> Vec<f64> {
    let s = draws.n_draws() as f64;
    rank_counts(draws).into_iter().map(|c| c as f64 / s).collect()
}

/// Ranks `1..=J` of `keys`, ties broken by position.
pub(crate) fn ordinal_ranks<T: PartialOrd + Copy>(keys: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&x, &y| keys[x].partial_cmp(&keys[y]).expect("comparable keys"));
    let mut ranks = vec![0; keys.len()];
    for (pos, &site) in order.iter().enumerate() {
        ranks[site] = pos + 1;
    }
    ranks
}

/// Triple-goal estimates: site `j` receives `U_{rank(R_j)}`.
pub fn summarize_gr(draws: &PosteriorDraws) -> Result<SiteEstimates> {
    let u = gr_quantiles(draws)?;
    let ranks = ordinal_ranks(&rank_counts(draws));
    let est = ranks.iter().map(|&r| u[r - 1]).collect();
    SiteEstimates::new(draws.site_ids().to_vec(), est, Method::Gr, None)
}

pub fn summarize(draws: &PosteriorDraws, method: Method) -> Result<SiteEstimates> {
    match method {
        Method::Pm => summarize_pm(draws),
        Method::Cb => summarize_cb(draws),
        Method::Gr => summarize_gr(draws),
    }
}

/// Pooled posterior EDF `(1 / JS) sum_{j,s} 1{tau_j^(s) <= t}` at each `t`.
pub fn posterior_edf(draws: &PosteriorDraws, grid: &[f64]) -> Vec<f64> {
    let pool = sorted_pool(draws);
    let n = pool.len() as f64;
    grid.iter()
        .map(|&t| pool.partition_point(|&x| x <= t) as f64 / n)
        .collect()
}
