//! Pieces shared by the Gaussian and Dirichlet-process samplers: run
//! configuration, the draw matrix, a slice sampler and the update of the
//! normal hyperparameters `(tau, sigma)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prior variance of the grand mean: `tau ~ N(0, 100)`.
pub const TAU_PRIOR_VAR: f64 = 100.0;
/// Scale of the half-Cauchy prior on the cross-site SD.
pub const SIGMA_PRIOR_SCALE: f64 = 5.0;

/// Chain length settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub draws_kept: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            draws_kept: 4000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn new(draws_kept: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            draws_kept,
            burn_in,
            thin: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws_kept == 0 {
            return Err(Error::InvalidParameter("draws_kept must be positive".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be positive".into()));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.burn_in + self.draws_kept * self.thin
    }

    /// Whether iteration `it` (0-based) is stored.
    pub fn keeps(&self, it: usize) -> bool {
        it >= self.burn_in && (it - self.burn_in + 1) % self.thin == 0
    }
}

/// `S x J` matrix of joint posterior draws of the site effects, row-major
/// (one row per kept iteration).
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    site_ids: Vec<String>,
    n_draws: usize,
    values: Vec<f64>,
}

impl PosteriorDraws {
    pub fn new(site_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let j = site_ids.len();
        if j == 0 || values.len() % j != 0 {
            return Err(Error::Format(format!(
                "{} values do not fill rows of {} sites",
                values.len(),
                j
            )));
        }
        Ok(Self {
            n_draws: values.len() / j,
            site_ids,
            values,
        })
    }

    pub fn from_rows(site_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let j = site_ids.len();
        if rows.iter().any(|r| r.len() != j) {
            return Err(Error::Format("ragged draw rows".into()));
        }
        Self::new(site_ids, rows.concat())
    }

    pub(crate) fn with_capacity(site_ids: Vec<String>, draws: usize) -> Self {
        let cap = draws * site_ids.len();
        Self {
            site_ids,
            n_draws: 0,
            values: Vec::with_capacity(cap),
        }
    }

    pub(crate) fn push_row(&mut self, row: impl IntoIterator<Item = f64>) {
        let before = self.values.len();
        self.values.extend(row);
        debug_assert_eq!(self.values.len() - before, self.site_ids.len());
        self.n_draws += 1;
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    /// Number of kept iterations `S`.
    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    /// Number of sites `J`.
    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let j = self.n_sites();
        &self.values[s * j..(s + 1) * j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_sites())
    }

    pub fn get(&self, s: usize, j: usize) -> f64 {
        self.values[s * self.n_sites() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Same draws with every value shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            site_ids: self.site_ids.clone(),
            n_draws: self.n_draws,
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    /// Same draws with iterations reordered by `order`.
    pub fn permuted_iterations(&self, order: &[usize]) -> Self {
        let mut out = Self::with_capacity(self.site_ids.clone(), order.len());
        for &s in order {
            out.push_row(self.row(s).iter().copied());
        }
        out
    }
}

/// One univariate slice-sampling update (stepping out, then shrinkage).
///
/// `log_density` may return `-inf` outside the support.
pub fn slice_sample<F, R>(x0: f64, log_density: F, width: f64, rng: &mut R) -> Result<f64>
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    const MAX_STEPS: usize = 100_000;
    let f0 = log_density(x0);
    if !f0.is_finite() {
        return Err(Error::ChainDiverged {
            iteration: 0,
            what: format!("slice sampler started at {x0} with log density {f0}"),
        });
    }
    let e: f64 = Exp1.sample(rng);
    let level = f0 - e;
    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    let mut steps = 0;
    while log_density(left) > level {
        left -= width;
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::ChainDiverged { iteration: 0, what: "slice stepping-out did not terminate".into() });
        }
    }
    while log_density(right) > level {
        right += width;
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::ChainDiverged { iteration: 0, what: "slice stepping-out did not terminate".into() });
        }
    }
    for _ in 0..MAX_STEPS {
        let x1 = left + rng.random::<f64>() * (right - left);
        if log_density(x1) > level {
            return Ok(x1);
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    Err(Error::ChainDiverged { iteration: 0, what: "slice shrinkage did not terminate".into() })
}

/// Current values of the normal hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub tau: f64,
    pub sigma: f64,
}

/// Observations `y_i ~ N(tau, sigma^2 + v_i)`, independent given `(tau, sigma)`.
///
/// For the Gaussian model these are the sites themselves; for the DP model
/// they are the precision-weighted cluster means with `v = 1 / sum(1/se2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalObs {
    pub y: f64,
    pub v: f64,
}

fn log_half_cauchy(sigma: f64) -> f64 {
    let r = sigma / SIGMA_PRIOR_SCALE;
    -(1.0 + r * r).ln()
}

/// Draws `sigma | tau, obs` and then `tau | sigma, obs` with the site or
/// cluster locations integrated out.
///
/// `sigma` is slice sampled on the log scale (width 1) so the update is
/// indifferent to the scale of the problem.
pub fn update_hyper<R: Rng + ?Sized>(obs: &[MarginalObs], h: &mut Hyper, rng: &mut R) -> Result<()> {
    let tau = h.tau;
    let log_post = |log_sigma: f64| -> f64 {
        let sigma = log_sigma.exp();
        if !(sigma > 0.0) || !sigma.is_finite() {
            return f64::NEG_INFINITY;
        }
        let s2 = sigma * sigma;
        let ll: f64 = obs
            .iter()
            .map(|o| {
                let var = s2 + o.v;
                let d = o.y - tau;
                -0.5 * var.ln() - 0.5 * d * d / var
            })
            .sum();
        ll + log_half_cauchy(sigma) + log_sigma
    };
    let log_sigma = slice_sample(h.sigma.ln(), log_post, 1.0, rng)?;
    h.sigma = log_sigma.exp();

    let s2 = h.sigma * h.sigma;
    let (mut prec, mut wsum) = (1.0 / TAU_PRIOR_VAR, 0.0);
    for o in obs {
        let w = 1.0 / (s2 + o.v);
        prec += w;
        wsum += w * o.y;
    }
    let z: f64 = StandardNormal.sample(rng);
    h.tau = wsum / prec + z / prec.sqrt();
    Ok(())
}

/// Starting values from the method of moments.
pub(crate) fn initial_hyper(tau_hat: &[f64], se2: &[f64]) -> Hyper {
    let w: Vec<f64> = se2.iter().map(|v| 1.0 / v).collect();
    let wsum: f64 = w.iter().sum();
    let tau = tau_hat.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let n = tau_hat.len() as f64;
    let mean = tau_hat.iter().sum::<f64>() / n;
    let var = tau_hat.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let excess = var - se2.iter().sum::<f64>() / n;
    let sigma = excess.max(0.01 * var).sqrt();
    Hyper {
        tau,
        sigma: if sigma.is_finite() && sigma > 0.0 { sigma } else { 0.1 },
    }
}

pub(crate) fn check_finite(it: usize, what: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::ChainDiverged {
            iteration: it,
            what: format!("{what} = {x}"),
        })
    }
}

pub(crate) fn with_iteration(e: Error, it: usize) -> Error {
    match e {
        Error::ChainDiverged { what, .. } => Error::ChainDiverged { iteration: it, what },
        other => other,
    }
}
