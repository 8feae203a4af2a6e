//! Gibbs sampler for the normal-normal hierarchical model
//!
//! ```text
//! tau_hat_j | tau_j ~ N(tau_j, se2_j)
//! tau_j | tau, sigma ~ N(tau, sigma^2)
//! tau ~ N(0, 100),  sigma ~ half-Cauchy(0, 5)
//! ```
//!
//! Each sweep draws `sigma` and then `tau` from their conditionals with the
//! site effects integrated out (`tau_hat_j ~ N(tau, sigma^2 + se2_j)`), and
//! then refreshes every `tau_j` from its closed-form normal conditional.
//! Integrating out the `tau_j` avoids the slow mixing of the centered
//! parameterization when `sigma` is small relative to the sampling error.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::mcmc::{check_finite, initial_hyper, update_hyper, with_iteration, Hyper, MarginalObs, McmcConfig, PosteriorDraws};
use crate::rng::rng_from_seed;

/// Sampler settings. `fixed_hyper = Some((tau, sigma))` clamps the
/// hyperparameters, which reduces the sampler to exact conjugate draws.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianConfig {
    pub mcmc: McmcConfig,
    pub fixed_hyper: Option<(f64, f64)>,
}

impl GaussianConfig {
    pub fn new(mcmc: McmcConfig) -> Self {
        Self { mcmc, fixed_hyper: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub draws: PosteriorDraws,
    /// Grand mean `tau` per kept iteration.
    pub tau_draws: Vec<f64>,
    /// Cross-site SD `sigma` per kept iteration.
    pub sigma_draws: Vec<f64>,
}

/// Conditional posterior mean and variance of one site effect given
/// `(tau, sigma^2)`: `tau + (tau_hat - tau) S` and `1 / (1/sigma^2 + 1/se2)`
/// with shrinkage factor `S = sigma^2 / (sigma^2 + se2)`.
pub fn conditional_posterior_moments(tau_hat: f64, se2: f64, tau: f64, sigma2: f64) -> (f64, f64) {
    let shrink = sigma2 / (sigma2 + se2);
    let mean = tau + (tau_hat - tau) * shrink;
    // sigma2 * se2 / (sigma2 + se2) is the reciprocal of the summed precisions
    let var = sigma2 * se2 / (sigma2 + se2);
    (mean, var)
}

/// Chain state; exposed so tests can drive single transitions.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    tau_hat: Vec<f64>,
    se2: Vec<f64>,
    hyper: Hyper,
    fixed: bool,
    effects: Vec<f64>,
}

impl GaussianSampler {
    pub fn new(d: &TrialDataset, fixed_hyper: Option<(f64, f64)>) -> Result<Self> {
        let tau_hat = d.tau_hat();
        let se2 = d.se2();
        let hyper = match fixed_hyper {
            Some((tau, sigma)) => {
                if !tau.is_finite() || !(sigma >= 0.0) {
                    return Err(Error::InvalidParameter(format!("fixed hyperparameters ({tau}, {sigma})")));
                }
                Hyper { tau, sigma }
            }
            None => initial_hyper(&tau_hat, &se2),
        };
        Ok(Self {
            effects: tau_hat.clone(),
            tau_hat,
            se2,
            hyper,
            fixed: fixed_hyper.is_some(),
        })
    }

    /// Starts from explicit state (used by the joint-distribution tests).
    pub fn from_state(tau_hat: Vec<f64>, se2: Vec<f64>, hyper: Hyper, effects: Vec<f64>) -> Self {
        Self {
            tau_hat,
            se2,
            hyper,
            fixed: false,
            effects,
        }
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn effects(&self) -> &[f64] {
        &self.effects
    }

    /// Replaces the observed estimates, keeping the parameters.
    pub fn set_observations(&mut self, tau_hat: Vec<f64>) {
        assert_eq!(tau_hat.len(), self.se2.len());
        self.tau_hat = tau_hat;
    }

    /// One full sweep.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if !self.fixed {
            let obs: Vec<MarginalObs> = self
                .tau_hat
                .iter()
                .zip(&self.se2)
                .map(|(&y, &v)| MarginalObs { y, v })
                .collect();
            update_hyper(&obs, &mut self.hyper, rng)?;
        }
        let sigma2 = self.hyper.sigma * self.hyper.sigma;
        for ((e, &y), &v) in self.effects.iter_mut().zip(&self.tau_hat).zip(&self.se2) {
            let (m, var) = conditional_posterior_moments(y, v, self.hyper.tau, sigma2);
            let z: f64 = StandardNormal.sample(rng);
            *e = m + var.sqrt() * z;
        }
        Ok(())
    }

    fn check(&self, it: usize) -> Result<()> {
        check_finite(it, "tau", self.hyper.tau)?;
        check_finite(it, "sigma", self.hyper.sigma)?;
        if !(self.hyper.sigma >= 0.0) {
            return Err(Error::ChainDiverged {
                iteration: it,
                what: format!("sigma = {}", self.hyper.sigma),
            });
        }
        for e in &self.effects {
            check_finite(it, "tau_j", *e)?;
        }
        Ok(())
    }
}

/// Runs the sampler seeded from `cfg.mcmc.seed`.
pub fn fit_gaussian(d: &TrialDataset, cfg: &GaussianConfig) -> Result<GaussianPosterior> {
    let mut rng = rng_from_seed(cfg.mcmc.seed);
    fit_gaussian_with_rng(d, cfg, &mut rng)
}

/// Runs the sampler on a caller-supplied stream.
pub fn fit_gaussian_with_rng<R: Rng + ?Sized>(d: &TrialDataset, cfg: &GaussianConfig, rng: &mut R) -> Result<GaussianPosterior> {
    cfg.mcmc.validate()?;
    let mut sampler = GaussianSampler::new(d, cfg.fixed_hyper)?;
    let kept = cfg.mcmc.draws_kept;
    let mut draws = PosteriorDraws::with_capacity(d.site_ids(), kept);
    let mut tau_draws = Vec::with_capacity(kept);
    let mut sigma_draws = Vec::with_capacity(kept);
    for it in 0..cfg.mcmc.total_iterations() {
        sampler.step(rng).map_err(|e| with_iteration(e, it))?;
        sampler.check(it)?;
        if cfg.mcmc.keeps(it) {
            draws.push_row(sampler.effects.iter().copied());
            tau_draws.push(sampler.hyper.tau);
            sigma_draws.push(sampler.hyper.sigma);
        }
    }
    Ok(GaussianPosterior {
        draws,
        tau_draws,
        sigma_draws,
    })
}
