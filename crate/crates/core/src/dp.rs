//! Dirichlet-process mixture prior on the effect distribution.
//!
//! ```text
//! tau_hat_j | tau_j ~ N(tau_j, se2_j)
//! tau_j | G ~ G,   G ~ DP(alpha, G0),   G0 = N(tau, sigma^2)
//! tau ~ N(0, 100),  sigma ~ half-Cauchy(0, 5),  alpha ~ Gamma(a, b)
//! ```
//!
//! The sampler works on the Polya-urn (Chinese restaurant) representation.
//! One sweep:
//!
//! 1. reallocates every site by the urn rule with `m = 3` auxiliary
//!    components drawn from `G0` (Neal's algorithm 8);
//! 2. updates `(sigma, tau)` against the clusters with their locations
//!    integrated out, each cluster contributing its precision-weighted mean;
//! 3. draws every cluster location from its normal full conditional;
//! 4. updates `alpha` with the Escobar–West beta auxiliary variable.
//!
//! Site effects are stored per site, so label switching never reaches the
//! summaries.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::mcmc::{check_finite, initial_hyper, update_hyper, with_iteration, Hyper, MarginalObs, McmcConfig, PosteriorDraws};
use crate::rng::rng_from_seed;

/// Prior on the concentration `alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaPrior {
    /// Gamma with shape `a` and rate `b`.
    Gamma { a: f64, b: f64 },
    /// `alpha` held at a constant.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpConfig {
    pub alpha: AlphaPrior,
    pub mcmc: McmcConfig,
    /// Number of auxiliary components per reallocation.
    pub aux: usize,
    /// Drop the likelihood and sample from the prior (for checking the
    /// sampler against the induced prior on the number of clusters).
    pub prior_only: bool,
}

impl DpConfig {
    pub fn gamma(a: f64, b: f64, mcmc: McmcConfig) -> Self {
        Self {
            alpha: AlphaPrior::Gamma { a, b },
            mcmc,
            aux: 3,
            prior_only: false,
        }
    }

    pub fn fixed_alpha(alpha: f64, mcmc: McmcConfig) -> Self {
        Self {
            alpha: AlphaPrior::Fixed(alpha),
            mcmc,
            aux: 3,
            prior_only: false,
        }
    }

    fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        match self.alpha {
            AlphaPrior::Gamma { a, b } if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() => {}
            AlphaPrior::Fixed(x) if x > 0.0 && x.is_finite() => {}
            other => return Err(Error::InvalidParameter(format!("invalid alpha prior {other:?}"))),
        }
        if self.aux == 0 {
            return Err(Error::InvalidParameter("need at least one auxiliary component".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpPosterior {
    pub draws: PosteriorDraws,
    pub alpha_draws: Vec<f64>,
    /// Occupied clusters per kept iteration.
    pub k_draws: Vec<usize>,
    pub base_tau_draws: Vec<f64>,
    pub base_sigma_draws: Vec<f64>,
}

/// Prior expected number of clusters among `j` sites:
/// `sum_{i=1..j} alpha / (alpha + i - 1)`.
pub fn expected_clusters(alpha: f64, j: usize) -> f64 {
    (0..j).map(|i| alpha / (alpha + i as f64)).sum()
}

/// Runs the sequential urn over `j` sites and returns the number of
/// occupied clusters.
pub fn simulate_urn<R: Rng + ?Sized>(alpha: f64, j: usize, rng: &mut R) -> usize {
    let mut k = 0;
    for i in 0..j {
        // site i+1 opens a new cluster with probability alpha / (alpha + i)
        if i == 0 || rng.random::<f64>() * (alpha + i as f64) < alpha {
            k += 1;
        }
    }
    k
}

/// Chain state of the DP sampler.
#[derive(Clone, Debug)]
pub struct DpSampler {
    tau_hat: Vec<f64>,
    se2: Vec<f64>,
    alloc: Vec<usize>,
    locations: Vec<f64>,
    counts: Vec<usize>,
    hyper: Hyper,
    alpha: f64,
    cfg: DpConfig,
}

impl DpSampler {
    pub fn new(d: &TrialDataset, cfg: &DpConfig) -> Result<Self> {
        cfg.validate()?;
        let tau_hat = d.tau_hat();
        let se2 = d.se2();
        let hyper = initial_hyper(&tau_hat, &se2);
        let alpha = match cfg.alpha {
            AlphaPrior::Gamma { a, b } => a / b,
            AlphaPrior::Fixed(x) => x,
        };
        Ok(Self {
            alloc: vec![0; tau_hat.len()],
            locations: vec![hyper.tau],
            counts: vec![tau_hat.len()],
            tau_hat,
            se2,
            hyper,
            alpha,
            cfg: *cfg,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn n_clusters(&self) -> usize {
        self.locations.len()
    }

    pub fn effects(&self) -> impl Iterator<Item = f64> + '_ {
        self.alloc.iter().map(|&c| self.locations[c])
    }

    /// Replaces the observed estimates, keeping the chain state.
    pub fn set_observations(&mut self, tau_hat: Vec<f64>) {
        assert_eq!(tau_hat.len(), self.se2.len());
        self.tau_hat = tau_hat;
    }

    fn log_lik(&self, i: usize, loc: f64) -> f64 {
        if self.cfg.prior_only {
            0.0
        } else {
            let d = self.tau_hat[i] - loc;
            -0.5 * d * d / self.se2[i]
        }
    }

    fn draw_base<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.hyper.tau + self.hyper.sigma * z
    }

    fn remove_cluster(&mut self, c: usize) {
        let last = self.locations.len() - 1;
        self.locations.swap_remove(c);
        self.counts.swap_remove(c);
        if c != last {
            for a in self.alloc.iter_mut() {
                if *a == last {
                    *a = c;
                }
            }
        }
    }

    fn reallocate<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let m = self.cfg.aux;
        let log_aux_weight = (self.alpha / m as f64).ln();
        let mut aux = vec![0.0; m];
        let mut logw: Vec<f64> = Vec::with_capacity(self.locations.len() + m);
        for i in 0..self.alloc.len() {
            let c = self.alloc[i];
            self.counts[c] -= 1;
            let mut first_free = 0;
            if self.counts[c] == 0 {
                // a singleton's own location becomes the first auxiliary
                aux[0] = self.locations[c];
                first_free = 1;
                self.remove_cluster(c);
            }
            for a in aux.iter_mut().skip(first_free) {
                *a = self.draw_base(rng);
            }

            logw.clear();
            for (k, &loc) in self.locations.iter().enumerate() {
                logw.push((self.counts[k] as f64).ln() + self.log_lik(i, loc));
            }
            for &loc in &aux {
                logw.push(log_aux_weight + self.log_lik(i, loc));
            }
            let pick = sample_log_weights(&logw, rng);
            let k_existing = self.locations.len();
            if pick < k_existing {
                self.alloc[i] = pick;
                self.counts[pick] += 1;
            } else {
                self.locations.push(aux[pick - k_existing]);
                self.counts.push(1);
                self.alloc[i] = k_existing;
            }
        }
    }

    /// Per-cluster precision sums `sum 1/se2` and weighted sums `sum y/se2`.
    fn cluster_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.locations.len();
        let mut w = vec![0.0; k];
        let mut wy = vec![0.0; k];
        if !self.cfg.prior_only {
            for (i, &c) in self.alloc.iter().enumerate() {
                let p = 1.0 / self.se2[i];
                w[c] += p;
                wy[c] += p * self.tau_hat[i];
            }
        }
        (w, wy)
    }

    fn update_base_and_locations<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (w, wy) = self.cluster_stats();
        let obs: Vec<MarginalObs> = w
            .iter()
            .zip(&wy)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &wy)| MarginalObs { y: wy / w, v: 1.0 / w })
            .collect();
        update_hyper(&obs, &mut self.hyper, rng)?;

        let prior_prec = 1.0 / (self.hyper.sigma * self.hyper.sigma);
        for (k, loc) in self.locations.iter_mut().enumerate() {
            let prec = prior_prec + w[k];
            let mean = (self.hyper.tau * prior_prec + wy[k]) / prec;
            let z: f64 = StandardNormal.sample(rng);
            *loc = mean + z / prec.sqrt();
        }
        Ok(())
    }

    fn update_alpha<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let AlphaPrior::Gamma { a, b } = self.cfg.alpha else {
            return Ok(());
        };
        let j = self.alloc.len() as f64;
        let k = self.locations.len() as f64;
        let eta = Beta::new(self.alpha + 1.0, j)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(rng);
        let rate = b - eta.ln();
        let odds = (a + k - 1.0) / (j * rate);
        let shape = if rng.random::<f64>() < odds / (1.0 + odds) { a + k } else { a + k - 1.0 };
        self.alpha = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(rng);
        Ok(())
    }

    /// One full sweep.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.reallocate(rng);
        self.update_base_and_locations(rng)?;
        self.update_alpha(rng)
    }

    fn check(&self, it: usize) -> Result<()> {
        check_finite(it, "tau", self.hyper.tau)?;
        check_finite(it, "sigma", self.hyper.sigma)?;
        check_finite(it, "alpha", self.alpha)?;
        if !(self.alpha > 0.0) {
            return Err(Error::ChainDiverged {
                iteration: it,
                what: format!("alpha = {}", self.alpha),
            });
        }
        for &l in &self.locations {
            check_finite(it, "cluster location", l)?;
        }
        Ok(())
    }
}

fn sample_log_weights<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> usize {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logw.iter().map(|l| (l - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, l) in logw.iter().enumerate() {
        u -= (l - max).exp();
        if u < 0.0 {
            return k;
        }
    }
    logw.len() - 1
}

/// Runs the sampler seeded from `cfg.mcmc.seed`.
pub fn fit_dp(d: &TrialDataset, cfg: &DpConfig) -> Result<DpPosterior> {
    let mut rng = rng_from_seed(cfg.mcmc.seed);
    fit_dp_with_rng(d, cfg, &mut rng)
}

pub fn fit_dp_with_rng<R: Rng + ?Sized>(d: &TrialDataset, cfg: &DpConfig, rng: &mut R) -> Result<DpPosterior> {
    let mut sampler = DpSampler::new(d, cfg)?;
    let kept = cfg.mcmc.draws_kept;
    let mut post = DpPosterior {
        draws: PosteriorDraws::with_capacity(d.site_ids(), kept),
        alpha_draws: Vec::with_capacity(kept),
        k_draws: Vec::with_capacity(kept),
        base_tau_draws: Vec::with_capacity(kept),
        base_sigma_draws: Vec::with_capacity(kept),
    };
    for it in 0..cfg.mcmc.total_iterations() {
        sampler.step(rng).map_err(|e| with_iteration(e, it))?;
        sampler.check(it)?;
        if cfg.mcmc.keeps(it) {
            post.draws.push_row(sampler.effects());
            post.alpha_draws.push(sampler.alpha);
            post.k_draws.push(sampler.n_clusters());
            post.base_tau_draws.push(sampler.hyper.tau);
            post.base_sigma_draws.push(sampler.hyper.sigma);
        }
    }
    Ok(post)
}
