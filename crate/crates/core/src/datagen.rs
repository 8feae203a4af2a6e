//! Synthetic multisite datasets for the factorial simulation design.
//!
//! Site sizes are gamma distributed with mean `n_bar` and coefficient of
//! variation `cv`, truncated below at 5. Sampling variances follow
//! `se2 = 4 / n` (half the units treated, no covariates, unit outcome
//! variance). True effects come from a zero-mean, unit-variance shape
//! rescaled by `sigma`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, SiteSummary, TrialDataset};
use crate::error::{Error, Result};

/// Smallest admissible site size.
pub const MIN_SITE_SIZE: u32 = 5;

/// Two-component normal mixture, normalized to mean 0 and variance 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Weight of the first component.
    pub w: f64,
    /// Distance between the component means before normalization.
    pub delta: f64,
    /// Variance ratio of the second to the first component.
    pub u: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self { w: 0.5, delta: 3.0, u: 1.0 }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w < 1.0) || !(self.u > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid mixture {self:?}")));
        }
        Ok(())
    }

    /// Normalizing factor: the standard deviation of the unnormalized mixture
    /// whose first component is `N(0, 1)`.
    pub fn c(&self) -> f64 {
        let w = self.w;
        (w + (1.0 - w) * self.u + w * (1.0 - w) * self.delta * self.delta).sqrt()
    }

    /// `(mean, sd)` of the two normalized components.
    pub fn components(&self) -> [(f64, f64); 2] {
        let c = self.c();
        [
            (-(1.0 - self.w) * self.delta / c, 1.0 / c),
            (self.w * self.delta / c, self.u.sqrt() / c),
        ]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let [first, second] = self.components();
        let (m, s) = if rng.random::<f64>() < self.w { first } else { second };
        let z: f64 = StandardNormal.sample(rng);
        m + s * z
    }
}

/// Asymmetric Laplace with skewness `rho`, located and scaled to mean 0 and
/// variance 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlSpec {
    pub rho: f64,
}

impl Default for AlSpec {
    fn default() -> Self {
        Self { rho: 0.1 }
    }
}

impl AlSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("AL skewness {} outside (0,1)", self.rho)));
        }
        Ok(())
    }

    pub fn psi(&self) -> f64 {
        let r2 = self.rho * self.rho;
        (2.0 * r2 / (1.0 + r2 * r2)).sqrt()
    }

    pub fn mu(&self) -> f64 {
        -self.psi() * (1.0 - self.rho * self.rho) / (std::f64::consts::SQRT_2 * self.rho)
    }

    /// Difference of two scaled exponentials: `mu + psi/sqrt(2) (E1/rho - rho E2)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e1: f64 = Exp1.sample(rng);
        let e2: f64 = Exp1.sample(rng);
        self.mu() + self.psi() / std::f64::consts::SQRT_2 * (e1 / self.rho - self.rho * e2)
    }
}

/// Family of the true effect distribution `G`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ShapeKind {
    Gaussian,
    GaussianMixture,
    AsymmetricLaplace,
}

impl ShapeKind {
    pub fn label(self) -> &'static str {
        match self {
            ShapeKind::Gaussian => "gaussian",
            ShapeKind::GaussianMixture => "mixture",
            ShapeKind::AsymmetricLaplace => "al",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(ShapeKind::Gaussian),
            "mixture" | "gaussian_mixture" | "gaussianmixture" => Ok(ShapeKind::GaussianMixture),
            "al" | "asymmetric_laplace" | "asymmetriclaplace" => Ok(ShapeKind::AsymmetricLaplace),
            _ => Err(Error::UnknownShape(s.to_string())),
        }
    }
}

impl TryFrom<String> for ShapeKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ShapeKind> for String {
    fn from(k: ShapeKind) -> String {
        k.label().to_string()
    }
}

/// Fully parameterized shape of `G`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GShape {
    Gaussian,
    GaussianMixture(MixtureSpec),
    AsymmetricLaplace(AlSpec),
}

impl GShape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            GShape::Gaussian => ShapeKind::Gaussian,
            GShape::GaussianMixture(_) => ShapeKind::GaussianMixture,
            GShape::AsymmetricLaplace(_) => ShapeKind::AsymmetricLaplace,
        }
    }

    pub fn with_defaults(kind: ShapeKind) -> Self {
        Self::from_parts(kind, MixtureSpec::default(), AlSpec::default())
    }

    pub fn from_parts(kind: ShapeKind, mixture: MixtureSpec, al: AlSpec) -> Self {
        match kind {
            ShapeKind::Gaussian => GShape::Gaussian,
            ShapeKind::GaussianMixture => GShape::GaussianMixture(mixture),
            ShapeKind::AsymmetricLaplace => GShape::AsymmetricLaplace(al),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GShape::Gaussian => Ok(()),
            GShape::GaussianMixture(m) => m.validate(),
            GShape::AsymmetricLaplace(a) => a.validate(),
        }
    }

    /// One draw with mean 0 and variance 1.
    pub fn sample_standardized<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            GShape::Gaussian => StandardNormal.sample(rng),
            GShape::GaussianMixture(m) => m.sample(rng),
            GShape::AsymmetricLaplace(a) => a.sample(rng),
        }
    }
}

/// One cell of the factorial design.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scenario {
    pub j: usize,
    pub n_bar: f64,
    pub cv: f64,
    pub sigma: f64,
    pub shape: GShape,
}

impl Scenario {
    pub fn new(j: usize, n_bar: f64, cv: f64, sigma: f64, shape: GShape) -> Result<Self> {
        let s = Self { j, n_bar, cv, sigma, shape };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j < 2 {
            return Err(Error::TooFewSites(self.j));
        }
        if !self.n_bar.is_finite() || self.n_bar < MIN_SITE_SIZE as f64 {
            return Err(Error::InvalidParameter(format!("n_bar = {} must be >= 5", self.n_bar)));
        }
        if !self.cv.is_finite() || self.cv < 0.0 {
            return Err(Error::InvalidParameter(format!("cv = {} must be >= 0", self.cv)));
        }
        if !self.sigma.is_finite() || !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma = {} must be > 0", self.sigma)));
        }
        self.shape.validate()
    }

    /// Canonical id, e.g. `J25_n10_cv0.5_s0.05_mixture`. Parsed back by
    /// [`ScenarioKey::parse`].
    pub fn id(&self) -> String {
        format!(
            "J{}_n{}_cv{}_s{}_{}",
            self.j,
            self.n_bar,
            self.cv,
            self.sigma,
            self.shape.kind()
        )
    }

    /// Informativeness implied by the design with every site at `n_bar`.
    pub fn nominal_informativeness(&self) -> f64 {
        crate::data::informativeness_from_gm(self.sigma * self.sigma, 4.0 / self.n_bar)
    }
}

/// The design factors recoverable from a scenario id.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioKey {
    pub j: usize,
    pub n_bar: f64,
    pub cv: f64,
    pub sigma: f64,
    pub shape: ShapeKind,
}

impl ScenarioKey {
    pub fn parse(id: &str) -> Result<Self> {
        let bad = || Error::Format(format!("not a scenario id: `{id}`"));
        let parts: Vec<&str> = id.split('_').collect();
        if parts.len() != 5 {
            return Err(bad());
        }
        let num = |p: &str, prefix: &str| -> Result<f64> {
            p.strip_prefix(prefix).ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())
        };
        Ok(Self {
            j: parts[0].strip_prefix('J').ok_or_else(bad)?.parse().map_err(|_| bad())?,
            n_bar: num(parts[1], "n")?,
            cv: num(parts[2], "cv")?,
            sigma: num(parts[3], "s")?,
            shape: parts[4].parse()?,
        })
    }
}

/// `scenario.json`: one scenario plus replication count and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(rename = "J")]
    pub j: usize,
    pub n_bar: f64,
    pub cv: f64,
    pub sigma: f64,
    pub g_shape: ShapeKind,
    #[serde(default)]
    pub mixture: MixtureSpec,
    #[serde(default)]
    pub al: AlSpec,
    #[serde(default = "default_reps")]
    pub reps: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_reps() -> u32 {
    1
}

impl ScenarioConfig {
    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::new(
            self.j,
            self.n_bar,
            self.cv,
            self.sigma,
            GShape::from_parts(self.g_shape, self.mixture, self.al),
        )
    }
}

/// Observed data plus the truth it was generated from.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedDataset {
    pub data: TrialDataset,
    pub tau_true: Vec<f64>,
    pub n: Vec<u32>,
}

/// Site sizes: all `round(n_bar)` when `cv == 0`, otherwise rounded gamma
/// draws with mean `n_bar` and sd `n_bar * cv`, floored at 5.
pub fn draw_site_sizes<R: Rng + ?Sized>(j: usize, n_bar: f64, cv: f64, rng: &mut R) -> Result<Vec<u32>> {
    if !(n_bar >= MIN_SITE_SIZE as f64) || !n_bar.is_finite() {
        return Err(Error::InvalidParameter(format!("n_bar = {n_bar} must be >= 5")));
    }
    if !(cv >= 0.0) || !cv.is_finite() {
        return Err(Error::InvalidParameter(format!("cv = {cv} must be >= 0")));
    }
    if cv == 0.0 {
        let n = (n_bar.round() as u32).max(MIN_SITE_SIZE);
        return Ok(vec![n; j]);
    }
    let shape = 1.0 / (cv * cv);
    let scale = n_bar * cv * cv;
    let gamma = Gamma::new(shape, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((0..j)
        .map(|_| {
            let n = gamma.sample(rng).round();
            if n < MIN_SITE_SIZE as f64 {
                MIN_SITE_SIZE
            } else {
                n.min(u32::MAX as f64) as u32
            }
        })
        .collect())
}

/// `j` true effects from `shape`, rescaled to standard deviation `sigma`.
pub fn sample_true_effects<R: Rng + ?Sized>(j: usize, shape: &GShape, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be > 0")));
    }
    shape.validate()?;
    Ok((0..j).map(|_| sigma * shape.sample_standardized(rng)).collect())
}

/// Site ids used for generated data: `site001`, `site002`, ...
pub fn site_id(index: usize) -> String {
    format!("site{:03}", index + 1)
}

/// Draws one dataset for `scenario`.
pub fn generate<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<GeneratedDataset> {
    scenario.validate()?;
    let n = draw_site_sizes(scenario.j, scenario.n_bar, scenario.cv, rng)?;
    let tau_true = sample_true_effects(scenario.j, &scenario.shape, scenario.sigma, rng)?;
    let sites = n
        .iter()
        .zip(&tau_true)
        .enumerate()
        .map(|(i, (&nj, &tau))| {
            let se2 = 4.0 / nj as f64;
            let z: f64 = StandardNormal.sample(rng);
            SiteSummary::new(site_id(i), tau + se2.sqrt() * z, se2)
        })
        .collect();
    Ok(GeneratedDataset {
        data: validate_dataset(sites)?,
        tau_true,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn constant_sizes_without_variation() {
        let mut rng = rng_from_seed(1);
        assert_eq!(draw_site_sizes(3, 10.0, 0.0, &mut rng).unwrap(), vec![10, 10, 10]);
    }

    #[test]
    fn sizes_never_below_five() {
        let mut rng = rng_from_seed(2);
        let n = draw_site_sizes(20_000, 10.0, 0.75, &mut rng).unwrap();
        assert!(n.iter().all(|&x| x >= 5));
        assert!(n.iter().any(|&x| x == 5));
    }

    #[test]
    fn mixture_and_al_are_standardized() {
        let m = MixtureSpec::default();
        let [(m1, s1), (m2, s2)] = m.components();
        let mean = m.w * m1 + (1.0 - m.w) * m2;
        let var = m.w * (s1 * s1 + m1 * m1) + (1.0 - m.w) * (s2 * s2 + m2 * m2) - mean * mean;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);

        let al = AlSpec::default();
        // closed-form moments of the scaled exponential difference
        let k = al.psi() / std::f64::consts::SQRT_2;
        let mean = al.mu() + k * (1.0 / al.rho - al.rho);
        let var = k * k * (1.0 / (al.rho * al.rho) + al.rho * al.rho);
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn se2_follows_site_size() {
        let s = Scenario::new(30, 160.0, 0.0, 0.2, GShape::Gaussian).unwrap();
        let g = generate(&s, &mut rng_from_seed(3)).unwrap();
        assert!(g.data.se2().iter().all(|&v| v == 0.025));
        assert_eq!(g.tau_true.len(), 30);
        assert_eq!(g.n.len(), 30);
    }

    #[test]
    fn deterministic_given_seed() {
        let s = Scenario::new(25, 40.0, 0.5, 0.1, GShape::with_defaults(ShapeKind::AsymmetricLaplace)).unwrap();
        let a = generate(&s, &mut rng_from_seed(9)).unwrap();
        let b = generate(&s, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scenario_id_roundtrip() {
        let s = Scenario::new(100, 160.0, 0.5, 0.25, GShape::with_defaults(ShapeKind::GaussianMixture)).unwrap();
        assert_eq!(s.id(), "J100_n160_cv0.5_s0.25_mixture");
        let k = ScenarioKey::parse(&s.id()).unwrap();
        assert_eq!((k.j, k.n_bar, k.cv, k.sigma, k.shape), (100, 160.0, 0.5, 0.25, ShapeKind::GaussianMixture));
        assert!(ScenarioKey::parse("nonsense").is_err());
    }

    #[test]
    fn unknown_shape_is_rejected() {
        assert!(matches!("cauchy".parse::<ShapeKind>(), Err(Error::UnknownShape(_))));
        let json = r#"{"J":25,"n_bar":10,"cv":0,"sigma":0.1,"g_shape":"cauchy"}"#;
        assert!(serde_json::from_str::<ScenarioConfig>(json).is_err());
    }
}
