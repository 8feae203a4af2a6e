//! Site-level summary data, validation, binary-outcome ingestion and the
//! informativeness diagnostic.
//!
//! A multisite trial enters the models only through one `(tau_hat, se2)`
//! pair per site: the estimated site effect and its squared standard error.

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed effect estimate and sampling variance for one site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub site_id: String,
    pub tau_hat: f64,
    pub se2: f64,
}

impl SiteSummary {
    pub fn new(site_id: impl Into<String>, tau_hat: f64, se2: f64) -> Self {
        Self {
            site_id: site_id.into(),
            tau_hat,
            se2,
        }
    }
}

/// A validated, ordered collection of at least two sites with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialDataset {
    sites: Vec<SiteSummary>,
}

impl TrialDataset {
    /// Validates and wraps `sites`. Same as [`validate_dataset`].
    pub fn new(sites: Vec<SiteSummary>) -> Result<Self> {
        validate_dataset(sites)
    }

    pub fn sites(&self) -> &[SiteSummary] {
        &self.sites
    }

    /// Number of sites `J`.
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site_ids(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.site_id.clone()).collect()
    }

    pub fn tau_hat(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.tau_hat).collect()
    }

    pub fn se2(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.se2).collect()
    }

    /// Geometric mean of the sampling variances.
    pub fn geometric_mean_se2(&self) -> f64 {
        let mean_log = self.sites.iter().map(|s| s.se2.ln()).sum::<f64>() / self.len() as f64;
        mean_log.exp()
    }
}

/// Checks the dataset invariants and returns the dataset unchanged.
pub fn validate_dataset(sites: Vec<SiteSummary>) -> Result<TrialDataset> {
    if sites.len() < 2 {
        return Err(Error::TooFewSites(sites.len()));
    }
    let mut seen = HashSet::with_capacity(sites.len());
    for s in &sites {
        if !seen.insert(s.site_id.as_str()) {
            return Err(Error::DuplicateSiteId(s.site_id.clone()));
        }
        if !s.tau_hat.is_finite() {
            return Err(Error::NonFiniteEstimate(s.site_id.clone()));
        }
        // `!(x > 0)` also rejects NaN.
        if !(s.se2 > 0.0) || !s.se2.is_finite() {
            return Err(Error::NonPositiveVariance {
                site: s.site_id.clone(),
                se2: s.se2,
            });
        }
    }
    Ok(TrialDataset { sites })
}

/// Design characteristics of a single site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteDesign {
    /// Site sample size.
    pub n: u32,
    /// Proportion of units treated.
    pub p: f64,
    /// Share of outcome variance explained by unit-level covariates.
    pub r2: f64,
    /// Within-arm outcome variance.
    pub s2: f64,
}

impl SiteDesign {
    pub fn new(n: u32, p: f64, r2: f64, s2: f64) -> Result<Self> {
        if n < 5 {
            return Err(Error::InvalidParameter(format!("site size {n} is below 5")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("proportion treated {p} outside (0,1)")));
        }
        if !(0.0..1.0).contains(&r2) {
            return Err(Error::InvalidParameter(format!("R^2 {r2} outside [0,1)")));
        }
        if !(s2 > 0.0) {
            return Err(Error::InvalidParameter(format!("outcome variance {s2} is not positive")));
        }
        Ok(Self { n, p, r2, s2 })
    }

    /// Neyman sampling variance of the difference in means under homoskedasticity.
    pub fn se2(&self) -> f64 {
        (1.0 / self.p + 1.0 / (1.0 - self.p)) * self.s2 * (1.0 - self.r2) / self.n as f64
    }

    /// Treated and control arm sizes, `n p` and `n (1 - p)`.
    pub fn arm_sizes(&self) -> (f64, f64) {
        let n = self.n as f64;
        (n * self.p, n * (1.0 - self.p))
    }
}

/// Average reliability of the site estimates, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Informativeness(f64);

impl Informativeness {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `sigma2 / (sigma2 + geometric mean of se2)`.
pub fn informativeness(d: &TrialDataset, sigma2: f64) -> Result<Informativeness> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma^2 = {sigma2} must be finite and >= 0")));
    }
    Ok(Informativeness(informativeness_from_gm(sigma2, d.geometric_mean_se2())))
}

pub(crate) fn informativeness_from_gm(sigma2: f64, gm_se2: f64) -> f64 {
    if sigma2 == 0.0 {
        0.0
    } else {
        sigma2 / (sigma2 + gm_se2)
    }
}

/// Converts a log odds ratio and its variance to the standardized
/// mean-difference (Cohen's d) scale.
pub fn logor_to_d(logor: f64, var_logor: f64) -> (f64, f64) {
    let scale = 3f64.sqrt() / PI;
    (logor * scale, var_logor * 3.0 / (PI * PI))
}

/// 2x2 success counts for one site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySiteTable {
    pub site_id: String,
    #[serde(rename = "t_succ")]
    pub treated_success: u64,
    #[serde(rename = "t_tot")]
    pub treated_total: u64,
    #[serde(rename = "c_succ")]
    pub control_success: u64,
    #[serde(rename = "c_tot")]
    pub control_total: u64,
}

impl BinarySiteTable {
    pub fn new(site_id: impl Into<String>, t_succ: u64, t_tot: u64, c_succ: u64, c_tot: u64) -> Self {
        Self {
            site_id: site_id.into(),
            treated_success: t_succ,
            treated_total: t_tot,
            control_success: c_succ,
            control_total: c_tot,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidTable {
            site: self.site_id.clone(),
            reason: reason.to_string(),
        };
        if self.treated_total == 0 || self.control_total == 0 {
            return Err(bad("arm totals must be at least 1"));
        }
        if self.treated_success > self.treated_total || self.control_success > self.control_total {
            return Err(bad("successes exceed totals"));
        }
        Ok(())
    }

    /// Woolf log odds ratio and its variance; adds 0.5 to every cell when
    /// any cell is empty.
    pub fn log_odds_ratio(&self) -> (f64, f64) {
        let mut cells = [
            self.treated_success as f64,
            (self.treated_total - self.treated_success) as f64,
            self.control_success as f64,
            (self.control_total - self.control_success) as f64,
        ];
        if cells.iter().any(|&c| c == 0.0) {
            cells.iter_mut().for_each(|c| *c += 0.5);
        }
        let [a, b, c, d] = cells;
        let logor = (a * d / (b * c)).ln();
        let var = 1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d;
        (logor, var)
    }
}

/// Result of [`ingest_binary_sites`]: the retained dataset plus the ids of
/// sites dropped by the cell-count rule, in input order.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub dataset: TrialDataset,
    pub dropped: Vec<String>,
}

/// Converts binary-outcome site tables to effect-size summaries.
///
/// A site is kept only when both its treated count `n p` and its control
/// count `n (1 - p)` are at least `min_cell`.
pub fn ingest_binary_sites(tables: &[BinarySiteTable], min_cell: u64) -> Result<Ingested> {
    if tables.is_empty() {
        return Err(Error::InvalidParameter("no site tables given".into()));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for t in tables {
        t.check()?;
        if t.treated_total < min_cell || t.control_total < min_cell {
            dropped.push(t.site_id.clone());
            continue;
        }
        let (logor, var) = t.log_odds_ratio();
        let (d, var_d) = logor_to_d(logor, var);
        kept.push(SiteSummary::new(t.site_id.clone(), d, var_d));
    }
    if kept.is_empty() {
        return Err(Error::AllSitesExcluded);
    }
    Ok(Ingested {
        dataset: validate_dataset(kept)?,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sites() -> Vec<SiteSummary> {
        vec![SiteSummary::new("a", 0.1, 0.1), SiteSummary::new("b", -0.2, 0.2)]
    }

    #[test]
    fn valid_dataset_passes_unchanged() {
        let d = validate_dataset(two_sites()).unwrap();
        assert_eq!(d.sites(), two_sites().as_slice());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = two_sites();
        s[1].se2 = 0.0;
        assert!(matches!(validate_dataset(s), Err(Error::NonPositiveVariance { .. })));
        let s = vec![SiteSummary::new("a", 0.1, 0.1)];
        assert!(matches!(validate_dataset(s), Err(Error::TooFewSites(1))));
        let mut s = two_sites();
        s[1].site_id = "a".into();
        assert!(matches!(validate_dataset(s), Err(Error::DuplicateSiteId(_))));
        let mut s = two_sites();
        s[0].tau_hat = f64::NAN;
        assert!(matches!(validate_dataset(s), Err(Error::NonFiniteEstimate(_))));
    }

    #[test]
    fn informativeness_values() {
        let sites = (0..10).map(|j| SiteSummary::new(format!("s{j}"), 0.0, 4.0 / 160.0)).collect();
        let d = TrialDataset::new(sites).unwrap();
        let i = informativeness(&d, 0.25 * 0.25).unwrap().value();
        assert!((i - 0.0625 / 0.0875).abs() < 1e-12);
        assert!((i - 0.714).abs() < 1e-3);
        assert_eq!(informativeness(&d, 0.0).unwrap().value(), 0.0);
        assert!(informativeness(&d, -1.0).is_err());

        let sites = (0..10).map(|j| SiteSummary::new(format!("s{j}"), 0.0, 0.4)).collect();
        let d = TrialDataset::new(sites).unwrap();
        let i = informativeness(&d, 0.05 * 0.05).unwrap().value();
        assert!((i - 0.0025 / 0.4025).abs() < 1e-12);
        assert!((i - 0.00621).abs() < 1e-5);
    }

    #[test]
    fn logor_conversion() {
        assert_eq!(logor_to_d(0.0, 1.0).0, 0.0);
        let (d, v) = logor_to_d(1.0, 1.0);
        assert!((d - 0.55133).abs() < 1e-5);
        assert!((v - 0.30396).abs() < 1e-5);
        assert_eq!(logor_to_d(-1.0, 1.0).0, -d);
    }

    #[test]
    fn ingest_worked_site() {
        let tables = vec![
            BinarySiteTable::new("x", 40, 80, 20, 80),
            BinarySiteTable::new("y", 30, 60, 30, 60),
            BinarySiteTable::new("small", 3, 7, 10, 40),
        ];
        let out = ingest_binary_sites(&tables, 8).unwrap();
        assert_eq!(out.dropped, vec!["small".to_string()]);
        let x = &out.dataset.sites()[0];
        let expect_d = 3f64.ln() * 3f64.sqrt() / PI;
        assert!((x.tau_hat - expect_d).abs() < 1e-12);
        assert!((x.tau_hat - 0.6057).abs() < 1e-4);
        let expect_v = (1.0 / 40.0 + 1.0 / 40.0 + 1.0 / 20.0 + 1.0 / 60.0) * 3.0 / (PI * PI);
        assert!((x.se2 - expect_v).abs() < 1e-14);
        assert_eq!(out.dataset.sites()[1].tau_hat, 0.0);
    }

    #[test]
    fn ingest_zero_cell_uses_continuity_correction() {
        let t = BinarySiteTable::new("z", 0, 20, 5, 20);
        let (lor, var) = t.log_odds_ratio();
        assert!((lor - ((0.5f64 * 15.5) / (20.5 * 5.5)).ln()).abs() < 1e-12);
        assert!((var - (1.0 / 0.5 + 1.0 / 20.5 + 1.0 / 5.5 + 1.0 / 15.5)).abs() < 1e-12);
    }

    #[test]
    fn ingest_all_excluded() {
        let tables = vec![BinarySiteTable::new("a", 1, 7, 3, 30), BinarySiteTable::new("b", 1, 30, 3, 5)];
        assert!(matches!(ingest_binary_sites(&tables, 8), Err(Error::AllSitesExcluded)));
        let bad = vec![BinarySiteTable::new("a", 9, 7, 3, 30)];
        assert!(matches!(ingest_binary_sites(&bad, 8), Err(Error::InvalidTable { .. })));
    }
}
