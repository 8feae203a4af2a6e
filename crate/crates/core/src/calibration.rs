//! Gamma hyperpriors for the DP concentration `alpha`.
//!
//! A `Gamma(a, b)` prior on `alpha` induces a prior on the number of
//! occupied clusters `K` among `J` sites:
//!
//! ```text
//! Pr(K | J, a, b) = b^a |S1(J, K)| / Gamma(a)
//!                   * Integral_0^inf alpha^(K+a-1) e^(-b alpha) Gamma(alpha) / Gamma(alpha + J) d alpha
//! ```
//!
//! with `|S1|` the unsigned Stirling numbers of the first kind. The
//! informative calibration picks `(a, b)` so that this pmf is as close as
//! possible, in KL divergence, to a discretized chi-square target; the
//! diffuse rule centers `alpha` at `J/2` with variance `5 J`.
//!
//! Both the Stirling numbers and the integrals span hundreds of orders of
//! magnitude, so everything is carried on the log scale. The integral is
//! taken over `t = ln(alpha)`, where the log integrand
//! `g_K(t) = (K+a) t - b e^t + ln Gamma(e^t) - ln Gamma(e^t + J)` is concave
//! with slope `K + a - b e^t - E(K | e^t, J)`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::quadrature::integrate;

/// Largest `J` accepted by [`log_stirling1`].
pub const MAX_SITES: usize = 1000;

/// A probability mass function over `K = 1..=J`, stored as log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPrior {
    log_pmf: Vec<f64>,
}

impl ClusterPrior {
    /// Wraps an explicit pmf; it must sum to one within `1e-8`.
    pub fn from_pmf(pmf: &[f64]) -> Result<Self> {
        if pmf.is_empty() || pmf.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter("pmf entries must be finite and >= 0".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!("pmf sums to {total}, not 1")));
        }
        Ok(Self {
            log_pmf: pmf.iter().map(|p| p.ln()).collect(),
        })
    }

    fn from_log_weights(mut logw: Vec<f64>) -> Self {
        let z = log_sum_exp(&logw);
        logw.iter_mut().for_each(|l| *l -= z);
        Self { log_pmf: logw }
    }

    /// Number of support points `J`.
    pub fn len(&self) -> usize {
        self.log_pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_pmf.is_empty()
    }

    pub fn log_pmf(&self) -> &[f64] {
        &self.log_pmf
    }

    /// Probabilities of `K = 1..=J`.
    pub fn pmf(&self) -> Vec<f64> {
        self.log_pmf.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self) -> f64 {
        self.log_pmf
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1) as f64 * l.exp())
            .sum()
    }

    /// Most probable `K` (smallest on ties).
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.log_pmf.iter().enumerate() {
            if *l > self.log_pmf[best] {
                best = i;
            }
        }
        best + 1
    }

    /// `Pr(K > k)`.
    pub fn tail_above(&self, k: usize) -> f64 {
        self.log_pmf.iter().skip(k).map(|l| l.exp()).sum()
    }
}

/// Shape `a` and rate `b` of a gamma prior on `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaHyper {
    pub a: f64,
    pub b: f64,
}

impl GammaHyper {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma hyperparameters ({a}, {b}) must be positive")));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / self.b
    }

    pub fn variance(&self) -> f64 {
        self.a / (self.b * self.b)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_add_exp(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// `ln |S1(J, K)|` for `K = 1..=J`, from the recurrence
/// `|S1(n+1, k)| = n |S1(n, k)| + |S1(n, k-1)|` carried in log space.
pub fn log_stirling1(j: usize) -> Result<Vec<f64>> {
    if j == 0 || j > MAX_SITES {
        return Err(Error::InvalidParameter(format!("J = {j} outside 1..={MAX_SITES}")));
    }
    // row[k] holds ln|S1(n, k)|, k = 0..=n
    let mut row = vec![f64::NEG_INFINITY; j + 1];
    row[1] = 0.0;
    for n in 1..j {
        let ln_n = (n as f64).ln();
        for k in (1..=n + 1).rev() {
            row[k] = log_add_exp(ln_n + row[k], row[k - 1]);
        }
    }
    Ok(row[1..].to_vec())
}

/// `E(K | alpha, J) = 1 + alpha (psi(alpha + J) - psi(alpha + 1))`, stable
/// for tiny `alpha`.
fn expected_clusters_digamma(alpha: f64, j: usize) -> f64 {
    1.0 + alpha * (digamma(alpha + j as f64) - digamma(alpha + 1.0))
}

/// `ln Gamma(x + 1) - ln Gamma(x + J)`, finite down to `x = 0`.
fn log_gamma_ratio1(x: f64, j: usize) -> f64 {
    ln_gamma(x + 1.0) - ln_gamma(x + j as f64)
}

/// Evaluates the induced prior on `K` for a fixed `J`, reusing the
/// Stirling row across many `(a, b)`.
#[derive(Clone, Debug)]
pub struct ClusterPriorModel {
    j: usize,
    log_s1: Vec<f64>,
}

impl ClusterPriorModel {
    pub fn new(j: usize) -> Result<Self> {
        Ok(Self { j, log_s1: log_stirling1(j)? })
    }

    pub fn j(&self) -> usize {
        self.j
    }

    /// `ln Integral exp(g_K(t)) dt` over `t = ln(alpha)`.
    fn log_alpha_integral(&self, k: usize, a: f64, b: f64) -> Result<f64> {
        let j = self.j;
        let kf = k as f64;
        // Gamma(x) = Gamma(x + 1) / x absorbs one power of alpha, so e^t
        // may underflow in the far left tail without producing infinities
        let g = |t: f64| {
            let x = t.exp();
            (kf + a - 1.0) * t - b * x + log_gamma_ratio1(x, j)
        };
        let slope = |t: f64| {
            let x = t.exp();
            kf + a - b * x - expected_clusters_digamma(x, j)
        };

        // the slope decreases from K + a - 1 > 0 to -inf: bisect for the mode
        let mut lo = -50.0;
        let mut hi = ((kf + a) / b).ln() + 1.0;
        if !(slope(lo) > 0.0) {
            return Err(Error::QuadratureFailure(format!("cannot bracket mode for K={k}, a={a}, b={b}")));
        }
        while slope(hi) > 0.0 {
            hi += 1.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        let mode = 0.5 * (lo + hi);
        let peak = g(mode);
        if !peak.is_finite() {
            return Err(Error::QuadratureFailure(format!("non-finite integrand peak for K={k}, a={a}, b={b}")));
        }

        // window where the log integrand is within 40 nats of its maximum
        let reach = |dir: f64| -> Result<f64> {
            let mut d = 1.0;
            while g(mode + dir * d) > peak - 40.0 {
                d *= 2.0;
                if d > 1e7 {
                    return Err(Error::QuadratureFailure(format!("integrand does not decay for K={k}, a={a}, b={b}")));
                }
            }
            Ok(mode + dir * d)
        };
        let left = reach(-1.0)?;
        let right = reach(1.0)?;
        let value = integrate(|t| (g(t) - peak).exp(), left, right, 1e-300, 1e-10)?;
        Ok(peak + value.ln())
    }

    /// Induced pmf of `K` under `alpha ~ Gamma(a, b)`.
    ///
    /// Fails if the quadrature-based probabilities miss unit mass by more
    /// than `1e-4` before renormalization.
    pub fn pmf(&self, a: f64, b: f64) -> Result<ClusterPrior> {
        GammaHyper::new(a, b)?;
        let log_const = a * b.ln() - ln_gamma(a);
        let logw = (1..=self.j)
            .map(|k| Ok(log_const + self.log_s1[k - 1] + self.log_alpha_integral(k, a, b)?))
            .collect::<Result<Vec<f64>>>()?;
        let total = log_sum_exp(&logw).exp();
        if (total - 1.0).abs() > 1e-4 {
            return Err(Error::QuadratureFailure(format!(
                "induced pmf for (J={}, a={a}, b={b}) sums to {total}",
                self.j
            )));
        }
        Ok(ClusterPrior::from_log_weights(logw))
    }

    /// Raw (pre-normalization) total mass; exposed for diagnostics.
    pub fn raw_mass(&self, a: f64, b: f64) -> Result<f64> {
        let log_const = a * b.ln() - ln_gamma(a);
        let logw = (1..=self.j)
            .map(|k| Ok(log_const + self.log_s1[k - 1] + self.log_alpha_integral(k, a, b)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(log_sum_exp(&logw).exp())
    }
}

/// Induced prior on the number of clusters for `J` sites and `alpha ~ Gamma(a, b)`.
pub fn cluster_prior(j: usize, a: f64, b: f64) -> Result<ClusterPrior> {
    ClusterPriorModel::new(j)?.pmf(a, b)
}

/// `sum target * ln(target / induced)` over the support of `target`.
pub fn kl_divergence(target: &ClusterPrior, induced: &ClusterPrior) -> Result<f64> {
    if target.len() != induced.len() {
        return Err(Error::LengthMismatch(target.len(), induced.len()));
    }
    let mut kl = 0.0;
    for (k, (&lp, &lq)) in target.log_pmf.iter().zip(&induced.log_pmf).enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        if lq == f64::NEG_INFINITY {
            return Err(Error::InfiniteDivergence(k + 1));
        }
        kl += lp.exp() * (lp - lq);
    }
    Ok(kl)
}

/// Chi-square(`df`) density at `K = 1..=J`, renormalized to a pmf.
pub fn chi2_target(j: usize, df: u32) -> Result<ClusterPrior> {
    if df < 1 {
        return Err(Error::InvalidParameter("df must be at least 1".into()));
    }
    if j < 1 {
        return Err(Error::InvalidParameter("J must be at least 1".into()));
    }
    let half = df as f64 / 2.0;
    // normalizing constants cancel after renormalization
    let logw = (1..=j).map(|k| (half - 1.0) * (k as f64).ln() - k as f64 / 2.0).collect();
    Ok(ClusterPrior::from_log_weights(logw))
}

/// Diffuse hyperprior: `E(alpha) = J/2` and `Var(alpha) = 5 J`, i.e.
/// `b = 0.1` and `a = J / 20`.
pub fn diffuse_hyper(j: usize) -> Result<GammaHyper> {
    if j < 2 {
        return Err(Error::TooFewSites(j));
    }
    GammaHyper::new(j as f64 / 20.0, 0.1)
}

/// Lattice searched by [`calibrate_inform`]; every candidate is
/// `(a_min + i step, b_min + k step)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub step: f64,
    /// Coarse pass visits every `coarse_a`-th `a` and `coarse_b`-th `b`.
    pub coarse_a: usize,
    pub coarse_b: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            a_min: 0.05,
            a_max: 20.0,
            b_min: 0.05,
            b_max: 5.0,
            step: 0.01,
            coarse_a: 25,
            coarse_b: 10,
        }
    }
}

impl GridSpec {
    fn n_a(&self) -> usize {
        ((self.a_max - self.a_min) / self.step).round() as usize
    }

    fn n_b(&self) -> usize {
        ((self.b_max - self.b_min) / self.step).round() as usize
    }

    fn a(&self, i: usize) -> f64 {
        self.a_min + i as f64 * self.step
    }

    fn b(&self, k: usize) -> f64 {
        self.b_min + k as f64 * self.step
    }
}

/// Result of the informative calibration.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub j: usize,
    pub hyper: GammaHyper,
    pub kl: f64,
    pub target: ClusterPrior,
    pub induced: ClusterPrior,
}

/// Lattice search over `(a, b)` minimizing `KL(chi2(df) || Pr(K | J, a, b))`.
pub fn calibrate_inform(j: usize, df: u32) -> Result<Calibration> {
    calibrate_to_target(j, &chi2_target(j, df)?, &GridSpec::default())
}

type Cell = (usize, usize);

struct KlSurface<'a> {
    model: ClusterPriorModel,
    target: &'a ClusterPrior,
    grid: GridSpec,
    cache: HashMap<Cell, f64>,
}

impl KlSurface<'_> {
    fn eval_many(&mut self, cells: Vec<Cell>) -> Result<()> {
        let todo: Vec<Cell> = cells.into_iter().filter(|c| !self.cache.contains_key(c)).collect();
        let model = &self.model;
        let target = self.target;
        let grid = self.grid;
        let values = todo
            .par_iter()
            .map(|&(i, k)| {
                let induced = model.pmf(grid.a(i), grid.b(k))?;
                kl_divergence(target, &induced)
            })
            .collect::<Result<Vec<f64>>>()?;
        self.cache.extend(todo.into_iter().zip(values));
        Ok(())
    }

    /// Best cached cell among `cells`; ties go to the smaller `(a, b)`.
    fn best_of(&self, cells: &[Cell]) -> Cell {
        *cells
            .iter()
            .min_by(|x, y| self.cache[x].total_cmp(&self.cache[y]).then(x.cmp(y)))
            .expect("non-empty cell list")
    }

    fn window(&self, center: Cell, half_a: usize, half_b: usize, stride_a: usize, stride_b: usize) -> Vec<Cell> {
        let (n_a, n_b) = (self.grid.n_a(), self.grid.n_b());
        let a_range = center.0.saturating_sub(half_a)..=(center.0 + half_a).min(n_a);
        let b_lo = center.1.saturating_sub(half_b);
        let b_hi = (center.1 + half_b).min(n_b);
        a_range
            .step_by(stride_a)
            .flat_map(|i| (b_lo..=b_hi).step_by(stride_b).map(move |k| (i, k)))
            .chain(std::iter::once(center))
            .collect()
    }
}

/// [`calibrate_inform`] against an arbitrary target pmf and lattice.
///
/// Coarse pass, two refinement passes around the best coarse cells, then
/// steepest descent over the 8-neighbourhood on the fine lattice until no
/// neighbour improves. Deterministic for a given `(J, target, grid)`.
pub fn calibrate_to_target(j: usize, target: &ClusterPrior, grid: &GridSpec) -> Result<Calibration> {
    if target.len() != j {
        return Err(Error::LengthMismatch(target.len(), j));
    }
    if !(grid.step > 0.0) || grid.a_min <= 0.0 || grid.b_min <= 0.0 || grid.coarse_a == 0 || grid.coarse_b == 0 {
        return Err(Error::InvalidParameter(format!("invalid grid {grid:?}")));
    }
    let mut surface = KlSurface {
        model: ClusterPriorModel::new(j)?,
        target,
        grid: *grid,
        cache: HashMap::new(),
    };
    let (n_a, n_b) = (grid.n_a(), grid.n_b());

    let coarse: Vec<Cell> = (0..=n_a)
        .step_by(grid.coarse_a)
        .flat_map(|i| (0..=n_b).step_by(grid.coarse_b).map(move |k| (i, k)))
        .collect();
    surface.eval_many(coarse.clone())?;
    let mut ranked = coarse.clone();
    ranked.sort_by(|x, y| surface.cache[x].total_cmp(&surface.cache[y]).then(x.cmp(y)));

    let mut candidates = Vec::new();
    for &seed in ranked.iter().take(3) {
        let mid = surface.window(seed, grid.coarse_a, grid.coarse_b, grid.coarse_a.div_ceil(5), grid.coarse_b.div_ceil(5));
        surface.eval_many(mid.clone())?;
        let mid_best = surface.best_of(&mid);
        let fine = surface.window(mid_best, grid.coarse_a.div_ceil(5), grid.coarse_b.div_ceil(5), 1, 1);
        surface.eval_many(fine.clone())?;
        candidates.push(surface.best_of(&fine));
    }
    let mut current = surface.best_of(&candidates);

    loop {
        let nbhd = surface.window(current, 1, 1, 1, 1);
        surface.eval_many(nbhd.clone())?;
        let next = surface.best_of(&nbhd);
        if next == current {
            break;
        }
        current = next;
    }

    let hyper = GammaHyper::new(grid.a(current.0), grid.b(current.1))?;
    let induced = surface.model.pmf(hyper.a, hyper.b)?;
    Ok(Calibration {
        j,
        kl: surface.cache[&current],
        hyper,
        target: target.clone(),
        induced,
    })
}

/// KL at `(a, b)` and its eight lattice neighbours at spacing `step`
/// (center first). Used to check local optimality of a calibration.
pub fn kl_neighbourhood(j: usize, target: &ClusterPrior, hyper: GammaHyper, step: f64) -> Result<Vec<((f64, f64), f64)>> {
    let model = ClusterPriorModel::new(j)?;
    let mut out = Vec::with_capacity(9);
    for (da, db) in [(0, 0), (-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
        let a = hyper.a + da as f64 * step;
        let b = hyper.b + db as f64 * step;
        if a <= 0.0 || b <= 0.0 {
            continue;
        }
        out.push(((a, b), kl_divergence(target, &model.pmf(a, b)?)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stirling_small_rows() {
        let r: Vec<f64> = log_stirling1(3).unwrap().iter().map(|l| l.exp()).collect();
        for (got, want) in r.iter().zip([2.0, 3.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((log_stirling1(5).unwrap()[1].exp() - 50.0).abs() < 1e-10);
        assert_eq!(log_stirling1(1).unwrap(), vec![0.0]);
        assert!(log_stirling1(0).is_err());
        assert!(log_stirling1(1001).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = ClusterPrior::from_pmf(&[0.3, 0.7]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let t = ClusterPrior::from_pmf(&[1.0, 0.0]).unwrap();
        let q = ClusterPrior::from_pmf(&[0.5, 0.5]).unwrap();
        assert!((kl_divergence(&t, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(kl_divergence(&q, &t), Err(Error::InfiniteDivergence(2))));
        let p = ClusterPrior::from_pmf(&[0.9, 0.1]).unwrap();
        let a = kl_divergence(&p, &q).unwrap();
        let b = kl_divergence(&q, &p).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn chi2_target_shape() {
        let t = chi2_target(50, 1).unwrap();
        assert_eq!(t.mode(), 1);
        assert!((t.pmf().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let t5 = chi2_target(50, 5).unwrap();
        assert!(t5.tail_above(25) < 1e-3);
        assert!(chi2_target(50, 0).is_err());
    }

    #[test]
    fn diffuse_pairs() {
        for (j, a) in [(25, 1.25), (50, 2.5), (75, 3.75), (100, 5.0), (300, 15.0)] {
            let h = diffuse_hyper(j).unwrap();
            assert_eq!((h.a, h.b), (a, 0.1));
            assert!((h.mean() - j as f64 / 2.0).abs() < 1e-12);
            assert!((h.variance() - 5.0 * j as f64).abs() < 1e-9);
        }
        assert!(diffuse_hyper(1).is_err());
    }

    #[test]
    fn single_site_prior_is_degenerate() {
        let p = cluster_prior(1, 1.0, 1.0).unwrap();
        assert!((p.pmf()[0] - 1.0).abs() < 1e-12);
    }
}
