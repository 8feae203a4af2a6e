//! Losses of site estimates against the true effects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::summaries::{left_quantile, ordinal_ranks};

fn check_lengths(est: &[f64], truth: &[f64]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch(est.len(), truth.len()));
    }
    if est.is_empty() {
        return Err(Error::TooFewSites(0));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(est, truth)?;
    let sse: f64 = est.iter().zip(truth).map(|(a, t)| (a - t) * (a - t)).sum();
    Ok((sse / est.len() as f64).sqrt())
}

/// Mean squared error of the ranks, `(1/J) sum (A_j - R_j)^2`. Ties are
/// broken by site order.
pub fn mselr(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(est, truth)?;
    let a = ordinal_ranks(est);
    let r = ordinal_ranks(truth);
    let ss: usize = a.iter().zip(&r).map(|(x, y)| x.abs_diff(*y).pow(2)).sum();
    Ok(ss as f64 / est.len() as f64)
}

/// Mean squared error of the percentile ranks, `MSELR / J^2`.
pub fn mselp(est: &[f64], truth: &[f64]) -> Result<f64> {
    let j = est.len() as f64;
    Ok(mselr(est, truth)? / (j * j))
}

/// Integrated squared difference between the EDFs of `est` and `truth`,
/// computed exactly over the merged breakpoints.
pub fn isel(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(est, truth)?;
    if est.iter().chain(truth).any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("isel needs finite values".into()));
    }
    let mut a = est.to_vec();
    let mut g = truth.to_vec();
    a.sort_by(f64::total_cmp);
    g.sort_by(f64::total_cmp);
    let n = a.len();
    let (mut ia, mut ig) = (0, 0);
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    // walk breakpoints left to right; the EDF difference is constant in between
    while ia < n || ig < n {
        let next = match (a.get(ia), g.get(ig)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            let diff = (ia as f64 - ig as f64) / n as f64;
            total += diff * diff * (next - p);
        }
        while ia < n && a[ia] == next {
            ia += 1;
        }
        while ig < n && g[ig] == next {
            ig += 1;
        }
        prev = Some(next);
    }
    Ok(total)
}

/// Squared difference between the `q`-quantiles of `est` and `truth`.
pub fn mse_percentile(est: &[f64], truth: &[f64], q: f64) -> Result<f64> {
    check_lengths(est, truth)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level {q} outside (0, 1)")));
    }
    let mut a = est.to_vec();
    let mut g = truth.to_vec();
    a.sort_by(f64::total_cmp);
    g.sort_by(f64::total_cmp);
    let d = left_quantile(&a, q) - left_quantile(&g, q);
    Ok(d * d)
}

/// All losses for one set of estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rmse: f64,
    pub isel: f64,
    pub mselp: f64,
    pub mse_p90: f64,
}

impl LossReport {
    pub fn compute(est: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(est, truth)?,
            isel: isel(est, truth)?,
            mselp: mselp(est, truth)?,
            mse_p90: mse_percentile(est, truth, 0.9)?,
        })
    }
}
