//! Brute-force reference computations for the integration tests. None of
//! these call into the library's numerical code.

#![allow(dead_code)]

use num_bigint::BigUint;

/// Result of one oracle comparison.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub inputs: String,
    pub reference: f64,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    /// Relative comparison; falls back to absolute when the reference is 0.
    pub fn relative(name: &str, inputs: String, reference: f64, value: f64, tolerance: f64) -> Self {
        let err = if reference == 0.0 { value.abs() } else { ((value - reference) / reference).abs() };
        Self {
            name: name.into(),
            inputs,
            reference,
            value,
            tolerance,
            pass: err <= tolerance,
        }
    }

    pub fn absolute(name: &str, inputs: String, reference: f64, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            inputs,
            reference,
            value,
            tolerance,
            pass: (value - reference).abs() <= tolerance,
        }
    }
}

/// Midpoint Riemann sum of `(A(t) - G(t))^2` over `[min, max]` of the
/// pooled values, on `points` cells.
pub fn isel_grid(est: &[f64], truth: &[f64], points: usize) -> f64 {
    let lo = est.iter().chain(truth).copied().fold(f64::INFINITY, f64::min);
    let hi = est.iter().chain(truth).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 0.0;
    }
    let n = est.len() as f64;
    let h = (hi - lo) / points as f64;
    let mut total = 0.0;
    for i in 0..points {
        let t = lo + (i as f64 + 0.5) * h;
        let a = est.iter().filter(|&&x| x <= t).count() as f64 / n;
        let g = truth.iter().filter(|&&x| x <= t).count() as f64 / n;
        total += (a - g) * (a - g) * h;
    }
    total
}

/// Faster grid oracle for larger grids: same rule, the EDFs advanced by a
/// pointer sweep over the sorted values.
pub fn isel_grid_sorted(est: &[f64], truth: &[f64], points: usize) -> f64 {
    let mut a = est.to_vec();
    let mut g = truth.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    g.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let lo = a[0].min(g[0]);
    let hi = a[a.len() - 1].max(g[g.len() - 1]);
    if hi <= lo {
        return 0.0;
    }
    let n = a.len() as f64;
    let h = (hi - lo) / points as f64;
    let (mut ia, mut ig) = (0usize, 0usize);
    let mut total = 0.0;
    for i in 0..points {
        let t = lo + (i as f64 + 0.5) * h;
        while ia < a.len() && a[ia] <= t {
            ia += 1;
        }
        while ig < g.len() && g[ig] <= t {
            ig += 1;
        }
        let d = (ia as f64 - ig as f64) / n;
        total += d * d;
    }
    total * h
}

/// Unsigned Stirling numbers of the first kind `|s(j, k)|`, `k = 1..=j`,
/// by the exact integer recurrence.
pub fn stirling_exact(j: usize) -> Vec<BigUint> {
    // row[k] = |s(n, k)| for k = 0..=n
    let mut row: Vec<BigUint> = vec![BigUint::from(1u32)];
    for n in 0..j {
        let mut next = vec![BigUint::from(0u32); n + 2];
        for k in 0..=n {
            next[k + 1] += &row[k];
            next[k] += &row[k] * BigUint::from(n as u64);
        }
        row = next;
    }
    row.into_iter().skip(1).collect()
}

pub fn factorial(j: usize) -> BigUint {
    (1..=j as u64).fold(BigUint::from(1u32), |acc, i| acc * BigUint::from(i))
}

/// Pmf of the number of clusters after `j` sites of the Polya urn, by
/// walking every allocation sequence.
pub fn urn_enumeration(alpha: f64, j: usize) -> Vec<f64> {
    fn walk(alpha: f64, j: usize, sizes: &mut Vec<usize>, p: f64, out: &mut [f64]) {
        let i = sizes.iter().sum::<usize>();
        if i == j {
            out[sizes.len() - 1] += p;
            return;
        }
        let denom = alpha + i as f64;
        for c in 0..sizes.len() {
            let w = sizes[c] as f64 / denom;
            sizes[c] += 1;
            walk(alpha, j, sizes, p * w, out);
            sizes[c] -= 1;
        }
        sizes.push(1);
        walk(alpha, j, sizes, p * alpha / denom, out);
        sizes.pop();
    }
    let mut out = vec![0.0; j];
    let mut sizes = vec![1];
    walk(alpha, j, &mut sizes, 1.0, &mut out);
    out
}

/// Normal-normal conditional posterior `(mean, variance)` in precision form.
pub fn conjugate_posterior(tau_hat: f64, se2: f64, tau: f64, sigma2: f64) -> (f64, f64) {
    let prec = 1.0 / sigma2 + 1.0 / se2;
    ((tau / sigma2 + tau_hat / se2) / prec, 1.0 / prec)
}

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for k in 0..n {
            a[col][k] /= d;
        }
        b[col] /= d;
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for k in 0..n {
                        a[r][k] -= f * a[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    b
}

/// Inverse of a small dense matrix, column by column.
pub fn invert_dense(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let e = (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect();
            solve_dense(a.to_vec(), e)
        })
        .collect();
    (0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect()
}

fn xtx(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = x[0].len();
    let mut m = vec![vec![0.0; k]; k];
    for row in x {
        for a in 0..k {
            for b in 0..k {
                m[a][b] += row[a] * row[b];
            }
        }
    }
    m
}

/// OLS coefficients from the normal equations `(X'X) b = X'y`.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut xty = vec![0.0; k];
    for (row, yi) in x.iter().zip(y) {
        for a in 0..k {
            xty[a] += row[a] * yi;
        }
    }
    solve_dense(xtx(x), xty)
}

/// HC1 covariance `n/(n-k) (X'X)^-1 [sum x_i x_i' e_i^2] (X'X)^-1`.
pub fn hc1(x: &[Vec<f64>], y: &[f64]) -> Vec<Vec<f64>> {
    let (n, k) = (x.len(), x[0].len());
    let b = ols(x, y);
    let inv = invert_dense(&xtx(x));
    let mut meat = vec![vec![0.0; k]; k];
    for (row, yi) in x.iter().zip(y) {
        let e = yi - row.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>();
        for a in 0..k {
            for c in 0..k {
                meat[a][c] += row[a] * row[c] * e * e;
            }
        }
    }
    let scale = n as f64 / (n - k) as f64;
    let mut out = vec![vec![0.0; k]; k];
    for a in 0..k {
        for d in 0..k {
            let mut s = 0.0;
            for b1 in 0..k {
                for c in 0..k {
                    s += inv[a][b1] * meat[b1][c] * inv[c][d];
                }
            }
            out[a][d] = s * scale;
        }
    }
    out
}

/// RMSE with the differences materialized first.
pub fn rmse_two_pass(est: &[f64], truth: &[f64]) -> f64 {
    let diffs: Vec<f64> = est.iter().zip(truth).map(|(a, b)| a - b).collect();
    let mut ss = 0.0;
    for d in &diffs {
        ss += d * d;
    }
    (ss / diffs.len() as f64).sqrt()
}

/// Smallest order statistic whose empirical cdf reaches `q`, found by
/// scanning.
pub fn quantile_scan(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    for k in 1..=n {
        // compare k/n >= q without dividing
        if (k as f64) >= q * n as f64 - 1e-9 {
            return v[k - 1];
        }
    }
    v[n - 1]
}

/// Ranks by counting, ties broken by position.
pub fn ranks_by_counting(x: &[f64]) -> Vec<usize> {
    (0..x.len())
        .map(|j| 1 + (0..x.len()).filter(|&i| x[i] < x[j] || (x[i] == x[j] && i < j)).count())
        .collect()
}

/// Triple-goal estimates by direct enumeration over a draw matrix given as
/// rows (iterations) of site values. Returns `(quantiles, ranks, estimates)`.
pub fn gr_brute(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    let s = rows.len();
    let j = rows[0].len();
    let mut pool: Vec<f64> = rows.iter().flatten().copied().collect();
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = pool.len() as f64;
    let u: Vec<f64> = (1..=j)
        .map(|k| {
            let p = (2 * k - 1) as f64 / (2 * j) as f64;
            // smallest pooled value whose EDF reaches p
            *pool
                .iter()
                .find(|&&x| pool.iter().filter(|&&y| y <= x).count() as f64 / n >= p - 1e-12)
                .unwrap()
        })
        .collect();
    let rbar: Vec<f64> = (0..j)
        .map(|site| {
            let mut c = 0usize;
            for row in rows {
                c += (0..j).filter(|&k| row[k] <= row[site]).count();
            }
            c as f64 / s as f64
        })
        .collect();
    let ranks = ranks_by_counting(&rbar);
    let est = ranks.iter().map(|&r| u[r - 1]).collect();
    (u, ranks, est)
}

/// Average over sites of each site's marginal EDF at `t`.
pub fn edf_by_site(rows: &[Vec<f64>], t: f64) -> f64 {
    let j = rows[0].len();
    let s = rows.len() as f64;
    (0..j)
        .map(|site| rows.iter().filter(|r| r[site] <= t).count() as f64 / s)
        .sum::<f64>()
        / j as f64
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Monte Carlo standard error of the mean of a correlated sequence by
/// non-overlapping batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let len = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&x[b * len..(b + 1) * len])).collect();
    (var(&means) / batches as f64).sqrt()
}

/// Effective sample size of a chain, `n * var / (batches * se^2)`.
pub fn effective_size(x: &[f64]) -> f64 {
    let se = batch_means_se(x, 40);
    let v = var(x);
    if se == 0.0 {
        return x.len() as f64;
    }
    (v / (se * se)).min(x.len() as f64)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.partial_cmp(q).unwrap());
    y.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (mut i, mut k, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && k < y.len() {
        let t = x[i].min(y[k]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while k < y.len() && y[k] <= t {
            k += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - k as f64 / y.len() as f64).abs());
    }
    d
}

/// Asymptotic p-value of the two-sample KS statistic for sample sizes
/// `n1`, `n2` (which may be effective sizes).
pub fn ks_pvalue(d: f64, n1: f64, n2: f64) -> f64 {
    let en = (n1 * n2 / (n1 + n2)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Paired t statistic and two-sided p-value.
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let sd = var(&d).sqrt();
    if sd == 0.0 {
        return (0.0, 1.0);
    }
    let t = mean(&d) / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (t, 2.0 * (1.0 - dist.cdf(t.abs())))
}

/// `int f(alpha) Gamma(alpha; a, b) d alpha` by trapezoid over log alpha,
/// for vector-valued `f`.
pub fn gamma_average_vec(a: f64, b: f64, len: usize, f: impl Fn(f64) -> Vec<f64>) -> Vec<f64> {
    let n = 400_000;
    // the log-alpha density decays like exp(a t) on the left
    let (lo, hi) = ((-40.0f64).min(-50.0 / a), (a / b).ln() + 8.0);
    let h = (hi - lo) / n as f64;
    let mut total = vec![0.0; len];
    for i in 0..=n {
        let t = lo + i as f64 * h;
        let alpha = t.exp();
        let logf = a * b.ln() - statrs::function::gamma::ln_gamma(a) + a * t - b * alpha;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let dens = w * logf.exp();
        for (acc, v) in total.iter_mut().zip(f(alpha)) {
            *acc += dens * v;
        }
    }
    total.iter().map(|t| t * h).collect()
}

pub fn gamma_average(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    gamma_average_vec(a, b, 1, |x| vec![f(x)])[0]
}

/// Site ids `s0..s{j-1}`.
pub fn ids(j: usize) -> Vec<String> {
    (0..j).map(|i| format!("s{i}")).collect()
}
