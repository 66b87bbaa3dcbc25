//! Risk-controlling prediction sets.
//!
//! Calibration selects the smallest scale factor `lambda` whose risk upper
//! confidence bound stays below the target level `alpha` along a descending
//! grid scan. For the indicator loss used here the UCB is exact, derived
//! from the binomial distribution:
//!
//! ```text
//! UCB(r_hat) = sup { R : P(Binom(n, R) <= ceil(n r_hat)) >= delta }
//! ```
//!
//! The scan accepts a grid point only while every larger grid point also
//! satisfied the bound, which is the fixed-sequence argument that makes the
//! selection valid for monotone losses without assuming continuity of the
//! UCB in `lambda`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Calibration settings: target risk `alpha`, error rate `delta` and the
/// descending scale grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcpsConfig {
    /// Target risk level in (0, 1).
    pub alpha: f64,
    /// Calibration error rate in (0, 1).
    pub delta: f64,
    /// Strictly descending positive scale factors.
    pub lambda_grid: Vec<f64>,
}

impl RcpsConfig {
    pub fn new(alpha: f64, delta: f64, lambda_grid: Vec<f64>) -> Result<Self> {
        let cfg = RcpsConfig { alpha, delta, lambda_grid };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidConfig("lambda grid is empty".into()));
        }
        for pair in self.lambda_grid.windows(2) {
            if !(pair[0] > pair[1]) {
                return Err(Error::InvalidConfig("lambda grid must be strictly descending".into()));
            }
        }
        if *self.lambda_grid.last().unwrap() <= 0.0 {
            return Err(Error::InvalidConfig("lambda grid must be positive".into()));
        }
        Ok(())
    }
}

/// Default grid: 400 log-spaced points descending over [1e-2, 1e2].
pub fn default_lambda_grid() -> Vec<f64> {
    let points = 400;
    (0..points)
        .map(|i| 10f64.powf(2.0 - 4.0 * i as f64 / (points - 1) as f64))
        .collect()
}

/// Outcome of a successful calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub lambda_star: f64,
    pub empirical_risk_at_lambda: f64,
    pub ucb_at_lambda: f64,
    pub n_calibration: usize,
}

/// `stirlerr(n) = ln(n!) - (n + 1/2) ln(n) + n - ln(2 pi)/2`, the Stirling
/// remainder. Small arguments go through the gamma function directly, where
/// its magnitude is still benign; larger ones use the asymptotic series.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n < 16.0 {
        ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
    } else {
        let nn = n * n;
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// `x ln(x / np) + np - x` evaluated without cancellation when `x` is close
/// to `np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        let mut j = 1.0;
        loop {
            ej *= v2;
            let s1 = s + ej / (2.0 * j + 1.0);
            if s1 == s {
                return s1;
            }
            s = s1;
            j += 1.0;
        }
    } else {
        x * (x / np).ln() + np - x
    }
}

/// Log of the binomial probability mass at `i`, in saddle-point form. No
/// intermediate quantity grows with `n ln n`, so the absolute error of the
/// log stays near machine precision even for large `n`.
fn ln_binom_pmf(i: usize, n: usize, p: f64) -> f64 {
    let nf = n as f64;
    if i == 0 {
        return nf * (-p).ln_1p();
    }
    if i == n {
        return nf * p.ln();
    }
    let x = i as f64;
    let y = (n - i) as f64;
    stirlerr(nf) - stirlerr(x) - stirlerr(y) - bd0(x, nf * p) - bd0(y, nf * (1.0 - p))
        + 0.5 * (nf / (2.0 * std::f64::consts::PI * x * y)).ln()
}

/// `P(Binom(n, p) <= k)` by log-space summation around the modal term: the
/// largest term is anchored in log space and the remaining terms enter as
/// linear-space ratios, which avoids both underflow and the loss of
/// absolute precision that direct factorial logs suffer at large `n`.
/// Absolute error stays within about 1e-12 for `n` up to ten thousand.
pub fn binomial_cdf(k: usize, n: usize, p: f64) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidValue(format!("k = {k} exceeds n = {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidValue(format!("probability {p} outside [0, 1]")));
    }
    if k == n || p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    let q = 1.0 - p;
    let mode = (((n + 1) as f64) * p).floor() as usize;
    let anchor = mode.min(k);
    let ln_anchor = ln_binom_pmf(anchor, n, p);

    let mut sum = 1.0;
    // Below the anchor the mass decreases as i falls, so the ratio chain
    // shrinks monotonically and may stop once negligible.
    let mut ratio = 1.0;
    let mut i = anchor;
    while i > 0 {
        ratio *= (i as f64) * q / (((n - i + 1) as f64) * p);
        sum += ratio;
        if ratio < 1e-20 * sum {
            break;
        }
        i -= 1;
    }
    // Between the anchor and k (when the mode sits below k) the mass also
    // decreases as i grows.
    let mut ratio = 1.0;
    for i in (anchor + 1)..=k {
        ratio *= ((n - i + 1) as f64) * p / ((i as f64) * q);
        sum += ratio;
        if ratio < 1e-20 * sum {
            break;
        }
    }
    Ok((ln_anchor + sum.ln()).exp().min(1.0))
}

/// Exact binomial upper confidence bound on the risk.
///
/// Monotone non-decreasing in `r_hat`, non-increasing in `delta`, and always
/// at least `r_hat`. Found by bisection to absolute tolerance 1e-9.
pub fn binomial_ucb(r_hat: f64, n_cal: usize, delta: f64) -> Result<f64> {
    if n_cal == 0 {
        return Err(Error::InvalidConfig("UCB requires at least one calibration point".into()));
    }
    if !(0.0..=1.0).contains(&r_hat) {
        return Err(Error::InvalidValue(format!("empirical risk {r_hat} outside [0, 1]")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")));
    }
    // Ceiling with a tiny slack so float representation error on an exact
    // integer product cannot bump the count.
    let k = ((n_cal as f64 * r_hat) - 1e-9).ceil().max(0.0) as usize;
    if k >= n_cal {
        return Ok(1.0);
    }
    // The CDF at fixed k decreases continuously from 1 at R = 0 to 0 at
    // R = 1, so the supremum is the unique root of CDF(R) = delta.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if binomial_cdf(k, n_cal, mid)? >= delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fraction of calibration points whose score estimate falls outside the
/// scaled prediction set: `mean of 1{ score_j >= lambda * q_j }`.
pub fn empirical_risk(score_estimates: &[f64], quantiles: &[f64], lambda: f64) -> Result<f64> {
    if score_estimates.len() != quantiles.len() {
        return Err(Error::LengthMismatch {
            left: score_estimates.len(),
            right: quantiles.len(),
        });
    }
    if score_estimates.is_empty() {
        return Err(Error::InvalidConfig("empirical risk of an empty calibration set".into()));
    }
    for &q in quantiles {
        if !(q > 0.0) {
            return Err(Error::NonPositiveQuantile(q));
        }
    }
    let losses = score_estimates
        .iter()
        .zip(quantiles)
        .filter(|(s, q)| **s >= lambda * **q)
        .count();
    Ok(losses as f64 / score_estimates.len() as f64)
}

/// Fraction of test points whose true score falls strictly inside the
/// scaled prediction set. Complementary to [`empirical_risk`] on identical
/// inputs; a score exactly on the boundary counts as not covered.
pub fn evaluate_coverage(true_scores: &[f64], quantiles: &[f64], lambda: f64) -> Result<f64> {
    if true_scores.len() != quantiles.len() {
        return Err(Error::LengthMismatch { left: true_scores.len(), right: quantiles.len() });
    }
    if true_scores.is_empty() {
        return Err(Error::InvalidConfig("coverage of an empty test set".into()));
    }
    let covered = true_scores
        .iter()
        .zip(quantiles)
        .filter(|(s, q)| **s < lambda * **q)
        .count();
    Ok(covered as f64 / true_scores.len() as f64)
}

/// Descending fixed-sequence scan for the smallest valid scale factor.
///
/// Returns the smallest grid `lambda` such that every grid point at or above
/// it has `UCB(empirical risk) <= alpha`. Fails with
/// [`Error::CalibrationInfeasible`] when even the largest grid point
/// violates the bound; the caller must widen the grid or accept the level as
/// unattainable at this sample size.
pub fn calibrate_lambda(
    score_estimates: &[f64],
    quantiles: &[f64],
    cfg: &RcpsConfig,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    let n = score_estimates.len();
    // UCB depends on the data only through the loss count; memoize per count.
    let mut ucb_by_count: Vec<Option<f64>> = vec![None; n + 1];
    let mut accepted: Option<CalibrationResult> = None;
    for &lambda in &cfg.lambda_grid {
        let risk = empirical_risk(score_estimates, quantiles, lambda)?;
        let count = (risk * n as f64).round() as usize;
        let ucb = match ucb_by_count[count] {
            Some(u) => u,
            None => {
                let u = binomial_ucb(risk, n, cfg.delta)?;
                ucb_by_count[count] = Some(u);
                u
            }
        };
        if ucb > cfg.alpha {
            break;
        }
        accepted = Some(CalibrationResult {
            lambda_star: lambda,
            empirical_risk_at_lambda: risk,
            ucb_at_lambda: ucb,
            n_calibration: n,
        });
    }
    accepted.ok_or_else(|| {
        let floor = binomial_ucb(0.0, n.max(1), cfg.delta).unwrap_or(1.0);
        Error::CalibrationInfeasible(format!(
            "no grid point satisfies UCB <= alpha = {}; UCB floor at zero risk is {:.6} for {} points",
            cfg.alpha, floor, n
        ))
    })
}
