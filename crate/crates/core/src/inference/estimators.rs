use serde::{Deserialize, Serialize};

use super::profile::ParabolaFit;
use crate::error::{Error, Result};
use crate::stats::{mean, sample_variance};

/// Target coverage of a 1σ interval.
pub const COVERAGE_TARGET: f64 = 0.683;

/// `I_MLE = 1 / Var(θ̂)` with the unbiased sample variance.
pub fn mle_fisher(theta_hats: &[f64]) -> Result<f64> {
    if theta_hats.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: theta_hats.len(),
        });
    }
    let v = sample_variance(theta_hats);
    if v == 0.0 {
        return Err(Error::InfiniteInformation);
    }
    Ok(1.0 / v)
}

/// Approximate standard error of [`mle_fisher`] for normal θ̂:
/// `I·√(2/(n−1))`.
pub fn mle_fisher_se(i_mle: f64, n: usize) -> f64 {
    i_mle * (2.0 / (n.max(2) - 1) as f64).sqrt()
}

/// `c_cicc = I_MLE / I_curv`.
pub fn calibration_constant(i_mle: f64, i_curv_mean: f64) -> Result<f64> {
    if !(i_mle > 0.0 && i_mle.is_finite()) || !(i_curv_mean > 0.0 && i_curv_mean.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "calibration needs positive information, got I_MLE={i_mle}, I_curv={i_curv_mean}"
        )));
    }
    Ok(i_mle / i_curv_mean)
}

/// Subtract the estimated bias `b̂ = mean(θ̂) − θ_true`. Returns the corrected
/// values and `b̂`.
pub fn bias_correct(theta_hats: &[f64], theta_true: f64) -> Result<(Vec<f64>, f64)> {
    if theta_hats.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: theta_hats.len(),
        });
    }
    let b = mean(theta_hats) - theta_true;
    if b == 0.0 {
        return Ok((theta_hats.to_vec(), 0.0));
    }
    Ok((theta_hats.iter().map(|t| t - b).collect(), b))
}

/// Mean squared deviation of bias-corrected estimates about θ_true.
///
/// Because the corrected values average to θ_true, this equals the unbiased
/// raw variance times `1 − 1/N`.
pub fn corrected_variance(corrected: &[f64], theta_true: f64) -> f64 {
    corrected
        .iter()
        .map(|t| (t - theta_true) * (t - theta_true))
        .sum::<f64>()
        / corrected.len() as f64
}

/// `θ̂ ± 1/√(c_cicc · I_curv)`.
pub fn confidence_interval(fit: &ParabolaFit, c_cicc: f64) -> Result<(f64, f64)> {
    if !(c_cicc > 0.0 && c_cicc.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "c_cicc must be positive, got {c_cicc}"
        )));
    }
    if !(fit.i_curv > 0.0) {
        return Err(Error::NonConvexFit(fit.i_curv));
    }
    let half = 1.0 / (c_cicc * fit.i_curv).sqrt();
    Ok((fit.theta_hat - half, fit.theta_hat + half))
}

/// Aggregates from one batch of pseudo-experiments at known θ_true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub theta_true: f64,
    pub i_mle: f64,
    pub i_curv_mean: f64,
    pub c_cicc: f64,
    pub bias_hat: f64,
    pub n_pseudo: usize,
    /// Fits dropped because the vertex left the window or grid.
    pub n_excluded: usize,
}

impl CalibrationRecord {
    /// Calibrate from fits at `theta_true`, ignoring flagged fits.
    pub fn from_fits(fits: &[ParabolaFit], theta_true: f64) -> Result<Self> {
        let valid: Vec<&ParabolaFit> = fits.iter().filter(|f| f.is_valid()).collect();
        let hats: Vec<f64> = valid.iter().map(|f| f.theta_hat).collect();
        let curvs: Vec<f64> = valid.iter().map(|f| f.i_curv).collect();
        let i_mle = mle_fisher(&hats)?;
        let i_curv_mean = mean(&curvs);
        let (_, bias_hat) = bias_correct(&hats, theta_true)?;
        Ok(Self {
            theta_true,
            i_mle,
            i_curv_mean,
            c_cicc: calibration_constant(i_mle, i_curv_mean)?,
            bias_hat,
            n_pseudo: valid.len(),
            n_excluded: fits.len() - valid.len(),
        })
    }

    /// Calibrated interval: centered on the bias-corrected θ̂, with the
    /// curvature rescaled by `c_cicc`.
    pub fn interval(&self, fit: &ParabolaFit) -> Result<(f64, f64)> {
        let (lo, hi) = confidence_interval(fit, self.c_cicc)?;
        Ok((lo - self.bias_hat, hi - self.bias_hat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub intervals: Vec<(f64, f64)>,
    pub hits: Vec<bool>,
    pub coverage: f64,
    pub target: f64,
}

/// Fraction of intervals containing θ_true, endpoints included.
pub fn coverage(intervals: &[(f64, f64)], theta_true: f64) -> Result<CoverageReport> {
    if intervals.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let hits: Vec<bool> = intervals
        .iter()
        .map(|&(lo, hi)| lo <= theta_true && theta_true <= hi)
        .collect();
    let n_hit = hits.iter().filter(|h| **h).count();
    Ok(CoverageReport {
        intervals: intervals.to_vec(),
        coverage: n_hit as f64 / hits.len() as f64,
        hits,
        target: COVERAGE_TARGET,
    })
}

/// Event-level and bag-level signal-to-noise `(|μ|/σ, √n·|μ|/σ)`.
pub fn snr(mu_eta: f64, sigma_eta: f64, n: usize) -> Result<(f64, f64)> {
    if !(sigma_eta > 0.0) {
        return Err(Error::invalid_param(format!(
            "σ must be positive, got {sigma_eta}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid_param("bag size must be positive"));
    }
    let e = mu_eta.abs() / sigma_eta;
    Ok((e, (n as f64).sqrt() * e))
}

/// Information delivered by a noisy LLR estimator:
/// `I_true / (1 + σ²_ε / (I_B·Δθ²))`.
pub fn effective_fisher(
    i_true_dataset: f64,
    i_bag: f64,
    sigma2_eps: f64,
    delta_theta: f64,
) -> Result<f64> {
    if !(i_bag > 0.0) || delta_theta == 0.0 || !delta_theta.is_finite() || !(sigma2_eps >= 0.0) {
        return Err(Error::invalid_param(format!(
            "need I_B > 0, Δθ ≠ 0, σ² ≥ 0 (got {i_bag}, {delta_theta}, {sigma2_eps})"
        )));
    }
    Ok(i_true_dataset / (1.0 + sigma2_eps / (i_bag * delta_theta * delta_theta)))
}

/// Per-point error variance implied by an effective information value.
pub fn implied_error_variance(
    i_true_dataset: f64,
    i_eff: f64,
    i_bag: f64,
    delta_theta: f64,
) -> Result<f64> {
    if !(i_eff > 0.0) || !(i_true_dataset > 0.0) {
        return Err(Error::InvalidValue(format!(
            "information must be positive, got {i_eff}"
        )));
    }
    Ok((i_true_dataset / i_eff - 1.0) * i_bag * delta_theta * delta_theta)
}

/// Least-squares `C` in `σ²_ε(N_B) = C·√N_B`.
///
/// Each `(N_B, I_eff)` point is inverted to a σ² with `I_B = N_B·i_event`,
/// then σ² is regressed on √N_B through the origin:
/// `C = Σ σ²_k √N_k / Σ N_k`.
pub fn fit_error_variance_model(
    points: &[(usize, f64)],
    i_true_dataset: f64,
    i_event: f64,
    delta_theta: f64,
) -> Result<f64> {
    let mut distinct: Vec<usize> = points.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateDesign(format!(
            "need at least two distinct bag sizes, got {distinct:?}"
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(n_b, i_eff) in points {
        let s2 = implied_error_variance(i_true_dataset, i_eff, n_b as f64 * i_event, delta_theta)?;
        num += s2 * (n_b as f64).sqrt();
        den += n_b as f64;
    }
    Ok(num / den)
}
