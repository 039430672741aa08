//! Market-impact regression: per asset, ordinary least squares of the
//! intraday return variance curve on the flow variance curve,
//!
//! ```text
//! C_k = intercept + alpha^2 * F_k,        intercept = bin_length * Sigma_hat
//! ```
//!
//! with normal-error standard errors and p-values. The slope is an
//! estimate of the squared permanent impact factor.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::covariance::{estimate_covariance, flow_covariance};
use crate::error::EstimatorError;
use crate::panel::MarketPanel;

/// OLS fit of one variance-on-flow-variance regression.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    /// Slope: squared permanent impact.
    pub alpha_sq: f64,
    /// sqrt(max(alpha_sq, 0)).
    pub alpha_hat: f64,
    /// Intercept divided by the bin length.
    pub sigma_hat: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub slope_pvalue: f64,
    pub intercept_pvalue: f64,
    /// Sample correlation between the two series.
    pub corr_cf: f64,
    pub n_bins: usize,
    pub bin_length: f64,
}

impl RegressionFit {
    /// Two-sided 95% confidence interval for the slope.
    pub fn slope_ci95(&self) -> (f64, f64) {
        let df = (self.n_bins - 2) as f64;
        let t = StudentsT::new(0.0, 1.0, df)
            .expect("valid dof")
            .inverse_cdf(0.975);
        (
            self.alpha_sq - t * self.slope_se,
            self.alpha_sq + t * self.slope_se,
        )
    }
}

/// OLS of `c` on `f` with intercept.
pub fn fit_impact_regression(
    c: &[f64],
    f: &[f64],
    bin_length: f64,
) -> Result<RegressionFit, EstimatorError> {
    let m = c.len();
    if m < 3 || f.len() != m {
        return Err(EstimatorError::TooFewBins {
            needed: 3,
            got: m.min(f.len()),
        });
    }
    let n = m as f64;
    let mean_f = f.iter().sum::<f64>() / n;
    let mean_c = c.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for k in 0..m {
        let dx = f[k] - mean_f;
        let dy = c[k] - mean_c;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let f_scale = f.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if sxx <= 1e-28 * f_scale * f_scale || sxx == 0.0 {
        return Err(EstimatorError::ZeroVarianceRegressor);
    }
    let slope = sxy / sxx;
    let intercept = mean_c - slope * mean_f;
    let df = n - 2.0;
    let ssr = (syy - slope * sxy).max(0.0);
    let s2 = ssr / df;
    let slope_se = (s2 / sxx).sqrt();
    let intercept_se = (s2 * (1.0 / n + mean_f * mean_f / sxx)).sqrt();
    let t_dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let pvalue = |estimate: f64, se: f64| -> f64 {
        if se == 0.0 {
            if estimate == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            2.0 * (1.0 - t_dist.cdf((estimate / se).abs()))
        }
    };
    let corr_cf = if syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        f64::NAN
    };
    Ok(RegressionFit {
        alpha_sq: slope,
        alpha_hat: slope.max(0.0).sqrt(),
        sigma_hat: intercept / bin_length,
        intercept,
        slope_se,
        intercept_se,
        slope_pvalue: pvalue(slope, slope_se),
        intercept_pvalue: pvalue(intercept, intercept_se),
        corr_cf,
        n_bins: m,
        bin_length,
    })
}

/// Fit the impact regression of every asset of a panel (diagonal C on
/// diagonal F).
pub fn regress_panel(panel: &MarketPanel) -> Result<Vec<RegressionFit>, EstimatorError> {
    let series = estimate_covariance(panel)?;
    let flows = flow_covariance(panel)?;
    let mut fits = Vec::with_capacity(panel.dim);
    for i in 0..panel.dim {
        let c: Vec<f64> = (0..panel.n_bins).map(|b| series.c[b][(i, i)]).collect();
        let f: Vec<f64> = (0..panel.n_bins).map(|b| flows[b][(i, i)]).collect();
        fits.push(fit_impact_regression(&c, &f, series.bin_length)?);
    }
    Ok(fits)
}
