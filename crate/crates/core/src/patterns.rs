//! Trade imbalances, covariance conditioned on them, and median intraday
//! patterns.
//!
//! The imbalance of asset `n` in bin `k` of day `l` is the net flow
//! normalized by the asset's average daily absolute flow,
//! `w_kl = nu_kl / mean_l( sum_k |nu_kl| )`. Conditioning keeps only days
//! whose imbalances (for the pair at hand) are at most `lambda` in absolute
//! value; `lambda >= 1` is the unconditioned reference case and reproduces
//! the plain estimator exactly. Cells with fewer than two selected days are
//! reported as NaN with a zero-day count and excluded from medians.

use nalgebra::DMatrix;
use ndarray::Array3;
use rayon::prelude::*;

use crate::covariance::cov_kernel;
use crate::error::EstimatorError;
use crate::panel::MarketPanel;

/// Per-(day, bin, asset) trade imbalances.
#[derive(Debug, Clone)]
pub struct Imbalances {
    /// w[[day, bin, asset]]; NaN for excluded assets.
    pub w: Array3<f64>,
    /// Average daily absolute flow per asset (the normalizer).
    pub denominators: Vec<f64>,
    /// Assets with zero denominator (never trade), excluded from use.
    pub excluded: Vec<usize>,
}

/// Compute trade imbalances from the panel's net flows.
pub fn trade_imbalances(panel: &MarketPanel) -> Result<Imbalances, EstimatorError> {
    let flows = panel
        .net_flows
        .as_ref()
        .ok_or(EstimatorError::MissingFlows)?;
    let d = panel.dim;
    let mut denominators = vec![0.0f64; d];
    for i in 0..d {
        let mut acc = 0.0;
        for l in 0..panel.n_days {
            for b in 0..panel.n_bins {
                acc += flows[[l, b, i]].abs();
            }
        }
        denominators[i] = acc / panel.n_days as f64;
    }
    let excluded: Vec<usize> = (0..d).filter(|&i| denominators[i] == 0.0).collect();
    let mut w = Array3::<f64>::zeros((panel.n_days, panel.n_bins, d));
    for i in 0..d {
        if denominators[i] == 0.0 {
            for l in 0..panel.n_days {
                for b in 0..panel.n_bins {
                    w[[l, b, i]] = f64::NAN;
                }
            }
            continue;
        }
        for l in 0..panel.n_days {
            for b in 0..panel.n_bins {
                w[[l, b, i]] = flows[[l, b, i]] / denominators[i];
            }
        }
    }
    Ok(Imbalances {
        w,
        denominators,
        excluded,
    })
}

/// Quantile of |w| pooled over the given bins and all non-excluded assets
/// (linear interpolation between order statistics). `None` when empty.
pub fn imbalance_quantile(
    imb: &Imbalances,
    bins: std::ops::Range<usize>,
    q: f64,
) -> Option<f64> {
    let (n_days, n_bins, d) = imb.w.dim();
    let mut values: Vec<f64> = Vec::new();
    for l in 0..n_days {
        for b in bins.clone() {
            if b >= n_bins {
                continue;
            }
            for i in 0..d {
                let x = imb.w[[l, b, i]];
                if x.is_finite() {
                    values.push(x.abs());
                }
            }
        }
    }
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(values[lo] * (1.0 - frac) + values[hi] * frac)
}

/// Covariance estimator restricted to days with small imbalances.
#[derive(Debug, Clone)]
pub struct ConditionedCovariance {
    pub lambda: f64,
    /// Conditioned covariance per bin; NaN where fewer than 2 days qualify.
    pub c: Vec<DMatrix<f64>>,
    /// Number of selected days per (bin, i, j).
    pub counts: Vec<DMatrix<f64>>,
}

/// Conditioned intraday covariance at threshold `lambda`.
///
/// Day selection per pair (i, j) and bin k keeps days with
/// `|w_k^i| <= lambda` and `|w_k^j| <= lambda`; `lambda >= 1` selects every
/// day (the reference case; empirical imbalances may exceed 1, the paper's
/// reference level is defined as "no conditioning").
pub fn conditioned_covariance(
    panel: &MarketPanel,
    lambda: f64,
) -> Result<ConditionedCovariance, EstimatorError> {
    let imb = trade_imbalances(panel)?;
    conditioned_covariance_with(panel, &imb, lambda)
}

/// Same as [`conditioned_covariance`] but reusing precomputed imbalances.
pub fn conditioned_covariance_with(
    panel: &MarketPanel,
    imb: &Imbalances,
    lambda: f64,
) -> Result<ConditionedCovariance, EstimatorError> {
    if panel.n_days < 2 {
        return Err(EstimatorError::TooFewDays {
            needed: 2,
            got: panel.n_days,
        });
    }
    panel.uniform_bin_length()?;
    let d = panel.dim;
    let unconditioned = lambda >= 1.0;

    let per_bin: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..panel.n_bins)
        .into_par_iter()
        .map(|b| {
            let mut c = DMatrix::<f64>::from_element(d, d, f64::NAN);
            let mut counts = DMatrix::<f64>::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let excluded =
                        imb.excluded.contains(&i) || imb.excluded.contains(&j);
                    if excluded && !unconditioned {
                        continue;
                    }
                    let select = |l: usize| -> bool {
                        unconditioned
                            || (imb.w[[l, b, i]].abs() <= lambda
                                && imb.w[[l, b, j]].abs() <= lambda)
                    };
                    match cov_kernel(
                        panel.n_days,
                        select,
                        |l| panel.increment(l, b, i),
                        |l| panel.increment(l, b, j),
                    ) {
                        Some((count, cij, _)) => {
                            c[(i, j)] = cij;
                            c[(j, i)] = cij;
                            counts[(i, j)] = count as f64;
                            counts[(j, i)] = count as f64;
                        }
                        None => {
                            let count = (0..panel.n_days).filter(|&l| select(l)).count();
                            counts[(i, j)] = count as f64;
                            counts[(j, i)] = count as f64;
                        }
                    }
                }
            }
            (c, counts)
        })
        .collect();

    let mut c = Vec::with_capacity(panel.n_bins);
    let mut counts = Vec::with_capacity(panel.n_bins);
    for (cb, nb) in per_bin {
        c.push(cb);
        counts.push(nb);
    }
    Ok(ConditionedCovariance { lambda, c, counts })
}

/// Median intraday pattern at one conditioning level.
#[derive(Debug, Clone)]
pub struct ConditionedPattern {
    pub lambda: f64,
    /// Median over assets of the normalized diagonal, per bin.
    pub diag: Vec<Option<f64>>,
    /// Median over pairs i < j of the normalized off-diagonal, per bin.
    pub off: Vec<Option<f64>>,
    /// Median selected-day counts, per bin.
    pub counts_diag: Vec<Option<f64>>,
    pub counts_off: Vec<Option<f64>>,
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median diagonal and off-diagonal patterns for a list of thresholds.
///
/// Each series is normalized by the across-bin mean of its unconditioned
/// (`lambda = 1`) curve; pairs whose normalizer vanishes are skipped.
pub fn median_patterns(
    panel: &MarketPanel,
    lambdas: &[f64],
) -> Result<Vec<ConditionedPattern>, EstimatorError> {
    let imb = trade_imbalances(panel)?;
    let reference = conditioned_covariance_with(panel, &imb, 1.0)?;
    let d = panel.dim;
    let n_bins = panel.n_bins;

    // Across-bin mean of the reference curve per pair.
    let mut norm = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for b in 0..n_bins {
                acc += reference.c[b][(i, j)];
            }
            norm[(i, j)] = acc / n_bins as f64;
        }
    }

    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cond = if lambda >= 1.0 {
            reference.clone()
        } else {
            conditioned_covariance_with(panel, &imb, lambda)?
        };
        let mut diag = Vec::with_capacity(n_bins);
        let mut off = Vec::with_capacity(n_bins);
        let mut counts_diag = Vec::with_capacity(n_bins);
        let mut counts_off = Vec::with_capacity(n_bins);
        for b in 0..n_bins {
            let mut diag_vals = Vec::new();
            let mut diag_counts = Vec::new();
            for i in 0..d {
                if imb.excluded.contains(&i) {
                    continue;
                }
                diag_counts.push(cond.counts[b][(i, i)]);
                let value = cond.c[b][(i, i)];
                let n = norm[(i, i)];
                if value.is_finite() && n.is_finite() && n != 0.0 {
                    diag_vals.push(value / n);
                }
            }
            let mut off_vals = Vec::new();
            let mut off_counts = Vec::new();
            for i in 0..d {
                for j in (i + 1)..d {
                    if imb.excluded.contains(&i) || imb.excluded.contains(&j) {
                        continue;
                    }
                    off_counts.push(cond.counts[b][(i, j)]);
                    let value = cond.c[b][(i, j)];
                    let n = norm[(i, j)];
                    if value.is_finite() && n.is_finite() && n != 0.0 {
                        off_vals.push(value / n);
                    }
                }
            }
            diag.push(median(&mut diag_vals));
            off.push(median(&mut off_vals));
            counts_diag.push(median(&mut diag_counts));
            counts_off.push(median(&mut off_counts));
        }
        out.push(ConditionedPattern {
            lambda,
            diag,
            off,
            counts_diag,
            counts_off,
        });
    }
    Ok(out)
}
