//! Realized intraday covariance and flow-covariance estimators.
//!
//! Per bin `k`, the covariance of price increments across days is
//!
//! ```text
//! C_k[i][j] = 1/(N-1) sum_l (dS_ikl - mean_i)(dS_jkl - mean_j)
//! ```
//!
//! with the across-day mean removed, and the correlation is the usual
//! normalization. Standard errors use the across-day sample variance of
//! the per-day product terms, the right band for comparisons against
//! Monte Carlo averages. Flow covariance applies the same estimator to
//! the per-bin net traded volumes.
//!
//! Undefined correlations (a zero variance on the diagonal) are reported
//! as NaN, never imputed.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::EstimatorError;
use crate::panel::MarketPanel;

/// Per-bin covariance and correlation series with standard errors.
#[derive(Debug, Clone)]
pub struct CovarianceSeries {
    /// Common bin length in days.
    pub bin_length: f64,
    /// Covariance per bin ($^2 / share^2).
    pub c: Vec<DMatrix<f64>>,
    /// Correlation per bin; NaN where a diagonal term vanishes.
    pub r: Vec<DMatrix<f64>>,
    /// Standard error of each covariance entry.
    pub se: Vec<DMatrix<f64>>,
    /// Days entering each bin's estimate.
    pub n_days_used: Vec<usize>,
}

/// Sample covariance of one (bin, i, j) cell over a day subset, together
/// with the per-day-product standard error. `None` when fewer than two
/// days are selected.
///
/// This kernel is shared with the conditioned estimator so that "no
/// conditioning" reproduces the plain estimator bit for bit.
pub(crate) fn cov_kernel<F>(
    n_days: usize,
    selector: F,
    increment_i: impl Fn(usize) -> f64,
    increment_j: impl Fn(usize) -> f64,
) -> Option<(usize, f64, f64)>
where
    F: Fn(usize) -> bool,
{
    let mut count = 0usize;
    let mut mean_i = 0.0f64;
    let mut mean_j = 0.0f64;
    for l in 0..n_days {
        if selector(l) {
            count += 1;
            mean_i += increment_i(l);
            mean_j += increment_j(l);
        }
    }
    if count < 2 {
        return None;
    }
    mean_i /= count as f64;
    mean_j /= count as f64;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for l in 0..n_days {
        if selector(l) {
            let p = (increment_i(l) - mean_i) * (increment_j(l) - mean_j);
            sum += p;
            sum_sq += p * p;
        }
    }
    let n = count as f64;
    let c = sum / (n - 1.0);
    let var_p = (sum_sq - sum * sum / n).max(0.0) / (n - 1.0);
    let se = (var_p / n).sqrt();
    Some((count, c, se))
}

/// Estimate the per-bin covariance and correlation series of a panel.
pub fn estimate_covariance(panel: &MarketPanel) -> Result<CovarianceSeries, EstimatorError> {
    if panel.n_days < 2 {
        return Err(EstimatorError::TooFewDays {
            needed: 2,
            got: panel.n_days,
        });
    }
    let bin_length = panel.uniform_bin_length()?;
    let d = panel.dim;

    let per_bin: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = (0..panel.n_bins)
        .into_par_iter()
        .map(|b| {
            let mut c = DMatrix::<f64>::zeros(d, d);
            let mut se = DMatrix::<f64>::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let (_, cij, seij) = cov_kernel(
                        panel.n_days,
                        |_| true,
                        |l| panel.increment(l, b, i),
                        |l| panel.increment(l, b, j),
                    )
                    .expect("n_days >= 2");
                    c[(i, j)] = cij;
                    c[(j, i)] = cij;
                    se[(i, j)] = seij;
                    se[(j, i)] = seij;
                }
            }
            let r = correlation_from(&c);
            (c, r, se)
        })
        .collect();

    let mut c = Vec::with_capacity(panel.n_bins);
    let mut r = Vec::with_capacity(panel.n_bins);
    let mut se = Vec::with_capacity(panel.n_bins);
    for (cb, rb, seb) in per_bin {
        c.push(cb);
        r.push(rb);
        se.push(seb);
    }
    Ok(CovarianceSeries {
        bin_length,
        c,
        r,
        se,
        n_days_used: vec![panel.n_days; panel.n_bins],
    })
}

/// Correlation matrix of a covariance matrix; NaN entries where a diagonal
/// term is zero, exact ones on the defined diagonal.
pub fn correlation_from(c: &DMatrix<f64>) -> DMatrix<f64> {
    let d = c.nrows();
    let mut r = DMatrix::<f64>::from_element(d, d, f64::NAN);
    for i in 0..d {
        if c[(i, i)] > 0.0 {
            r[(i, i)] = 1.0;
        }
        for j in (i + 1)..d {
            let denom = c[(i, i)] * c[(j, j)];
            if denom > 0.0 {
                let val = c[(i, j)] / denom.sqrt();
                r[(i, j)] = val;
                r[(j, i)] = val;
            }
        }
    }
    r
}

/// Across-day covariance of per-bin net flows (full cross matrix).
pub fn flow_covariance(panel: &MarketPanel) -> Result<Vec<DMatrix<f64>>, EstimatorError> {
    let flows = panel
        .net_flows
        .as_ref()
        .ok_or(EstimatorError::MissingFlows)?;
    if panel.n_days < 2 {
        return Err(EstimatorError::TooFewDays {
            needed: 2,
            got: panel.n_days,
        });
    }
    let d = panel.dim;
    let out: Vec<DMatrix<f64>> = (0..panel.n_bins)
        .into_par_iter()
        .map(|b| {
            let mut f = DMatrix::<f64>::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let (_, fij, _) = cov_kernel(
                        panel.n_days,
                        |_| true,
                        |l| flows[[l, b, i]],
                        |l| flows[[l, b, j]],
                    )
                    .expect("n_days >= 2");
                    f[(i, j)] = fij;
                    f[(j, i)] = fij;
                }
            }
            f
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn panel_from_prices(prices: Array3<f64>, bin_times: Vec<f64>) -> MarketPanel {
        let (n_days, nb1, dim) = prices.dim();
        MarketPanel {
            n_days,
            n_bins: nb1 - 1,
            dim,
            bin_times,
            prices,
            net_flows: None,
            asset_names: (0..dim).map(|i| format!("A{i}")).collect(),
        }
    }

    #[test]
    fn constant_prices_give_zero_covariance_and_undefined_correlation() {
        let prices = Array3::from_elem((3, 4, 2), 100.0);
        let panel = panel_from_prices(prices, vec![0.0, 0.25, 0.5, 0.75]);
        let series = estimate_covariance(&panel).unwrap();
        for b in 0..3 {
            assert_eq!(series.c[b], DMatrix::zeros(2, 2));
            assert!(series.r[b].iter().all(|x| x.is_nan()));
        }
    }

    #[test]
    fn two_day_variance_identity() {
        // Increments a and b in one bin: C = (a - b)^2 / 2.
        let mut prices = Array3::zeros((2, 2, 1));
        prices[[0, 0, 0]] = 100.0;
        prices[[0, 1, 0]] = 100.0 + 3.0;
        prices[[1, 0, 0]] = 100.0;
        prices[[1, 1, 0]] = 100.0 - 1.0;
        let panel = panel_from_prices(prices, vec![0.0, 1.0]);
        let series = estimate_covariance(&panel).unwrap();
        // (a-b)^2/2 with a=3, b=-1: 16/2 = 8.
        assert_eq!(series.c[0][(0, 0)], (3.0f64 - (-1.0)).powi(2) / 2.0);
        assert_eq!(series.c[0][(0, 0)], 8.0);
    }

    #[test]
    fn single_day_panel_is_rejected() {
        let prices = Array3::zeros((1, 3, 1));
        let panel = panel_from_prices(prices, vec![0.0, 0.5, 1.0]);
        assert!(matches!(
            estimate_covariance(&panel),
            Err(EstimatorError::TooFewDays { .. })
        ));
    }

    #[test]
    fn non_uniform_bins_are_rejected() {
        let prices = Array3::zeros((2, 3, 1));
        let panel = panel_from_prices(prices, vec![0.0, 0.1, 1.0]);
        assert!(matches!(
            estimate_covariance(&panel),
            Err(EstimatorError::NonUniformBins { .. })
        ));
    }

    #[test]
    fn flow_covariance_matches_hand_computation() {
        let mut prices = Array3::zeros((2, 2, 1));
        prices[[0, 1, 0]] = 1.0;
        let mut flows = Array3::zeros((2, 1, 1));
        flows[[0, 0, 0]] = 5.0;
        flows[[1, 0, 0]] = -3.0;
        let mut panel = panel_from_prices(prices, vec![0.0, 1.0]);
        panel.net_flows = Some(flows);
        let f = flow_covariance(&panel).unwrap();
        // (a-b)^2/2 = 64/2 = 32.
        assert_eq!(f[0][(0, 0)], 32.0);
    }

    #[test]
    fn missing_flows_are_reported() {
        let prices = Array3::zeros((2, 2, 1));
        let panel = panel_from_prices(prices, vec![0.0, 1.0]);
        assert!(matches!(
            flow_covariance(&panel),
            Err(EstimatorError::MissingFlows)
        ));
    }

    #[test]
    fn pure_noise_panel_matches_the_law_within_four_se() {
        // alpha = 0 simulation: C_k must sit within 4 SE of bin_length * Sigma.
        use crate::params::MarketParams;
        use crate::sim::{simulate_panel, InventoryLaw, SimConfig};
        use nalgebra::DVector;
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let params = MarketParams::new(
            DVector::from_row_slice(&[0.3, 1.0]),
            corr,
            DVector::from_row_slice(&[2e6, 5e6]),
            DVector::from_row_slice(&[200.0, 200.0]),
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[2.5, 2.5]),
            5e-5,
            1.0,
        )
        .unwrap();
        let cfg = SimConfig {
            law: InventoryLaw::centered(1e8 * DMatrix::identity(2, 2)).unwrap(),
            params,
            seed: 31,
            n_days: 10_000,
            n_bins: 10,
            solver_steps: 100,
            initial_price: 100.0,
            flow_noise_std: 0.0,
        };
        let panel = simulate_panel(&cfg).unwrap();
        let series = estimate_covariance(&panel).unwrap();
        let dt = series.bin_length;
        for b in 0..panel.n_bins {
            for i in 0..2 {
                for j in 0..2 {
                    let gap = (series.c[b][(i, j)] - dt * cfg.params.sigma_cov[(i, j)]).abs();
                    assert!(
                        gap <= 4.0 * series.se[b][(i, j)],
                        "bin {b} ({i},{j}): gap {gap:.3e} vs se {:.3e}",
                        series.se[b][(i, j)]
                    );
                }
            }
        }
    }
}
