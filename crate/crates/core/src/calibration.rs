//! Toy calibration of the trading game to observed covariance curves.
//!
//! The pipeline fixes as much as possible from direct estimates and fits
//! the rest by curve matching:
//!
//! 1. the correlation of initial inventories is proxied by the across-day
//!    correlation of total daily net flows;
//! 2. the fundamental level is pinned to a fraction (default 0.2) of the
//!    across-bin mean of each observed curve, and the simulated curves may
//!    be shifted up by another fraction (default 0.3, absorbing variance
//!    the model does not explain; zero is appropriate for model-generated
//!    data);
//! 3. with the terminal penalty fixed (default A = 10) and the impact
//!    factors taken from the regression, the remaining 2d+1 parameters
//!    (k_i = V_i / eta_i, gamma, Gamma_ii) minimize the L2 distance
//!    between predicted and observed curves, by bounded simplex search
//!    with random restarts.
//!
//! Only the ratio V/eta enters the predictor, so candidates are realized
//! as V_i = k_i, eta_i = 1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::covariance::cov_kernel;
use crate::error::{CalibrationError, EstimatorError, ParamError};
use crate::linalg::cholesky_checked;
use crate::optim::{nelder_mead, SimplexOptions, SimplexResult};
use crate::panel::MarketPanel;
use crate::params::{MarketParams, TimeGrid};
use crate::prediction::theoretical_excess;
use crate::sim::InventoryLaw;

/// Across-day correlation of total daily net flows, the proxy for the
/// correlation of initial inventories.
#[derive(Debug, Clone)]
pub struct ProxyCorrelation {
    /// NaN rows/columns for excluded assets.
    pub corr: DMatrix<f64>,
    /// Assets with zero flow variance.
    pub excluded: Vec<usize>,
}

pub fn e0_correlation_proxy(panel: &MarketPanel) -> Result<ProxyCorrelation, EstimatorError> {
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
    // Per-day totals.
    let total = |l: usize, i: usize| -> f64 { (0..panel.n_bins).map(|b| flows[[l, b, i]]).sum() };
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let (_, c, _) = cov_kernel(panel.n_days, |_| true, |l| total(l, i), |l| total(l, j))
                .expect("n_days >= 2");
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let excluded: Vec<usize> = (0..d).filter(|&i| cov[(i, i)] <= 0.0).collect();
    let corr = crate::covariance::correlation_from(&cov);
    Ok(ProxyCorrelation { corr, excluded })
}

/// Fundamental level and shift extracted from one observed curve.
#[derive(Debug, Clone, Copy)]
pub struct FundamentalLevels {
    /// bin_length * Sigma_hat for this pair.
    pub dt_sigma: f64,
    /// Upward shift applied to the simulated curve.
    pub shift: f64,
}

/// Step (S2): both levels are fractions of the across-bin mean of the
/// unconditioned curve.
pub fn fundamental_from_patterns(
    curve: &[f64],
    fundamental_fraction: f64,
    shift_fraction: f64,
) -> FundamentalLevels {
    let mean = if curve.is_empty() {
        0.0
    } else {
        curve.iter().sum::<f64>() / curve.len() as f64
    };
    FundamentalLevels {
        dt_sigma: fundamental_fraction * mean,
        shift: shift_fraction * mean,
    }
}

/// Box bounds of the free parameters.
#[derive(Debug, Clone, Copy)]
pub struct SearchBounds {
    pub k: (f64, f64),
    pub gamma: (f64, f64),
    pub gamma_cov: (f64, f64),
}

impl Default for SearchBounds {
    fn default() -> Self {
        // Two orders of magnitude around reported calibration magnitudes.
        Self {
            k: (1e5, 1e10),
            gamma: (1e-6, 1.0),
            gamma_cov: (0.0, 1e12),
        }
    }
}

/// Everything the fit needs.
#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    /// Fixed terminal penalty A_i = A.
    pub a_term: f64,
    pub fundamental_fraction: f64,
    pub shift_fraction: f64,
    pub bounds: SearchBounds,
    /// Total random restarts (the first starts from the box center).
    pub restarts: usize,
    pub max_evals_per_restart: usize,
    pub seed: u64,
    pub solver_steps: usize,
    pub horizon: f64,
    pub bin_length: f64,
    /// Observed unconditioned covariance curves, one matrix per bin.
    pub observed: Vec<DMatrix<f64>>,
    /// Permanent impact factors from the regression.
    pub alpha_hat: Vec<f64>,
    /// Inventory correlation proxy from step (S1).
    pub e0_corr: DMatrix<f64>,
}

impl CalibrationConfig {
    fn validate(&self) -> Result<(), CalibrationError> {
        if self.observed.is_empty() {
            return Err(CalibrationError::EmptyCurves);
        }
        if !(self.fundamental_fraction > 0.0 && self.fundamental_fraction < 1.0) {
            return Err(CalibrationError::BadFraction {
                what: "fundamental_fraction",
                value: self.fundamental_fraction,
            });
        }
        // A zero shift is legitimate for model-generated observations.
        if !(self.shift_fraction >= 0.0 && self.shift_fraction < 1.0) {
            return Err(CalibrationError::BadFraction {
                what: "shift_fraction",
                value: self.shift_fraction,
            });
        }
        for (what, (lo, hi)) in [
            ("k", self.bounds.k),
            ("gamma", self.bounds.gamma),
            ("gamma_cov", self.bounds.gamma_cov),
        ] {
            if !(lo < hi) || lo < 0.0 {
                return Err(CalibrationError::InfeasibleBounds { what, lo, hi });
            }
        }
        Ok(())
    }
}

/// The assembled least-squares problem; exposes the objective so tests can
/// probe it at arbitrary points.
pub struct CalibrationProblem {
    pub dim: usize,
    pub grid: TimeGrid,
    pub n_bins: usize,
    /// (S2) outputs.
    pub sigma_hat: DMatrix<f64>,
    pub shifts: DMatrix<f64>,
    sigma_vec: DVector<f64>,
    corr_hat: DMatrix<f64>,
    config: CalibrationConfig,
}

impl CalibrationProblem {
    pub fn new(config: CalibrationConfig) -> Result<Self, CalibrationError> {
        config.validate()?;
        let d = config.alpha_hat.len();
        let n_bins = config.observed.len();
        for m in &config.observed {
            if m.nrows() != d || m.ncols() != d {
                return Err(CalibrationError::Params(ParamError::Dimension {
                    what: "observed curves",
                    expected: d,
                    got: m.nrows(),
                }));
            }
        }
        if config.e0_corr.nrows() != d || config.e0_corr.iter().any(|x| !x.is_finite()) {
            return Err(CalibrationError::Params(ParamError::NotFinite {
                what: "inventory correlation proxy",
            }));
        }
        let grid = TimeGrid::new(config.solver_steps, config.horizon)
            .map_err(CalibrationError::Params)?;
        if config.solver_steps % n_bins != 0 {
            return Err(CalibrationError::Estimator(EstimatorError::GridNotNested {
                n_steps: config.solver_steps,
                n_bins,
            }));
        }

        let mut sigma_hat = DMatrix::<f64>::zeros(d, d);
        let mut shifts = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let curve: Vec<f64> = (0..n_bins).map(|b| config.observed[b][(i, j)]).collect();
                let levels = fundamental_from_patterns(
                    &curve,
                    config.fundamental_fraction,
                    config.shift_fraction,
                );
                sigma_hat[(i, j)] = levels.dt_sigma / config.bin_length;
                shifts[(i, j)] = levels.shift;
            }
        }
        let sigma_vec = DVector::from_iterator(d, (0..d).map(|i| sigma_hat[(i, i)].max(0.0).sqrt()));
        let mut corr_hat = DMatrix::<f64>::identity(d, d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    corr_hat[(i, j)] = sigma_hat[(i, j)] / (sigma_vec[i] * sigma_vec[j]);
                }
            }
        }
        // The estimated fundamental must itself be a covariance matrix.
        cholesky_checked(&corr_hat).map_err(CalibrationError::Params)?;

        Ok(Self {
            dim: d,
            grid,
            n_bins,
            sigma_hat,
            shifts,
            sigma_vec,
            corr_hat,
            config,
        })
    }

    /// L2 error of the shifted predicted curves against the observations.
    /// Non-finite or infeasible candidates return a large value.
    pub fn objective(&self, k: &[f64], gamma: f64, gamma_cov_diag: &[f64]) -> f64 {
        const BAD: f64 = 1e300;
        let d = self.dim;
        let params = match MarketParams::new(
            self.sigma_vec.clone(),
            self.corr_hat.clone(),
            DVector::from_row_slice(k),
            DVector::from_element(d, 1.0),
            DVector::from_row_slice(&self.config.alpha_hat),
            DVector::from_element(d, self.config.a_term),
            gamma,
            self.config.horizon,
        ) {
            Ok(p) => p,
            Err(_) => return BAD,
        };
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let c = if i == j { 1.0 } else { self.config.e0_corr[(i, j)] };
                cov[(i, j)] = c * (gamma_cov_diag[i] * gamma_cov_diag[j]).sqrt();
            }
        }
        let law = match InventoryLaw::centered(cov) {
            Ok(l) => l,
            Err(_) => return BAD,
        };
        let pred = match theoretical_excess(&params, &law, &self.grid, self.n_bins) {
            Ok(p) => p,
            Err(_) => return BAD,
        };
        let mut acc = 0.0f64;
        for b in 0..self.n_bins {
            for i in 0..d {
                for j in i..d {
                    let model = pred.total[b][(i, j)] + self.shifts[(i, j)];
                    let gap = model - self.config.observed[b][(i, j)];
                    acc += gap * gap;
                }
            }
        }
        if acc.is_finite() {
            acc
        } else {
            BAD
        }
    }
}

/// Fitted parameters with the residual and bookkeeping of the search.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    /// Fitted liquidity ratios k_i = V_i / eta_i.
    pub k: Vec<f64>,
    pub gamma: f64,
    /// Fitted diagonal of the inventory covariance.
    pub gamma_cov_diag: Vec<f64>,
    pub residual_l2: f64,
    pub evals: usize,
    pub restarts: usize,
    /// Index of the winning restart (deterministic tie-break: lowest).
    pub winning_restart: usize,
    /// Best objective after each iteration of the winning restart.
    pub best_trace: Vec<f64>,
    /// True when the winning restart ran out of budget before converging.
    pub budget_exhausted: bool,
    /// (S2) fundamental estimate, $^2 day^-1 share^-2.
    pub sigma_hat: DMatrix<f64>,
    /// Per-pair curve shifts.
    pub shifts: DMatrix<f64>,
}

impl CalibrationResult {
    /// JSON report with provenance tags for every quantity.
    pub fn report(&self, config: &CalibrationConfig) -> serde_json::Value {
        json!({
            "fitted": {
                "k_volume_over_eta": self.k,
                "gamma_per_usd": self.gamma,
                "inventory_cov_diag_share2": self.gamma_cov_diag,
            },
            "fixed": {
                "terminal_penalty": config.a_term,
                "alpha_hat": config.alpha_hat,
                "sigma_hat_usd2_per_day_per_share2": matrix_rows(&self.sigma_hat),
                "e0_correlation": matrix_rows(&config.e0_corr),
                "curve_shifts": matrix_rows(&self.shifts),
                "fundamental_fraction": config.fundamental_fraction,
                "shift_fraction": config.shift_fraction,
            },
            "provenance": {
                "k_volume_over_eta": "fitted (S3)",
                "gamma_per_usd": "fitted (S3)",
                "inventory_cov_diag_share2": "fitted (S3)",
                "alpha_hat": "estimated from impact regression",
                "sigma_hat_usd2_per_day_per_share2": "estimated (S2)",
                "e0_correlation": "estimated (S1) flow proxy",
                "terminal_penalty": "fixed by configuration",
            },
            "residual_l2": self.residual_l2,
            "evals": self.evals,
            "restarts": self.restarts,
            "winning_restart": self.winning_restart,
            "budget_exhausted": self.budget_exhausted,
            "bounds": {
                "k": [config.bounds.k.0, config.bounds.k.1],
                "gamma": [config.bounds.gamma.0, config.bounds.gamma.1],
                "gamma_cov": [config.bounds.gamma_cov.0, config.bounds.gamma_cov.1],
            },
        })
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Coordinate transform between the unit box and parameter space:
/// log10 for k and gamma, square root for the inventory variances.
struct BoxTransform {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxTransform {
    fn new(d: usize, bounds: &SearchBounds) -> Self {
        let mut lo = Vec::with_capacity(2 * d + 1);
        let mut hi = Vec::with_capacity(2 * d + 1);
        for _ in 0..d {
            lo.push(bounds.k.0.log10());
            hi.push(bounds.k.1.log10());
        }
        lo.push(bounds.gamma.0.log10());
        hi.push(bounds.gamma.1.log10());
        for _ in 0..d {
            lo.push(bounds.gamma_cov.0.sqrt());
            hi.push(bounds.gamma_cov.1.sqrt());
        }
        Self { dim: d, lo, hi }
    }

    fn n_coords(&self) -> usize {
        2 * self.dim + 1
    }

    /// Unit-box coordinates (clamped) to (k, gamma, Gamma_diag).
    fn decode(&self, u: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let d = self.dim;
        let coord = |j: usize| -> f64 {
            let t = u[j].clamp(0.0, 1.0);
            self.lo[j] + t * (self.hi[j] - self.lo[j])
        };
        let k: Vec<f64> = (0..d).map(|j| 10f64.powf(coord(j))).collect();
        let gamma = 10f64.powf(coord(d));
        let gdiag: Vec<f64> = (0..d)
            .map(|j| {
                let s = coord(d + 1 + j);
                s * s
            })
            .collect();
        (k, gamma, gdiag)
    }

    fn violation(&self, u: &[f64]) -> f64 {
        u.iter()
            .map(|&x| {
                if x < 0.0 {
                    x * x
                } else if x > 1.0 {
                    (x - 1.0) * (x - 1.0)
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Run the full (S3) fit.
pub fn calibrate(config: CalibrationConfig) -> Result<CalibrationResult, CalibrationError> {
    let restarts = config.restarts.max(1);
    let max_evals = config.max_evals_per_restart;
    let seed = config.seed;
    let bounds = config.bounds;
    let problem = CalibrationProblem::new(config)?;
    let transform = BoxTransform::new(problem.dim, &bounds);
    let n = transform.n_coords();

    let run_restart = |r: usize| -> (usize, SimplexResult) {
        let start: Vec<f64> = if r == 0 {
            vec![0.5; n]
        } else {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(1_000_000 + r as u64);
            (0..n).map(|_| rng.random_range(0.05..0.95)).collect()
        };
        let objective = |u: &[f64]| -> f64 {
            let (k, gamma, gdiag) = transform.decode(u);
            let base = problem.objective(&k, gamma, &gdiag);
            let pen = transform.violation(u);
            base + pen * 1e3 * (1.0 + base.abs())
        };
        let result = nelder_mead(
            objective,
            &start,
            &SimplexOptions {
                max_evals,
                ..Default::default()
            },
        );
        (r, result)
    };

    let mut results: Vec<(usize, SimplexResult)> =
        (0..restarts).into_par_iter().map(run_restart).collect();
    results.sort_by(|a, b| {
        a.1.fmin
            .partial_cmp(&b.1.fmin)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let total_evals: usize = results.iter().map(|(_, r)| r.evals).sum();
    let (winning_restart, best) = results.swap_remove(0);
    let (k, gamma, gdiag) = transform.decode(&best.x);

    Ok(CalibrationResult {
        k,
        gamma,
        gamma_cov_diag: gdiag,
        residual_l2: best.fmin,
        evals: total_evals,
        restarts,
        winning_restart,
        best_trace: best.best_trace,
        budget_exhausted: !best.converged,
        sigma_hat: problem.sigma_hat.clone(),
        shifts: problem.shifts.clone(),
    })
}
