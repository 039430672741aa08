//! Synthetic multi-day market panels under the equilibrium flow.
//!
//! Each day draws a fresh initial aggregate inventory E0 from a Gaussian
//! law, solves (by linearity: recombines) the day's mean field, and builds
//! bin-boundary prices
//!
//! ```text
//! S_{b+1} = S_b + A_perm * (integral of mu over bin b) + noise_b,
//! noise_b ~ N(0, Sigma * bin_length),
//! ```
//!
//! with correlated Gaussian noise. Net flows are the trapezoid integral of
//! mu over each bin on the solver grid — the same quadrature the
//! closed-form covariance predictor uses, so simulation and prediction
//! agree in expectation with no discretization gap.
//!
//! Randomness: day `l` uses ChaCha12 keyed by the master seed with stream
//! index `l`. Draw order within a day: `d` normals for E0, then `d` price
//! noise normals per bin, then (only when flow noise is enabled) `d` flow
//! noise normals per bin. Days are therefore independent of scheduling and
//! the panel is a pure function of its configuration.

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{EstimatorError, ParamError, SolverError};
use crate::linalg::{asymmetry, cholesky_checked, psd_sqrt};
use crate::mean_field::solve_identical_bvp_raw;
use crate::panel::MarketPanel;
use crate::params::{MarketParams, TimeGrid};

/// Law of the daily initial aggregate inventory: Gaussian with covariance
/// `cov` (share^2) around `mean` (default zero).
#[derive(Debug, Clone)]
pub struct InventoryLaw {
    pub cov: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl InventoryLaw {
    pub fn new(cov: DMatrix<f64>, mean: DVector<f64>) -> Result<Self, ParamError> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(ParamError::Dimension {
                what: "inventory covariance",
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let asym = asymmetry(&cov);
        if asym > 1e-9 * cov.amax().max(1.0) {
            return Err(ParamError::NotSymmetric { asymmetry: asym });
        }
        // Factorization doubles as the PSD check.
        psd_sqrt(&cov, 1e-9)?;
        Ok(Self { cov, mean })
    }

    pub fn centered(cov: DMatrix<f64>) -> Result<Self, ParamError> {
        let d = cov.nrows();
        Self::new(cov, DVector::zeros(d))
    }

    /// Square-root factor used to color standard normals.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        psd_sqrt(&self.cov, 1e-9).expect("validated at construction")
    }
}

/// Full specification of a simulated panel.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: MarketParams,
    pub law: InventoryLaw,
    pub seed: u64,
    pub n_days: usize,
    /// Intraday bins per day.
    pub n_bins: usize,
    /// Solver grid steps; must be a multiple of `n_bins`.
    pub solver_steps: usize,
    /// Price at the open, shared across assets ($/share).
    pub initial_price: f64,
    /// Optional std of additive noise on *reported* net flows (share);
    /// mimics volume from participants outside the modeled crowd. Off by
    /// default; prices are never affected.
    pub flow_noise_std: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.n_bins == 0 || self.solver_steps == 0 || self.solver_steps % self.n_bins != 0 {
            return Err(EstimatorError::GridNotNested {
                n_steps: self.solver_steps,
                n_bins: self.n_bins,
            });
        }
        if self.law.mean.len() != self.params.dim() {
            return Err(EstimatorError::Solver(SolverError::Params(
                ParamError::Dimension {
                    what: "inventory law",
                    expected: self.params.dim(),
                    got: self.law.mean.len(),
                },
            )));
        }
        if self.n_days == 0 {
            return Err(EstimatorError::TooFewDays { needed: 1, got: 0 });
        }
        if !self.initial_price.is_finite() || !self.flow_noise_std.is_finite()
            || self.flow_noise_std < 0.0
        {
            return Err(EstimatorError::Solver(SolverError::Params(
                ParamError::NotFinite {
                    what: "simulation configuration",
                },
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.solver_steps, self.params.horizon).expect("validated")
    }
}

/// Precomputed linear map from E0 to the equilibrium paths, exploiting the
/// linearity of the boundary value problem. One solve per basis vector.
#[derive(Debug, Clone)]
pub struct MeanFieldBasis {
    pub grid: TimeGrid,
    pub n_bins: usize,
    /// Inventory path of the unit solutions: e_path[l][node] = E(t; e_l).
    pub e_path: Vec<Vec<DVector<f64>>>,
    /// Speed path of the unit solutions: mu_path[l][node] = mu(t; e_l).
    pub mu_path: Vec<Vec<DVector<f64>>>,
    /// bin_flow[b] maps E0 to the vector of bin-b net flows
    /// (trapezoid of mu over the bin): row i, column l.
    pub bin_flow: Vec<DMatrix<f64>>,
}

impl MeanFieldBasis {
    /// Net flows of every bin for a concrete initial inventory.
    pub fn flows_for(&self, e0: &DVector<f64>) -> Vec<DVector<f64>> {
        self.bin_flow.iter().map(|phi| phi * e0).collect()
    }
}

/// Solve the d unit-inventory problems and integrate their speeds per bin.
pub fn mean_field_basis(
    params: &MarketParams,
    grid: &TimeGrid,
    n_bins: usize,
) -> Result<MeanFieldBasis, EstimatorError> {
    let d = params.dim();
    if n_bins == 0 || grid.n_steps() % n_bins != 0 {
        return Err(EstimatorError::GridNotNested {
            n_steps: grid.n_steps(),
            n_bins,
        });
    }
    let stride = grid.n_steps() / n_bins;
    let dt = grid.dt();
    let mut e_path = Vec::with_capacity(d);
    let mut mu_path = Vec::with_capacity(d);
    for l in 0..d {
        let mut e0 = DVector::<f64>::zeros(d);
        e0[l] = 1.0;
        let (x, y) = solve_identical_bvp_raw(params, &e0, grid)?;
        e_path.push(x);
        mu_path.push(y);
    }
    let mut bin_flow = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let first = b * stride;
        let mut phi = DMatrix::<f64>::zeros(d, d);
        for (l, y) in mu_path.iter().enumerate() {
            for i in 0..d {
                let mut acc = 0.5 * (y[first][i] + y[first + stride][i]);
                for k in (first + 1)..(first + stride) {
                    acc += y[k][i];
                }
                phi[(i, l)] = acc * dt;
            }
        }
        bin_flow.push(phi);
    }
    Ok(MeanFieldBasis {
        grid: *grid,
        n_bins,
        e_path,
        mu_path,
        bin_flow,
    })
}

/// Draw the per-day initial inventories exactly as [`simulate_panel`] does.
pub fn sample_inventories(law: &InventoryLaw, seed: u64, n_days: usize) -> Vec<DVector<f64>> {
    let factor = law.sqrt_factor();
    (0..n_days)
        .map(|day| {
            let mut rng = day_rng(seed, day);
            draw_e0(&mut rng, law, &factor)
        })
        .collect()
}

fn day_rng(seed: u64, day: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(day as u64);
    rng
}

fn draw_e0(rng: &mut ChaCha12Rng, law: &InventoryLaw, factor: &DMatrix<f64>) -> DVector<f64> {
    let d = law.mean.len();
    let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
    &law.mean + factor * z
}

/// One simulated day: bin-boundary prices and per-bin net flows.
#[derive(Debug, Clone)]
pub struct DayData {
    pub e0: DVector<f64>,
    /// prices[boundary][asset], n_bins + 1 entries.
    pub prices: Vec<DVector<f64>>,
    /// flows[bin][asset].
    pub flows: Vec<DVector<f64>>,
}

fn simulate_day_with(
    config: &SimConfig,
    basis: &MeanFieldBasis,
    noise_factor: &DMatrix<f64>,
    law_factor: &DMatrix<f64>,
    day: usize,
) -> DayData {
    let d = config.params.dim();
    let bin_len = config.params.horizon / config.n_bins as f64;
    let sqrt_len = bin_len.sqrt();
    let mut rng = day_rng(config.seed, day);
    let e0 = draw_e0(&mut rng, &config.law, law_factor);
    let flows = basis.flows_for(&e0);

    let mut prices = Vec::with_capacity(config.n_bins + 1);
    let mut s = DVector::from_element(d, config.initial_price);
    prices.push(s.clone());
    let mut reported = Vec::with_capacity(config.n_bins);
    for flow in &flows {
        let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
        let noise = noise_factor * z * sqrt_len;
        for i in 0..d {
            s[i] += config.params.alpha[i] * flow[i] + noise[i];
        }
        prices.push(s.clone());
        let mut rep = flow.clone();
        if config.flow_noise_std > 0.0 {
            for i in 0..d {
                let eps: f64 = StandardNormal.sample(&mut rng);
                rep[i] += config.flow_noise_std * eps;
            }
        }
        reported.push(rep);
    }
    DayData {
        e0,
        prices,
        flows: reported,
    }
}

/// Simulate a single day for a given initial inventory draw.
///
/// Provided for direct use; [`simulate_panel`] reproduces the same numbers
/// day by day (same seeding scheme, same basis recombination).
pub fn simulate_day(
    config: &SimConfig,
    e0_override: Option<&DVector<f64>>,
    day: usize,
) -> Result<DayData, EstimatorError> {
    config.validate()?;
    let basis = mean_field_basis(&config.params, &config.grid(), config.n_bins)?;
    let noise_factor = cholesky_checked(&config.params.sigma_cov)
        .map_err(|e| EstimatorError::Solver(SolverError::Params(e)))?;
    let law_factor = config.law.sqrt_factor();
    let mut data = simulate_day_with(config, &basis, &noise_factor, &law_factor, day);
    if let Some(e0) = e0_override {
        // Re-run the deterministic part with the imposed inventory, keeping
        // the day's noise stream.
        let flows = basis.flows_for(e0);
        let mut rng = day_rng(config.seed, day);
        for _ in 0..config.params.dim() {
            let _: f64 = StandardNormal.sample(&mut rng);
        }
        let bin_len = config.params.horizon / config.n_bins as f64;
        let sqrt_len = bin_len.sqrt();
        let d = config.params.dim();
        let mut s = DVector::from_element(d, config.initial_price);
        data.prices.clear();
        data.prices.push(s.clone());
        data.flows.clear();
        for flow in &flows {
            let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
            let noise = &noise_factor * z * sqrt_len;
            for i in 0..d {
                s[i] += config.params.alpha[i] * flow[i] + noise[i];
            }
            data.prices.push(s.clone());
            data.flows.push(flow.clone());
        }
        data.e0 = e0.clone();
    }
    Ok(data)
}

/// Simulate the full panel. Days are independent; the output is identical
/// for any degree of parallelism.
pub fn simulate_panel(config: &SimConfig) -> Result<MarketPanel, EstimatorError> {
    config.validate()?;
    let d = config.params.dim();
    let grid = config.grid();
    let basis = mean_field_basis(&config.params, &grid, config.n_bins)?;
    let noise_factor = cholesky_checked(&config.params.sigma_cov)
        .map_err(|e| EstimatorError::Solver(SolverError::Params(e)))?;
    let law_factor = config.law.sqrt_factor();

    let days: Vec<DayData> = (0..config.n_days)
        .into_par_iter()
        .map(|day| simulate_day_with(config, &basis, &noise_factor, &law_factor, day))
        .collect();

    let mut prices = Array3::<f64>::zeros((config.n_days, config.n_bins + 1, d));
    let mut flows = Array3::<f64>::zeros((config.n_days, config.n_bins, d));
    for (l, data) in days.iter().enumerate() {
        for b in 0..=config.n_bins {
            for i in 0..d {
                prices[[l, b, i]] = data.prices[b][i];
            }
        }
        for b in 0..config.n_bins {
            for i in 0..d {
                flows[[l, b, i]] = data.flows[b][i];
            }
        }
    }
    let stride = grid.n_steps() / config.n_bins;
    let bin_times: Vec<f64> = (0..=config.n_bins).map(|b| grid.node(b * stride)).collect();
    let panel = MarketPanel {
        n_days: config.n_days,
        n_bins: config.n_bins,
        dim: d,
        bin_times,
        prices,
        net_flows: Some(flows),
        asset_names: (0..d).map(|i| format!("A{i}")).collect(),
    };
    panel.validate().map_err(|e| {
        EstimatorError::Solver(SolverError::GridMismatch {
            what: Box::leak(e.to_string().into_boxed_str()),
        })
    })?;
    Ok(panel)
}
