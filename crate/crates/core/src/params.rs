//! Market parameters and time discretization.
//!
//! Units follow the conventions used throughout the crate: prices in $ per
//! share, inventories in shares, trading speeds in shares per day, time in
//! days. `sigma` is the arithmetic volatility per asset ($·day^-1/2·share^-1),
//! `volume` the daily traded volume (share·day^-1), `eta` the temporary
//! impact coefficient, `alpha` the permanent impact coefficient, `a_term`
//! the diagonal terminal inventory penalty and `gamma` the risk aversion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::linalg::{asymmetry, cholesky_checked};

const SYMMETRY_TOL: f64 = 1e-10;

/// Assemble the price-noise covariance `Sigma[i][j] = sigma_i sigma_j corr[i][j]`.
///
/// Rejects non-symmetric correlation input, non-unit diagonals and
/// correlation matrices that are not positive definite (the error names the
/// first failing leading minor).
pub fn build_sigma(sigma: &DVector<f64>, corr: &DMatrix<f64>) -> Result<DMatrix<f64>, ParamError> {
    let d = sigma.len();
    if corr.nrows() != d || corr.ncols() != d {
        return Err(ParamError::Dimension {
            what: "correlation matrix",
            expected: d,
            got: corr.nrows(),
        });
    }
    for (i, &s) in sigma.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            return Err(ParamError::NotPositive {
                what: "sigma",
                index: i,
                value: s,
            });
        }
    }
    let asym = asymmetry(corr);
    if asym > SYMMETRY_TOL {
        return Err(ParamError::NotSymmetric { asymmetry: asym });
    }
    for i in 0..d {
        if (corr[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
            return Err(ParamError::NonUnitDiagonal {
                index: i,
                value: corr[(i, i)],
            });
        }
    }
    cholesky_checked(corr)?;
    let mut out = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = sigma[i] * sigma[j] * corr[(i, j)];
        }
    }
    Ok(out)
}

/// Per-asset microstructure and preference parameters of the trading game.
#[derive(Debug, Clone)]
pub struct MarketParams {
    /// Arithmetic volatilities ($·day^-1/2·share^-1).
    pub sigma: DVector<f64>,
    /// Correlation of the Brownian drivers (unit diagonal, positive definite).
    pub corr: DMatrix<f64>,
    /// Covariance of (sigma_i W^i); always `sigma_i sigma_j corr_ij`.
    pub sigma_cov: DMatrix<f64>,
    /// Daily market volumes V_i (share·day^-1).
    pub volume: DVector<f64>,
    /// Temporary impact coefficients eta_i.
    pub eta: DVector<f64>,
    /// Permanent impact coefficients alpha_i (may be zero).
    pub alpha: DVector<f64>,
    /// Terminal penalty diagonal A_i (strictly positive).
    pub a_term: DVector<f64>,
    /// Risk aversion gamma (non-negative, shared in the identical-preferences case).
    pub gamma: f64,
    /// Trading horizon T in days.
    pub horizon: f64,
}

impl MarketParams {
    pub fn new(
        sigma: DVector<f64>,
        corr: DMatrix<f64>,
        volume: DVector<f64>,
        eta: DVector<f64>,
        alpha: DVector<f64>,
        a_term: DVector<f64>,
        gamma: f64,
        horizon: f64,
    ) -> Result<Self, ParamError> {
        let d = sigma.len();
        let sigma_cov = build_sigma(&sigma, &corr)?;
        for (name, v) in [("volume", &volume), ("eta", &eta), ("a_term", &a_term)] {
            if v.len() != d {
                return Err(ParamError::Dimension {
                    what: name,
                    expected: d,
                    got: v.len(),
                });
            }
            for (i, &x) in v.iter().enumerate() {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(ParamError::NotPositive {
                        what: name,
                        index: i,
                        value: x,
                    });
                }
            }
        }
        if alpha.len() != d {
            return Err(ParamError::Dimension {
                what: "alpha",
                expected: d,
                got: alpha.len(),
            });
        }
        for (i, &x) in alpha.iter().enumerate() {
            if x < 0.0 || !x.is_finite() {
                return Err(ParamError::Negative {
                    what: "alpha",
                    index: i,
                    value: x,
                });
            }
        }
        if gamma < 0.0 || !gamma.is_finite() {
            return Err(ParamError::Negative {
                what: "gamma",
                index: 0,
                value: gamma,
            });
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ParamError::NotPositive {
                what: "horizon",
                index: 0,
                value: horizon,
            });
        }
        Ok(Self {
            sigma,
            corr,
            sigma_cov,
            volume,
            eta,
            alpha,
            a_term,
            gamma,
            horizon,
        })
    }

    /// Number of assets.
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// Diagonal of the liquidity matrix V := diag(V_i / (4 eta_i)).
    pub fn liquidity_diag(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.volume
                .iter()
                .zip(self.eta.iter())
                .map(|(&v, &e)| v / (4.0 * e)),
        )
    }

    /// Permanent impact matrix A_perm := diag(alpha_i).
    pub fn impact_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.alpha)
    }

    /// gamma * Sigma, the running risk weight of the identical-preferences game.
    pub fn risk_matrix(&self) -> DMatrix<f64> {
        self.gamma * &self.sigma_cov
    }

    /// Largest |alpha_i|; the smallness quantity of the fixed point iteration.
    pub fn alpha_norm(&self) -> f64 {
        self.alpha.iter().cloned().fold(0.0, f64::max)
    }
}

/// Uniform grid t_0 = 0 < t_1 < ... < t_N = T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self, ParamError> {
        if n_steps == 0 {
            return Err(ParamError::EmptyGrid);
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ParamError::NotPositive {
                what: "horizon",
                index: 0,
                value: horizon,
            });
        }
        Ok(Self { n_steps, horizon })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, n_steps + 1.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Node t_k; exact at both endpoints.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.node(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_corr(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn sigma_identity_correlation() {
        let sigma = DVector::from_row_slice(&[0.3, 1.0, 0.3]);
        let cov = build_sigma(&sigma, &unit_corr(3)).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.09, 1.0, 0.09]));
        assert!((cov - expect).norm() < 1e-15);
    }

    #[test]
    fn sigma_cross_term() {
        // 80% correlation between two assets.
        let sigma = DVector::from_row_slice(&[0.3, 1.0]);
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let cov = build_sigma(&sigma, &corr).unwrap();
        assert!((cov[(0, 1)] - 0.24).abs() < 1e-15);
        assert!((cov[(1, 0)] - 0.24).abs() < 1e-15);
    }

    #[test]
    fn sigma_rejects_indefinite_correlation() {
        // Eigenvalues 2.01 and -0.01.
        let sigma = DVector::from_row_slice(&[1.0, 1.0]);
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 1.01, 1.01, 1.0]);
        match build_sigma(&sigma, &corr) {
            Err(ParamError::NotPositiveDefinite { order }) => assert_eq!(order, 2),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn sigma_rejects_non_unit_diagonal() {
        let sigma = DVector::from_row_slice(&[1.0]);
        let corr = DMatrix::from_row_slice(1, 1, &[0.9]);
        assert!(matches!(
            build_sigma(&sigma, &corr),
            Err(ParamError::NonUnitDiagonal { .. })
        ));
    }

    #[test]
    fn liquidity_diag_units() {
        let p = MarketParams::new(
            DVector::from_row_slice(&[0.3]),
            unit_corr(1),
            DVector::from_row_slice(&[2.0e6]),
            DVector::from_row_slice(&[0.1]),
            DVector::from_row_slice(&[8e-4]),
            DVector::from_row_slice(&[2.5]),
            5e-5,
            1.0,
        )
        .unwrap();
        assert!((p.liquidity_diag()[0] - 5.0e6).abs() < 1e-6);
    }

    #[test]
    fn params_reject_zero_penalty() {
        let res = MarketParams::new(
            DVector::from_row_slice(&[0.3]),
            unit_corr(1),
            DVector::from_row_slice(&[2.0e6]),
            DVector::from_row_slice(&[0.1]),
            DVector::from_row_slice(&[0.0]),
            DVector::from_row_slice(&[0.0]),
            0.0,
            1.0,
        );
        assert!(matches!(res, Err(ParamError::NotPositive { what: "a_term", .. })));
    }

    #[test]
    fn grid_nodes_hit_endpoints() {
        let g = TimeGrid::new(7, 1.0).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(7), 1.0);
        assert_eq!(g.n_nodes(), 8);
        assert!((g.dt() - 1.0 / 7.0).abs() < 1e-16);
    }
}
