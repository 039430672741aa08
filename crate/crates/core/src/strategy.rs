//! Individual optimal strategies on top of a solved mean field.
//!
//! The optimal trading speed splits as
//!
//! ```text
//! v*(t, q) = 2 V H(t) q + 2 V H_vec(t)
//! ```
//!
//! an Almgren-Chriss feedback plus a mean-field anticipation term. Along
//! the population average it collapses to
//! `v*(t, q) = E'(t) + 2 V H(t) (q - E(t))`, which is the form the agent
//! integrator uses: its one-step rule then reproduces the mean-field
//! scheme exactly when q0 = E0.

use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;
use crate::mean_field::MeanFieldSolution;
use crate::params::MarketParams;
use crate::riccati::RiccatiPath;

/// The two components of the optimal speed at one node.
#[derive(Debug, Clone)]
pub struct SpeedDecomposition {
    /// 2 V H(t) q — the classical Almgren-Chriss feedback.
    pub almgren_chriss: DVector<f64>,
    /// 2 V H_vec(t) — the mean-field anticipation correction.
    pub mean_field_correction: DVector<f64>,
}

impl SpeedDecomposition {
    pub fn total(&self) -> DVector<f64> {
        &self.almgren_chriss + &self.mean_field_correction
    }
}

/// One agent's inventory, speed and cash paths on the solution grid.
#[derive(Debug, Clone)]
pub struct AgentTrajectory {
    pub q: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub cash: Vec<f64>,
    /// Implementation-shortfall reward at the horizon:
    /// `X_T + q_T (S_T - A q_T) - (gamma/2) int q . Sigma q dt`.
    pub reward_terminal: f64,
}

/// Propagator `G(t, w) = exp{ int_t^w 2 H(s) V ds } A_perm`, computed by
/// integrating the matrix ODE `Y'(w) = 2 H(w) V Y(w)`, `Y(t) = Id` with an
/// implicit trapezoid rule (the exponential form is valid because `H V`
/// commutes with its own integral).
///
/// Panics if `t_index > w_index` or either index is off the grid.
pub fn propagator(
    riccati: &RiccatiPath,
    params: &MarketParams,
    t_index: usize,
    w_index: usize,
) -> DMatrix<f64> {
    assert!(t_index <= w_index, "propagator needs t_index <= w_index");
    assert!(w_index < riccati.grid().n_nodes(), "w_index off the grid");
    let d = params.dim();
    let dt = riccati.grid().dt();
    let v = params.liquidity_diag();
    let hv = |k: usize| -> DMatrix<f64> {
        let mut m = riccati.at(k).clone();
        for (j, &vj) in v.iter().enumerate() {
            m.column_mut(j).scale_mut(vj);
        }
        m
    };
    let mut y = DMatrix::<f64>::identity(d, d);
    let mut hv_k = hv(t_index);
    for k in t_index..w_index {
        let hv_next = hv(k + 1);
        let rhs = (DMatrix::identity(d, d) + dt * &hv_k) * &y;
        let lhs = DMatrix::identity(d, d) - dt * &hv_next;
        y = lhs
            .lu()
            .solve(&rhs)
            .expect("propagator step matrix is singular");
        hv_k = hv_next;
    }
    y * params.impact_matrix()
}

/// Optimal speed at node `t_index` for inventory `q`, split into its
/// Almgren-Chriss and mean-field parts.
pub fn optimal_speed(
    solution: &MeanFieldSolution,
    params: &MarketParams,
    t_index: usize,
    q: &DVector<f64>,
) -> SpeedDecomposition {
    let v = params.liquidity_diag();
    let h = solution.riccati.at(t_index);
    let hq = h * q;
    let d = params.dim();
    let mut almgren_chriss = DVector::<f64>::zeros(d);
    let mut correction = DVector::<f64>::zeros(d);
    for i in 0..d {
        almgren_chriss[i] = 2.0 * v[i] * hq[i];
        correction[i] = 2.0 * v[i] * solution.hs[t_index][i];
    }
    SpeedDecomposition {
        almgren_chriss,
        mean_field_correction: correction,
    }
}

/// Speed in the mean-field form `E'(t_k) + 2 V H_k (q - E_k)`.
///
/// Algebraically equal to [`optimal_speed`]; on the grid it is the exact
/// complement of the mean-field scheme, so an agent starting at q0 = E0
/// reproduces E(t) to rounding.
fn feedback_speed(
    solution: &MeanFieldSolution,
    params: &MarketParams,
    k: usize,
    q: &DVector<f64>,
) -> DVector<f64> {
    let v = params.liquidity_diag();
    let deviation = q - &solution.e[k];
    let h_dev = solution.riccati.at(k) * deviation;
    let mut speed = solution.edot[k].clone();
    for i in 0..params.dim() {
        speed[i] += 2.0 * v[i] * h_dev[i];
    }
    speed
}

/// Simulate one agent following the optimal feedback rule.
///
/// `price_path`, when given, must hold one price vector per grid node; cash
/// is marked against it and the terminal reward is the implementation
/// shortfall. When absent, the deterministic impact-only path started at 0
/// is used, so cash and reward read directly as execution cost and
/// shortfall against the decision price.
pub fn simulate_agent(
    q0: &DVector<f64>,
    solution: &MeanFieldSolution,
    params: &MarketParams,
    price_path: Option<&[DVector<f64>]>,
) -> Result<AgentTrajectory, SolverError> {
    let d = params.dim();
    let n = solution.grid.n_steps();
    let dt = solution.grid.dt();
    if q0.len() != d {
        return Err(SolverError::GridMismatch {
            what: "q0 dimension does not match the market",
        });
    }
    if let Some(path) = price_path {
        if path.len() != n + 1 {
            return Err(SolverError::GridMismatch {
                what: "price path length does not match the solution grid",
            });
        }
    }

    // Deterministic impact-only prices when no path is supplied:
    // S(t_{k+1}) = S(t_k) + A_perm mu_k dt, S(0) = 0.
    let prices: Vec<DVector<f64>> = match price_path {
        Some(path) => path.to_vec(),
        None => {
            let mut acc = DVector::<f64>::zeros(d);
            let mut out = Vec::with_capacity(n + 1);
            out.push(acc.clone());
            for k in 0..n {
                for i in 0..d {
                    acc[i] += params.alpha[i] * solution.mu[k][i] * dt;
                }
                out.push(acc.clone());
            }
            out
        }
    };

    let mut q = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    let mut cash = Vec::with_capacity(n + 1);
    q.push(q0.clone());
    cash.push(0.0);
    for k in 0..n {
        let speed = feedback_speed(solution, params, k, &q[k]);
        let mut execution_cost = 0.0;
        let mut proceeds = 0.0;
        for i in 0..d {
            proceeds += speed[i] * prices[k][i];
            execution_cost += params.eta[i] * speed[i] * speed[i] / params.volume[i];
        }
        cash.push(cash[k] - dt * proceeds - dt * execution_cost);
        let next = &q[k] + dt * &speed;
        q.push(next);
        v.push(speed);
    }
    v.push(feedback_speed(solution, params, n, &q[n]));

    // Running risk penalty, trapezoid weights.
    let mut risk = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        risk += w * dt * (q[k].transpose() * &params.sigma_cov * &q[k])[(0, 0)];
    }
    let mut terminal_value = 0.0;
    for i in 0..d {
        terminal_value += q[n][i] * (prices[n][i] - solution.a_term[i] * q[n][i]);
    }
    let reward_terminal = cash[n] + terminal_value - 0.5 * solution.gamma * risk;

    Ok(AgentTrajectory {
        q,
        v,
        cash,
        reward_terminal,
    })
}
