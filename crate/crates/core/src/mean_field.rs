//! Mean-field equilibrium solvers.
//!
//! The identical-preferences market mean field solves the forward-backward
//! system
//!
//! ```text
//! E'' = -2 V A_perm E' + 2 gamma V Sigma E,
//! E(0) = E0,    E'(T) + 4 V A E(T) = 0,
//! ```
//!
//! discretized by the implicit one-step scheme
//!
//! ```text
//! x_k - x_{k-1} - dt y_{k-1} = 0
//! y_k - y_{k-1} - dt (2 gamma V Sigma x_k - 2 V A_perm y_k) = 0
//! x_0 = E0,    4 V A x_N + y_N = 0,
//! ```
//!
//! assembled over (x_0..x_N, y_0..y_N) as one block-tridiagonal linear
//! system and solved directly. Shooting is avoided on purpose: the
//! interior dynamics carries fast modes of rate ~ 2 V |alpha| whose
//! transfer-matrix products overflow long before the direct solve loses
//! accuracy.
//!
//! With heterogeneous preferences each class solves the same boundary value
//! problem with the aggregate speed as an exogenous forcing, and the
//! aggregate is found by damped Picard iteration. The iteration contracts
//! only for small enough |A_perm| (small permanent impact relative to
//! liquidity); divergence is detected at runtime and reported, not assumed
//! away.

use nalgebra::{DMatrix, DVector};

use crate::error::{ParamError, SolverError};
use crate::params::{MarketParams, TimeGrid};
use crate::riccati::{solve_riccati_with, RiccatiPath};

/// One preference class of the heterogeneous game.
#[derive(Debug, Clone)]
pub struct AgentClass {
    /// Mass of the class under the initial preference distribution.
    pub weight: f64,
    /// Class risk aversion.
    pub gamma: f64,
    /// Class terminal penalty diagonal (strictly positive entries).
    pub a_term: DVector<f64>,
    /// Class mean initial inventory.
    pub e0: DVector<f64>,
}

/// Equilibrium mean field on a time grid.
#[derive(Debug, Clone)]
pub struct MeanFieldSolution {
    pub grid: TimeGrid,
    /// Mean inventory E(t_k) (share).
    pub e: Vec<DVector<f64>>,
    /// Mean speed E'(t_k) (share/day).
    pub edot: Vec<DVector<f64>>,
    /// Aggregate trading speed entering the price drift. Equals `edot`
    /// in the identical-preferences case.
    pub mu: Vec<DVector<f64>>,
    /// Linear value-function coefficient H_vec(t_k) ($/share).
    pub hs: Vec<DVector<f64>>,
    /// Scalar value-function constant h(t_k) ($).
    pub h: Vec<f64>,
    /// Quadratic coefficient path.
    pub riccati: RiccatiPath,
    /// Risk aversion and terminal penalty this solution was built with.
    pub gamma: f64,
    pub a_term: DVector<f64>,
}

impl MeanFieldSolution {
    /// Residual of the terminal boundary condition, `|E'(T) + 4 V A E(T)|_inf`.
    pub fn boundary_residual(&self, params: &MarketParams) -> f64 {
        let n = self.grid.n_steps();
        let v = params.liquidity_diag();
        let mut worst = 0.0f64;
        for i in 0..params.dim() {
            let r = self.edot[n][i] + 4.0 * v[i] * self.a_term[i] * self.e[n][i];
            worst = worst.max(r.abs());
        }
        worst
    }
}

/// Result of the heterogeneous fixed point.
#[derive(Debug, Clone)]
pub struct HeterogeneousSolution {
    /// Per-class equilibria, in input order. `mu` in each holds the aggregate.
    pub classes: Vec<MeanFieldSolution>,
    /// Aggregate speed sum_a weight_a E'_a.
    pub aggregate_mu: Vec<DVector<f64>>,
    /// Sup-norm update per iteration.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Damping factor in effect when the iteration stopped.
    pub final_damping: f64,
}

/// Options of the damped Picard iteration.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub max_iter: usize,
    /// Absolute sup-norm tolerance on the aggregate-speed update.
    pub tol: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 1.0,
            max_iter: 200,
            tol: 1e-12,
        }
    }
}

enum Friction<'a> {
    /// Friction term -2 V A_perm y_k with the solution's own speed (identical case).
    SelfConsistent,
    /// Exogenous aggregate speed at every node.
    Exogenous(&'a [DVector<f64>]),
}

/// Solve the discrete two-point boundary value problem.
///
/// Returns the node values (x, y) = (E, E').
fn solve_linear_bvp(
    params: &MarketParams,
    grid: &TimeGrid,
    gamma: f64,
    a_term: &DVector<f64>,
    e0: &DVector<f64>,
    friction: Friction<'_>,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>), SolverError> {
    let d = params.dim();
    let n = grid.n_steps();
    let dt = grid.dt();
    let v = params.liquidity_diag();

    // 2 dt gamma V Sigma (rows of Sigma scaled by v).
    let mut coupling = params.sigma_cov.clone();
    for i in 0..d {
        let s = 2.0 * dt * gamma * v[i];
        coupling.row_mut(i).scale_mut(s);
    }
    // I + 2 dt V A_perm for the implicit friction, or I when exogenous.
    let y_coef = match friction {
        Friction::SelfConsistent => DMatrix::from_diagonal(&DVector::from_iterator(
            d,
            (0..d).map(|i| 1.0 + 2.0 * dt * v[i] * params.alpha[i]),
        )),
        Friction::Exogenous(_) => DMatrix::identity(d, d),
    };
    let terminal = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        (0..d).map(|i| 4.0 * v[i] * a_term[i]),
    ));

    let m = 2 * d;
    let id = DMatrix::<f64>::identity(d, d);
    let mut diag = Vec::with_capacity(n + 1);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n + 1);

    // Upper coupling is the same for every interior row: x_{k+1} enters the
    // step-(k+1) transport equation.
    let mut upper_block = DMatrix::<f64>::zeros(m, m);
    upper_block.view_mut((d, 0), (d, d)).copy_from(&id);
    // Lower coupling: y_{k-1} enters the step-k velocity equation.
    let mut lower_block = DMatrix::<f64>::zeros(m, m);
    lower_block.view_mut((0, d), (d, d)).copy_from(&(-&id));

    // Row 0: x_0 = E0 and the step-1 transport equation.
    let mut d0 = DMatrix::<f64>::zeros(m, m);
    d0.view_mut((0, 0), (d, d)).copy_from(&id);
    d0.view_mut((d, 0), (d, d)).copy_from(&(-&id));
    d0.view_mut((d, d), (d, d)).copy_from(&(-dt * &id));
    diag.push(d0);
    upper.push(upper_block.clone());
    let mut r0 = DVector::<f64>::zeros(m);
    r0.rows_mut(0, d).copy_from(e0);
    rhs.push(r0);

    let forcing = |k: usize| -> DVector<f64> {
        match &friction {
            Friction::SelfConsistent => DVector::zeros(d),
            Friction::Exogenous(mu) => {
                let mut f = DVector::<f64>::zeros(d);
                for i in 0..d {
                    f[i] = -2.0 * dt * v[i] * params.alpha[i] * mu[k][i];
                }
                f
            }
        }
    };

    // Interior rows 1..n-1: step-k velocity equation plus step-(k+1) transport.
    for k in 1..n {
        let mut dk = DMatrix::<f64>::zeros(m, m);
        dk.view_mut((0, 0), (d, d)).copy_from(&(-&coupling));
        dk.view_mut((0, d), (d, d)).copy_from(&y_coef);
        dk.view_mut((d, 0), (d, d)).copy_from(&(-&id));
        dk.view_mut((d, d), (d, d)).copy_from(&(-dt * &id));
        diag.push(dk);
        lower.push(lower_block.clone());
        if k < n {
            upper.push(upper_block.clone());
        }
        let mut rk = DVector::<f64>::zeros(m);
        rk.rows_mut(0, d).copy_from(&forcing(k));
        rhs.push(rk);
    }

    // Row n: step-n velocity equation plus the terminal condition.
    let mut dn = DMatrix::<f64>::zeros(m, m);
    dn.view_mut((0, 0), (d, d)).copy_from(&(-&coupling));
    dn.view_mut((0, d), (d, d)).copy_from(&y_coef);
    dn.view_mut((d, 0), (d, d)).copy_from(&terminal);
    dn.view_mut((d, d), (d, d)).copy_from(&id);
    diag.push(dn);
    lower.push(lower_block);
    let mut rn = DVector::<f64>::zeros(m);
    rn.rows_mut(0, d).copy_from(&forcing(n));
    rhs.push(rn);

    let z = crate::linalg::solve_block_tridiag(&lower, &diag, &upper[..n], &rhs)
        .map_err(|block| SolverError::SingularSystem { block })?;

    let mut x = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n + 1);
    for zk in z {
        x.push(DVector::from(zk.rows(0, d).clone_owned()));
        y.push(DVector::from(zk.rows(d, d).clone_owned()));
    }
    Ok((x, y))
}

fn validate_e0(params: &MarketParams, e0: &DVector<f64>) -> Result<(), ParamError> {
    if e0.len() != params.dim() {
        return Err(ParamError::Dimension {
            what: "initial inventory",
            expected: params.dim(),
            got: e0.len(),
        });
    }
    if e0.iter().any(|x| !x.is_finite()) {
        return Err(ParamError::NotFinite {
            what: "initial inventory",
        });
    }
    Ok(())
}

/// Backward implicit-trapezoid integration of
/// `X' = -forcing(t) - 2 H V X`, `X(T) = 0` on the grid.
///
/// With `forcing = A_perm mu` this is the linear value-function
/// coefficient H_vec; the covariance decomposition reuses it with
/// per-component forcings. The implicit rule keeps the recursion stable
/// when `|H V|` is large (daily-volume scales), where an explicit step
/// would need substepping.
pub(crate) fn integrate_backward_linear(
    params: &MarketParams,
    grid: &TimeGrid,
    riccati: &RiccatiPath,
    forcing: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, SolverError> {
    let d = params.dim();
    let n = grid.n_steps();
    let dt = grid.dt();
    let v = params.liquidity_diag();

    // H V with V diagonal: scale columns of H by v.
    let hv = |k: usize| -> DMatrix<f64> {
        let mut m = riccati.at(k).clone();
        for (j, &vj) in v.iter().enumerate() {
            m.column_mut(j).scale_mut(vj);
        }
        m
    };

    let mut xs = vec![DVector::<f64>::zeros(d); n + 1];
    let mut hv_next = hv(n);
    for k in (0..n).rev() {
        let hv_k = hv(k);
        let mut rhs = xs[k + 1].clone();
        rhs += dt * (&hv_next * &xs[k + 1]);
        rhs += 0.5 * dt * (&forcing[k] + &forcing[k + 1]);
        let lhs = DMatrix::identity(d, d) - dt * &hv_k;
        xs[k] = lhs
            .lu()
            .solve(&rhs)
            .ok_or(SolverError::SingularSystem { block: k })?;
        hv_next = hv_k;
    }
    Ok(xs)
}

/// Linear value-function coefficient `H_vec` for a given aggregate speed.
fn integrate_linear_coefficient(
    params: &MarketParams,
    grid: &TimeGrid,
    riccati: &RiccatiPath,
    mu: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, SolverError> {
    let forcing: Vec<DVector<f64>> = mu
        .iter()
        .map(|m| {
            DVector::from_iterator(
                params.dim(),
                m.iter().zip(params.alpha.iter()).map(|(&mi, &ai)| ai * mi),
            )
        })
        .collect();
    integrate_backward_linear(params, grid, riccati, &forcing)
}

/// Trapezoid quadrature of `h' = -V H_vec . H_vec`, `h(T) = 0`.
fn integrate_constant_term(
    params: &MarketParams,
    grid: &TimeGrid,
    hs: &[DVector<f64>],
) -> Vec<f64> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let v = params.liquidity_diag();
    let g = |k: usize| -> f64 {
        hs[k]
            .iter()
            .zip(v.iter())
            .map(|(&x, &vi)| vi * x * x)
            .sum()
    };
    let mut h = vec![0.0; n + 1];
    let mut g_next = g(n);
    for k in (0..n).rev() {
        let g_k = g(k);
        h[k] = h[k + 1] + 0.5 * dt * (g_k + g_next);
        g_next = g_k;
    }
    h
}

/// Solve the identical-preferences mean field for initial mean inventory `e0`.
pub fn solve_mean_field_identical(
    params: &MarketParams,
    e0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<MeanFieldSolution, SolverError> {
    validate_e0(params, e0)?;
    let (x, y) = solve_linear_bvp(
        params,
        grid,
        params.gamma,
        &params.a_term,
        e0,
        Friction::SelfConsistent,
    )?;
    let riccati = solve_riccati_with(params, grid, params.gamma, &params.a_term)?;
    let hs = integrate_linear_coefficient(params, grid, &riccati, &y)?;
    let h = integrate_constant_term(params, grid, &hs);
    Ok(MeanFieldSolution {
        grid: *grid,
        e: x,
        edot: y.clone(),
        mu: y,
        hs,
        h,
        riccati,
        gamma: params.gamma,
        a_term: params.a_term.clone(),
    })
}

/// Raw boundary-value solve without the value-function coefficients;
/// used where only (E, E') paths are needed (basis solves of the
/// covariance predictor).
pub(crate) fn solve_identical_bvp_raw(
    params: &MarketParams,
    e0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>), SolverError> {
    validate_e0(params, e0)?;
    solve_linear_bvp(
        params,
        grid,
        params.gamma,
        &params.a_term,
        e0,
        Friction::SelfConsistent,
    )
}

fn validate_classes(params: &MarketParams, classes: &[AgentClass]) -> Result<(), ParamError> {
    let d = params.dim();
    let sum: f64 = classes.iter().map(|c| c.weight).sum();
    if (sum - 1.0).abs() > 1e-10 {
        return Err(ParamError::WeightsNotNormalized { sum });
    }
    for c in classes {
        if c.gamma < 0.0 || !c.gamma.is_finite() {
            return Err(ParamError::Negative {
                what: "class gamma",
                index: 0,
                value: c.gamma,
            });
        }
        if c.a_term.len() != d || c.e0.len() != d {
            return Err(ParamError::Dimension {
                what: "class vectors",
                expected: d,
                got: c.a_term.len(),
            });
        }
        for (i, &a) in c.a_term.iter().enumerate() {
            if !(a > 0.0) {
                return Err(ParamError::NotPositive {
                    what: "class a_term",
                    index: i,
                    value: a,
                });
            }
        }
    }
    Ok(())
}

/// Solve the heterogeneous mean field by damped Picard iteration on the
/// aggregate speed.
///
/// Each iteration solves one boundary value problem per class with the
/// current aggregate as exogenous forcing and re-aggregates. The damping
/// factor halves automatically whenever the sup-norm update grows; three
/// consecutive growths abort with [`SolverError::Divergence`].
pub fn solve_mean_field_heterogeneous(
    params: &MarketParams,
    classes: &[AgentClass],
    grid: &TimeGrid,
    opts: FixedPointOptions,
) -> Result<HeterogeneousSolution, SolverError> {
    validate_classes(params, classes)?;
    let d = params.dim();
    let n = grid.n_steps();

    let solve_classes =
        |mu: &[DVector<f64>]| -> Result<Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)>, SolverError> {
            classes
                .iter()
                .map(|c| {
                    solve_linear_bvp(params, grid, c.gamma, &c.a_term, &c.e0, Friction::Exogenous(mu))
                })
                .collect()
        };
    let aggregate = |sols: &[(Vec<DVector<f64>>, Vec<DVector<f64>>)]| -> Vec<DVector<f64>> {
        (0..=n)
            .map(|k| {
                let mut acc = DVector::<f64>::zeros(d);
                for (c, (_, y)) in classes.iter().zip(sols.iter()) {
                    acc.axpy(c.weight, &y[k], 1.0);
                }
                acc
            })
            .collect()
    };

    let mut mu: Vec<DVector<f64>> = vec![DVector::zeros(d); n + 1];
    let mut residuals: Vec<f64> = Vec::new();
    let mut damping = opts.damping;
    let mut growths = 0usize;
    let decoupled = params.alpha_norm() == 0.0;

    let mut iterations = 0usize;
    loop {
        iterations += 1;
        let sols = solve_classes(&mu)?;
        let target = aggregate(&sols);
        let mut residual = 0.0f64;
        for k in 0..=n {
            for i in 0..d {
                residual = residual.max((target[k][i] - mu[k][i]).abs() * damping);
            }
        }
        for k in 0..=n {
            let updated = (1.0 - damping) * &mu[k] + damping * &target[k];
            mu[k] = updated;
        }
        residuals.push(residual);

        let converged = residual <= opts.tol || decoupled;
        if converged {
            // Final consistent pass: every stored class solution is the
            // exact response to the returned aggregate.
            let sols = solve_classes(&mu)?;
            let aggregate_mu = aggregate(&sols);
            let mut class_solutions = Vec::with_capacity(classes.len());
            for (c, (x, y)) in classes.iter().zip(sols.into_iter()) {
                let riccati = solve_riccati_with(params, grid, c.gamma, &c.a_term)?;
                let hs = integrate_linear_coefficient(params, grid, &riccati, &aggregate_mu)?;
                let h = integrate_constant_term(params, grid, &hs);
                class_solutions.push(MeanFieldSolution {
                    grid: *grid,
                    e: x,
                    edot: y,
                    mu: aggregate_mu.clone(),
                    hs,
                    h,
                    riccati,
                    gamma: c.gamma,
                    a_term: c.a_term.clone(),
                });
            }
            return Ok(HeterogeneousSolution {
                classes: class_solutions,
                aggregate_mu,
                residuals,
                iterations,
                final_damping: damping,
            });
        }

        if residuals.len() >= 2 {
            let last = residuals[residuals.len() - 1];
            let prev = residuals[residuals.len() - 2];
            if last > prev {
                growths += 1;
                damping *= 0.5;
                if growths >= 3 {
                    return Err(SolverError::Divergence {
                        alpha_norm: params.alpha_norm(),
                        residuals,
                    });
                }
            } else {
                growths = 0;
            }
        }
        if iterations >= opts.max_iter {
            return Err(SolverError::NoConvergence {
                max_iter: opts.max_iter,
                residual: *residuals.last().unwrap(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::MarketParams;
    use nalgebra::{DMatrix, DVector};

    fn params_1d(gamma: f64, alpha: f64, v: f64, eta: f64, a: f64) -> MarketParams {
        MarketParams::new(
            DVector::from_row_slice(&[0.3]),
            DMatrix::identity(1, 1),
            DVector::from_row_slice(&[v]),
            DVector::from_row_slice(&[eta]),
            DVector::from_row_slice(&[alpha]),
            DVector::from_row_slice(&[a]),
            gamma,
            1.0,
        )
        .unwrap()
    }

    /// Contraction-friendly two-asset market: moderate liquidity matrix,
    /// paper-scale permanent impact.
    fn params_2d_moderate(alpha: f64, gamma: f64) -> MarketParams {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        MarketParams::new(
            DVector::from_row_slice(&[0.3, 1.0]),
            corr,
            DVector::from_row_slice(&[5e3, 4e3]),
            DVector::from_row_slice(&[1.0, 1.0]),
            DVector::from_row_slice(&[alpha, alpha]),
            DVector::from_row_slice(&[2.5, 2.5]),
            gamma,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn frictionless_riskless_solution_is_linear() {
        // alpha = 0, gamma = 0: E(t) = E0 + b t with
        // b = -4 V A E0 / (1 + 4 V A T); the scheme reproduces it exactly.
        let p = params_1d(0.0, 0.0, 2e6, 0.1, 2.5);
        let grid = TimeGrid::new(200, 1.0).unwrap();
        let e0 = 1.0e5;
        let sol = solve_mean_field_identical(&p, &DVector::from_row_slice(&[e0]), &grid).unwrap();
        let va = 5e6 * 2.5;
        let b = -4.0 * va * e0 / (1.0 + 4.0 * va);
        let mut worst = 0.0f64;
        for k in 0..=grid.n_steps() {
            let expect = e0 + b * grid.node(k);
            worst = worst.max((sol.e[k][0] - expect).abs());
        }
        assert!(worst <= 1e-8 * e0.abs(), "sup error {worst:.3e}");
        assert!(sol.boundary_residual(&p) <= 1e-8 * (1.0 + e0.abs()));
    }

    #[test]
    fn zero_initial_inventory_is_inert() {
        let p = params_2d_moderate(8e-4, 1e-3);
        let grid = TimeGrid::new(100, 1.0).unwrap();
        let sol = solve_mean_field_identical(&p, &DVector::zeros(2), &grid).unwrap();
        for k in 0..=grid.n_steps() {
            assert_eq!(sol.e[k].norm(), 0.0);
            assert_eq!(sol.mu[k].norm(), 0.0);
            assert_eq!(sol.hs[k].norm(), 0.0);
        }
    }

    #[test]
    fn identical_mu_equals_edot() {
        let p = params_2d_moderate(8e-4, 5e-4);
        let grid = TimeGrid::new(64, 1.0).unwrap();
        let sol =
            solve_mean_field_identical(&p, &DVector::from_row_slice(&[120.0, -40.0]), &grid)
                .unwrap();
        for k in 0..=grid.n_steps() {
            assert_eq!(sol.mu[k], sol.edot[k]);
        }
    }

    #[test]
    fn solution_is_linear_in_e0() {
        let p = params_2d_moderate(8e-4, 1e-3);
        let grid = TimeGrid::new(80, 1.0).unwrap();
        let e0a = DVector::from_row_slice(&[100.0, -30.0]);
        let e0b = DVector::from_row_slice(&[-20.0, 75.0]);
        let (a, b) = (0.7, -1.3);
        let combo = a * &e0a + b * &e0b;
        let sa = solve_mean_field_identical(&p, &e0a, &grid).unwrap();
        let sb = solve_mean_field_identical(&p, &e0b, &grid).unwrap();
        let sc = solve_mean_field_identical(&p, &combo, &grid).unwrap();
        let scale = combo.norm().max(1.0);
        for k in 0..=grid.n_steps() {
            let lin_e = a * &sa.e[k] + b * &sb.e[k];
            let lin_mu = a * &sa.mu[k] + b * &sb.mu[k];
            assert!((&sc.e[k] - lin_e).norm() <= 1e-9 * scale);
            assert!((&sc.mu[k] - lin_mu).norm() <= 1e-7 * scale);
        }
    }

    #[test]
    fn block_diagonal_market_decouples() {
        let p2 = MarketParams::new(
            DVector::from_row_slice(&[0.3, 0.8]),
            DMatrix::identity(2, 2),
            DVector::from_row_slice(&[5e3, 2e4]),
            DVector::from_row_slice(&[1.0, 0.5]),
            DVector::from_row_slice(&[8e-4, 5e-4]),
            DVector::from_row_slice(&[2.5, 1.0]),
            2e-3,
            1.0,
        )
        .unwrap();
        let grid = TimeGrid::new(128, 1.0).unwrap();
        let sol2 = solve_mean_field_identical(
            &p2,
            &DVector::from_row_slice(&[100.0, -55.0]),
            &grid,
        )
        .unwrap();

        let assets = [(0.3, 5e3, 1.0, 8e-4, 2.5, 100.0), (0.8, 2e4, 0.5, 5e-4, 1.0, -55.0)];
        for (i, (sigma, v, eta, alpha, a, e0)) in assets.into_iter().enumerate() {
            let p1 = MarketParams::new(
                DVector::from_row_slice(&[sigma]),
                DMatrix::identity(1, 1),
                DVector::from_row_slice(&[v]),
                DVector::from_row_slice(&[eta]),
                DVector::from_row_slice(&[alpha]),
                DVector::from_row_slice(&[a]),
                2e-3,
                1.0,
            )
            .unwrap();
            let sol1 =
                solve_mean_field_identical(&p1, &DVector::from_row_slice(&[e0]), &grid).unwrap();
            for k in 0..=grid.n_steps() {
                assert!((sol2.e[k][i] - sol1.e[k][0]).abs() < 1e-9 * e0.abs());
            }
        }
    }

    #[test]
    fn scheme_converges_at_first_order() {
        let p = params_2d_moderate(8e-4, 2e-3);
        let e0 = DVector::from_row_slice(&[100.0, -60.0]);
        let sup_diff = |n1: usize, n2: usize| -> f64 {
            let g1 = TimeGrid::new(n1, 1.0).unwrap();
            let g2 = TimeGrid::new(n2, 1.0).unwrap();
            let s1 = solve_mean_field_identical(&p, &e0, &g1).unwrap();
            let s2 = solve_mean_field_identical(&p, &e0, &g2).unwrap();
            let stride = n2 / n1;
            (0..=n1)
                .map(|k| (&s1.e[k] - &s2.e[stride * k]).amax())
                .fold(0.0f64, f64::max)
        };
        let d1 = sup_diff(100, 200);
        let d2 = sup_diff(200, 400);
        let order = (d1 / d2).log2();
        assert!(order >= 0.9, "empirical order {order:.2} (d1={d1:.3e}, d2={d2:.3e})");
    }

    #[test]
    fn boundary_residual_small_across_parameter_sets() {
        let grid = TimeGrid::new(150, 1.0).unwrap();
        for (gamma, alpha, v, eta, a, e0) in [
            (0.0, 0.0, 2e6, 0.1, 2.5, 1e5),
            (5e-5, 8e-4, 2e6, 0.1, 2.5, 1e5),
            (5e-2, 8e-4, 5e6, 0.1, 2.5, 5e4),
            (1e-3, 0.0, 1e4, 0.4, 10.0, -3e4),
            (0.0, 5e-4, 5e3, 1.0, 1.0, 250.0),
        ] {
            let p = params_1d(gamma, alpha, v, eta, a);
            let sol =
                solve_mean_field_identical(&p, &DVector::from_row_slice(&[e0]), &grid).unwrap();
            let res = sol.boundary_residual(&p);
            assert!(
                res <= 1e-8 * (1.0 + e0.abs()),
                "residual {res:.3e} at gamma={gamma}, alpha={alpha}"
            );
        }
    }

    #[test]
    fn single_class_matches_identical_solver() {
        let p = params_2d_moderate(8e-4, 1e-3);
        let grid = TimeGrid::new(120, 1.0).unwrap();
        let e0 = DVector::from_row_slice(&[80.0, -40.0]);
        let ident = solve_mean_field_identical(&p, &e0, &grid).unwrap();
        let class = AgentClass {
            weight: 1.0,
            gamma: p.gamma,
            a_term: p.a_term.clone(),
            e0: e0.clone(),
        };
        let het = solve_mean_field_heterogeneous(
            &p,
            &[class],
            &grid,
            FixedPointOptions {
                tol: 1e-14,
                ..Default::default()
            },
        )
        .unwrap();
        let mut worst = 0.0f64;
        for k in 0..=grid.n_steps() {
            worst = worst.max((&het.classes[0].e[k] - &ident.e[k]).amax());
            worst = worst.max((&het.aggregate_mu[k] - &ident.mu[k]).amax());
        }
        assert!(worst <= 1e-10, "sup deviation {worst:.3e}");
    }

    #[test]
    fn decoupled_classes_solve_in_one_pass() {
        let p = params_2d_moderate(0.0, 1e-3);
        let grid = TimeGrid::new(60, 1.0).unwrap();
        let classes = [
            AgentClass {
                weight: 0.6,
                gamma: 2e-3,
                a_term: DVector::from_row_slice(&[2.5, 2.5]),
                e0: DVector::from_row_slice(&[50.0, 0.0]),
            },
            AgentClass {
                weight: 0.4,
                gamma: 5e-4,
                a_term: DVector::from_row_slice(&[1.0, 3.0]),
                e0: DVector::from_row_slice(&[-20.0, 30.0]),
            },
        ];
        let het =
            solve_mean_field_heterogeneous(&p, &classes, &grid, FixedPointOptions::default())
                .unwrap();
        assert_eq!(het.iterations, 1);
        // With alpha = 0 each class is exactly its own identical-preferences game.
        for c in &classes {
            let mut p_c = p.clone();
            p_c.gamma = c.gamma;
            p_c.a_term = c.a_term.clone();
            let solo = solve_mean_field_identical(&p_c, &c.e0, &grid).unwrap();
            let idx = if c.weight == 0.6 { 0 } else { 1 };
            for k in 0..=grid.n_steps() {
                assert!((&het.classes[idx].e[k] - &solo.e[k]).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn two_class_iteration_contracts_geometrically() {
        let p = params_2d_moderate(8e-4, 1e-3);
        let grid = TimeGrid::new(100, 1.0).unwrap();
        let classes = [
            AgentClass {
                weight: 0.6,
                gamma: 2e-3,
                a_term: DVector::from_row_slice(&[2.5, 2.5]),
                e0: DVector::from_row_slice(&[80.0, -40.0]),
            },
            AgentClass {
                weight: 0.4,
                gamma: 2e-4,
                a_term: DVector::from_row_slice(&[1.5, 3.0]),
                e0: DVector::from_row_slice(&[-20.0, 60.0]),
            },
        ];
        let het = solve_mean_field_heterogeneous(
            &p,
            &classes,
            &grid,
            FixedPointOptions {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(het.iterations <= 50, "needed {} iterations", het.iterations);
        // Geometric decay above the rounding floor.
        for w in het.residuals.windows(2).skip(1) {
            if w[0] > 1e-10 {
                assert!(
                    w[1] <= 0.9 * w[0],
                    "residuals not geometric: {:?}",
                    het.residuals
                );
            }
        }
    }

    #[test]
    fn divergence_detected_at_daily_volume_scale() {
        // At V/eta ~ 2e7 the Picard loop gain is ~ 2 V alpha T / (2 pi) >> 1;
        // the iteration must detect this and report, not spin.
        let p = params_1d(5e-5, 8e-4, 2e6, 0.1, 2.5);
        let grid = TimeGrid::new(50, 1.0).unwrap();
        let classes = [
            AgentClass {
                weight: 0.5,
                gamma: 5e-5,
                a_term: DVector::from_row_slice(&[2.5]),
                e0: DVector::from_row_slice(&[1e5]),
            },
            AgentClass {
                weight: 0.5,
                gamma: 1e-4,
                a_term: DVector::from_row_slice(&[2.5]),
                e0: DVector::from_row_slice(&[-5e4]),
            },
        ];
        let res = solve_mean_field_heterogeneous(&p, &classes, &grid, FixedPointOptions::default());
        match res {
            Err(SolverError::Divergence { residuals, .. }) => {
                assert!(residuals.len() >= 3);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
