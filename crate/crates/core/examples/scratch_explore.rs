use crowdtrade::calibration::*;
use nalgebra::DMatrix;

fn main() {
    let level = 2e-3;
    let obs: Vec<DMatrix<f64>> = (0..20)
        .map(|_| DMatrix::from_row_slice(2, 2, &[level, 0.0, 0.0, level]))
        .collect();
    let cfg = CalibrationConfig {
        a_term: 10.0,
        fundamental_fraction: 0.2,
        shift_fraction: 0.0,
        bounds: SearchBounds { k: (1e3, 1e7), gamma: (1e-6, 1.0), gamma_cov: (0.0, 1e10) },
        restarts: 2,
        max_evals_per_restart: 600,
        seed: 11,
        solver_steps: 100,
        horizon: 1.0,
        bin_length: 0.05,
        observed: obs.clone(),
        alpha_hat: vec![5e-4, 5e-4],
        e0_corr: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
    };
    let problem = CalibrationProblem::new(cfg.clone()).unwrap();
    let res = calibrate(cfg).unwrap();
    let at_zero = problem.objective(&res.k, res.gamma, &[0.0, 0.0]);
    let flat_mismatch = 2.0 * 20.0 * (0.8f64 * level).powi(2);
    println!("residual {:.6e}, at_zero {:.6e}, flat mismatch {:.6e}", res.residual_l2, at_zero, flat_mismatch);
    println!("k = {:?}, gamma = {:.3e}, Gdiag = {:?}", res.k, res.gamma, res.gamma_cov_diag);
}
