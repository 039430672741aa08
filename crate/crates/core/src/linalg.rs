//! Small dense linear-algebra helpers: pivoted Cholesky with minor
//! reporting, symmetric PSD square roots, and a block-tridiagonal solver
//! used by the boundary value systems.

use nalgebra::{DMatrix, DVector};

use crate::error::ParamError;

/// Replace `m` by its symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Maximum absolute deviation from symmetry.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky factorization that reports which leading minor fails.
///
/// Returns the lower factor `L` with `L L^T = m`, or the 1-based order of
/// the first non-positive leading minor.
pub fn cholesky_checked(m: &DMatrix<f64>) -> Result<DMatrix<f64>, ParamError> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(ParamError::NotPositiveDefinite { order: j + 1 });
        }
        let root = diag.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = sum / root;
        }
    }
    Ok(l)
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues below `-tol * max_eig` are rejected; small negative values
/// from rounding are clamped to zero. The result `S` satisfies
/// `S S^T = m` up to the clamping.
pub fn psd_sqrt(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, ParamError> {
    let sym = m.clone().symmetric_eigen();
    let max_eig = sym.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = -tol * max_eig.max(1.0);
    let mut roots = sym.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < floor {
            return Err(ParamError::NotPositiveDefinite { order: m.nrows() });
        }
        *v = v.max(0.0).sqrt();
    }
    let scaled = &sym.eigenvectors * DMatrix::from_diagonal(&roots);
    Ok(scaled * sym.eigenvectors.transpose())
}

/// Solve a block-tridiagonal system by block Thomas elimination.
///
/// Row `k` of the system reads
/// `lower[k-1] z_{k-1} + diag[k] z_k + upper[k] z_{k+1} = rhs[k]`,
/// with `lower` and `upper` one entry shorter than `diag`. Pivoting is
/// confined to the diagonal blocks (LU with partial pivoting per block),
/// which is adequate for the well-conditioned boundary value systems
/// assembled in this crate.
pub fn solve_block_tridiag(
    lower: &[DMatrix<f64>],
    diag: &[DMatrix<f64>],
    upper: &[DMatrix<f64>],
    rhs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, usize> {
    let n = diag.len();
    assert!(n > 0, "empty block system");
    assert_eq!(lower.len(), n - 1);
    assert_eq!(upper.len(), n - 1);
    assert_eq!(rhs.len(), n);

    // Forward sweep: x_mod[k] = Dhat_k^{-1} upper[k], y[k] = Dhat_k^{-1} rhat_k.
    let mut x_mod: Vec<DMatrix<f64>> = Vec::with_capacity(n - 1);
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);

    let mut dhat = diag[0].clone();
    let mut rhat = rhs[0].clone();
    for k in 0..n {
        let lu = dhat.clone().lu();
        let yk = lu.solve(&rhat).ok_or(k)?;
        if k + 1 < n {
            let xk = lu.solve(&upper[k]).ok_or(k)?;
            dhat = &diag[k + 1] - &lower[k] * &xk;
            rhat = &rhs[k + 1] - &lower[k] * &yk;
            x_mod.push(xk);
        }
        y.push(yk);
    }

    // Back substitution.
    let mut z = y;
    for k in (0..n - 1).rev() {
        let correction = &x_mod[k] * &z[k + 1];
        z[k] -= correction;
    }
    Ok(z)
}
