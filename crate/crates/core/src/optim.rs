//! Derivative-free simplex minimization (Nelder-Mead) with standard
//! coefficients. Bounds are the caller's business (transform or penalty);
//! the search itself is unconstrained.

/// Options of one simplex run.
#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when the simplex function spread falls below
    /// `ftol_rel * (|f_best| + ftol_rel)`.
    pub ftol_rel: f64,
    /// Stop when every vertex is within this distance of the best vertex.
    pub xtol_abs: f64,
    /// Initial displacement per coordinate.
    pub init_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            ftol_rel: 1e-12,
            xtol_abs: 1e-10,
            init_step: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub evals: usize,
    pub converged: bool,
    /// Best objective seen after each accepted iteration; non-increasing.
    pub best_trace: Vec<f64>,
}

fn ordered_insert(simplex: &mut Vec<(Vec<f64>, f64)>, vertex: (Vec<f64>, f64)) {
    let pos = simplex
        .binary_search_by(|probe| probe.1.partial_cmp(&vertex.1).unwrap_or(std::cmp::Ordering::Less))
        .unwrap_or_else(|e| e);
    simplex.insert(pos, vertex);
}

/// Minimize `f` starting from `x0`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    assert!(n >= 1);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Initial simplex: x0 plus one displaced vertex per coordinate.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for j in 0..n {
        let mut x = x0.to_vec();
        x[j] += opts.init_step;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let mut best_trace = vec![simplex[0].1];

    while evals < opts.max_evals {
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() <= opts.ftol_rel * (simplex[0].1.abs() + opts.ftol_rel) {
            let diam = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(simplex[0].0.iter())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .fold(0.0f64, f64::max);
            if diam <= opts.xtol_abs || spread == 0.0 {
                return SimplexResult {
                    x: simplex[0].0.clone(),
                    fmin: simplex[0].1,
                    evals,
                    converged: true,
                    best_trace,
                };
            }
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0f64; n];
        for (x, _) in simplex.iter().take(n) {
            for j in 0..n {
                centroid[j] += x[j];
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }
        let worst = simplex.pop().expect("nonempty simplex");

        let blend = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + t * (centroid[j] - worst.0[j]))
                .collect()
        };

        let reflected = blend(1.0);
        let f_reflected = eval(&reflected, &mut evals);
        if f_reflected < simplex[0].1 {
            // Try to expand.
            let expanded = blend(2.0);
            let f_expanded = eval(&expanded, &mut evals);
            if f_expanded < f_reflected {
                ordered_insert(&mut simplex, (expanded, f_expanded));
            } else {
                ordered_insert(&mut simplex, (reflected, f_reflected));
            }
        } else if f_reflected < simplex[n - 1].1 {
            ordered_insert(&mut simplex, (reflected, f_reflected));
        } else {
            // Contract, outside or inside.
            let (contracted, f_contracted) = if f_reflected < worst.1 {
                let x = blend(0.5);
                let fx = eval(&x, &mut evals);
                (x, fx)
            } else {
                let x = blend(-0.5);
                let fx = eval(&x, &mut evals);
                (x, fx)
            };
            if f_contracted < worst.1.min(f_reflected) {
                ordered_insert(&mut simplex, (contracted, f_contracted));
            } else {
                // Shrink toward the best vertex.
                simplex.push(worst);
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    for j in 0..n {
                        vertex.0[j] = best[j] + 0.5 * (vertex.0[j] - best[j]);
                    }
                    vertex.1 = eval(&vertex.0, &mut evals);
                }
                simplex.sort_by(|a, b| {
                    a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal)
                });
            }
        }
        best_trace.push(simplex[0].1);
    }

    SimplexResult {
        x: simplex[0].0.clone(),
        fmin: simplex[0].1,
        evals,
        converged: false,
        best_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic_bowl() {
        let res = nelder_mead(
            |x| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &SimplexOptions::default(),
        );
        assert!(res.converged);
        assert!((res.x[0] - 1.5).abs() < 1e-6);
        assert!((res.x[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let res = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &SimplexOptions {
                max_evals: 5000,
                ..Default::default()
            },
        );
        assert!((res.x[0] - 1.0).abs() < 1e-4, "{:?}", res.x);
        assert!((res.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn best_trace_is_monotone() {
        let res = nelder_mead(
            |x| x[0].powi(4) + (x[1] - 2.0).powi(2) + (x[0] * x[1]).sin(),
            &[2.0, -1.0],
            &SimplexOptions::default(),
        );
        for w in res.best_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
