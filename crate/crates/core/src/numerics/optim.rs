//! Nelder–Mead simplex minimization.

use crate::error::{MimosaError, Result};

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Stop when the spread of function values across the simplex drops below this.
    pub tol: f64,
    pub max_evals: usize,
    /// Edge length of the initial simplex along each coordinate axis.
    pub initial_step: f64,
    /// Number of times the search is restarted from the best vertex after converging.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { tol: 1e-8, max_evals: 2000, initial_step: 0.1, restarts: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub argmin: Vec<f64>,
    pub fmin: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with the default options except for `tol` and `max_evals`.
pub fn nelder_mead_minimize<F>(f: F, x0: &[f64], tol: f64, max_evals: usize) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let opts = NelderMeadOptions { tol, max_evals, ..Default::default() };
    nelder_mead(f, x0, &opts)
}

/// Nelder–Mead with dimension-adaptive coefficients (Gao & Han).
///
/// Non-finite objective values are treated as `+∞`. The returned point never
/// has a larger objective than `x0`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(MimosaError::Initialization("cannot optimize a zero-dimensional objective".into()));
    }
    if !(opts.tol > 0.0) || opts.max_evals == 0 {
        return Err(MimosaError::Initialization("tolerance and evaluation budget must be positive".into()));
    }
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(MimosaError::Initialization(format!("objective is not finite at the starting point ({f0})")));
    }
    let mut evals = 1;
    let mut best = (x0.to_vec(), f0);
    let mut converged = false;

    for _ in 0..=opts.restarts {
        let before = best.1;
        let (x, fx, ok) = simplex_search(&mut f, &best.0, best.1, opts, &mut evals);
        if fx <= best.1 {
            best = (x, fx);
        }
        converged = ok;
        if !ok || evals >= opts.max_evals || before - best.1 < opts.tol {
            break;
        }
    }
    Ok(Minimum { argmin: best.0, fmin: best.1, evaluations: evals, converged })
}

fn simplex_search<F>(
    f: &mut F,
    x0: &[f64],
    f0: f64,
    opts: &NelderMeadOptions,
    evals: &mut usize,
) -> (Vec<f64>, f64, bool)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let (alpha, gamma, rho, sigma) = if n == 1 { (1.0, 2.0, 0.5, 0.5) } else { (alpha, gamma, rho, sigma) };

    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let fx = eval(&x, evals);
        simplex.push((x, fx));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.is_finite() && spread < opts.tol {
            let (x, fx) = simplex.swap_remove(0);
            return (x, fx, true);
        }
        if *evals >= opts.max_evals {
            let (x, fx) = simplex.swap_remove(0);
            return (x, fx, false);
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr, evals);
        if fr < simplex[0].1 {
            let xe = along(alpha * gamma);
            let fe = eval(&xe, evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(alpha * rho);
            let fc = eval(&xc, evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, evals);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + sigma * (v - b)).collect();
            let fx = eval(&x, evals);
            *vertex = (x, fx);
        }
    }
}
