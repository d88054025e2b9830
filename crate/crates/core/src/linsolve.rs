//! Jacobi-preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::operators::SparseMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `‖Ax - b‖₂` of the returned iterate.
    pub final_residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Relative residual target `‖Ax - b‖ <= tol ‖b‖`.
    pub tol: f64,
    /// Defaults to `10 · n` when `None`.
    pub max_iter: Option<usize>,
    /// Treat `A` as a pure Neumann operator with the constants as kernel:
    /// the right side must have zero sum and the solution is returned with
    /// zero mean.
    pub neumann_kernel: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { tol: DEFAULT_TOL, max_iter: None, neumann_kernel: false }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Solves `A x = b`. Non-convergence yields `Ok` with `converged = false`;
/// use [`cg_solve_checked`] to turn it into an error.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], opts: &CgOptions) -> Result<(Vec<f64>, SolveStats)> {
    cg_solve_from(a, b, None, opts)
}

/// As [`cg_solve`] with an optional initial guess.
pub fn cg_solve_from(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Shape { expected: n, got: b.len() });
    }
    let bnorm = norm(b);
    if opts.neumann_kernel {
        let mean = b.iter().sum::<f64>() / n as f64;
        if mean.abs() > 1e-12 * (bnorm / (n as f64).sqrt()).max(1e-300) {
            return Err(Error::Inconsistent(mean));
        }
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    if opts.neumann_kernel {
        remove_mean(&mut x);
    }
    if bnorm == 0.0 && x0.is_none() {
        return Ok((x, SolveStats { iterations: 0, final_residual: 0.0, converged: true }));
    }
    let target = opts.tol * bnorm;
    let precondition = |r: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        if opts.neumann_kernel {
            remove_mean(&mut z);
        }
        z
    };
    let residual = |x: &[f64]| -> Vec<f64> {
        let mut r: Vec<f64> = a.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        if opts.neumann_kernel {
            remove_mean(&mut r);
        }
        r
    };
    let mut ap = vec![0.0; n];
    let mut it = 0;
    let mut r = residual(&x);
    let mut rnorm = norm(&r);
    // restarts only when the recursive residual drifts from the true one
    for _restart in 0..4 {
        if rnorm <= target || it >= max_iter {
            break;
        }
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while it < max_iter {
            it += 1;
            a.mul_vec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= target {
                break;
            }
            z = precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if opts.neumann_kernel {
            remove_mean(&mut x);
        }
        r = residual(&x);
        rnorm = norm(&r);
    }
    Ok((x, SolveStats { iterations: it, final_residual: rnorm, converged: rnorm <= target }))
}

/// As [`cg_solve_from`], but non-convergence is an error.
pub fn cg_solve_checked(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let (x, stats) = cg_solve_from(a, b, x0, opts)?;
    if !stats.converged {
        return Err(Error::LinearSolve { iterations: stats.iterations, residual: stats.final_residual });
    }
    Ok((x, stats))
}
