//! Symmetric Lanczos with full reorthogonalization and explicit deflation.
//!
//! Used for blocks too large for a dense eigensolve. Each call returns one
//! extremal eigenpair of the operator restricted to the orthogonal
//! complement of the supplied deflation vectors; degenerate eigenspaces are
//! counted by calling repeatedly and deflating what has converged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{axpy_neg, dot, norm, LinearOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremal {
    Largest,
    Smallest,
}

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    /// Krylov dimension before an explicit restart.
    pub max_basis: usize,
    pub max_restarts: usize,
    /// Required residual `‖A x - θ x‖` of the returned pair.
    pub tol: f64,
    pub check_every: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_basis: 300,
            max_restarts: 20,
            tol: 1e-8,
            check_every: 8,
            seed: 0x5eed_1a2c_0f5d_0001,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(b, v);
        axpy_neg(c, b, v);
    }
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = alpha[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..alpha.len() {
        let denom = if q == 0.0 {
            f64::EPSILON * (beta[i - 1].abs() + 1.0)
        } else {
            q
        };
        q = alpha[i] - x - beta[i - 1] * beta[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue and its eigenvector for a symmetric tridiagonal matrix.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let radius = |i: usize| {
        let left = if i > 0 { beta[i - 1].abs() } else { 0.0 };
        let right = if i + 1 < m { beta[i].abs() } else { 0.0 };
        left + right
    };
    let mut lo = (0..m)
        .map(|i| alpha[i] - radius(i))
        .fold(f64::INFINITY, f64::min);
    let mut hi = (0..m)
        .map(|i| alpha[i] + radius(i))
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = lo.abs().max(hi.abs()).max(1e-300);
    // Bisection for the top eigenvalue: count(x) == m iff x above every eigenvalue.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sturm_count(alpha, beta, mid) == m {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * scale {
            break;
        }
    }
    let theta = hi;
    // Inverse iteration on the positive semidefinite (shift*I - T).
    let shift = theta + 8.0 * f64::EPSILON * scale;
    let mut y = vec![1.0 / (m as f64).sqrt(); m];
    for _ in 0..3 {
        // Thomas algorithm for (shift - alpha_i) on the diagonal, -beta off it.
        let mut diag: Vec<f64> = alpha.iter().map(|a| shift - a).collect();
        let mut rhs = y.clone();
        for i in 1..m {
            let piv = if diag[i - 1].abs() < 1e-300 {
                1e-300
            } else {
                diag[i - 1]
            };
            let factor = -beta[i - 1] / piv;
            diag[i] -= factor * -beta[i - 1];
            rhs[i] -= factor * rhs[i - 1];
        }
        let mut x = vec![0.0; m];
        let last = if diag[m - 1].abs() < 1e-300 {
            1e-300
        } else {
            diag[m - 1]
        };
        x[m - 1] = rhs[m - 1] / last;
        for i in (0..m - 1).rev() {
            let piv = if diag[i].abs() < 1e-300 {
                1e-300
            } else {
                diag[i]
            };
            x[i] = (rhs[i] + beta[i] * x[i + 1]) / piv;
        }
        let nx = norm(&x);
        y = x.into_iter().map(|v| v / nx).collect();
    }
    (theta, y)
}

/// One extremal eigenpair of `op` on the orthogonal complement of `deflate`.
///
/// `deflate` must be orthonormal. The returned vector is orthogonal to it.
pub fn extremal_eigenpair(
    op: &dyn LinearOperator,
    which: Extremal,
    deflate: &[Vec<f64>],
    opts: &LanczosOptions,
) -> Result<EigenPair> {
    let n = op.dim();
    if deflate.len() >= n {
        return Err(Error::InvalidArgument(
            "deflation set spans the whole space".into(),
        ));
    }
    let sign = match which {
        Extremal::Largest => 1.0,
        Extremal::Smallest => -1.0,
    };
    // Operator seen by the iteration: sign * P A P with P the complement projector.
    let apply = |x: &[f64], y: &mut [f64]| {
        op.apply(x, y);
        project_out(y, deflate);
        if sign < 0.0 {
            y.iter_mut().for_each(|v| *v = -*v);
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(
        opts.seed ^ (deflate.len() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    );
    let mut start: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut total_iters = 0;
    let mut last_residual = f64::INFINITY;
    let max_basis = opts.max_basis.min(n - deflate.len()).max(1);

    for _restart in 0..=opts.max_restarts {
        project_out(&mut start, deflate);
        project_out(&mut start, deflate);
        let s = norm(&start);
        if s == 0.0 {
            return Err(Error::InvalidArgument(
                "start vector vanished after deflation".into(),
            ));
        }
        start.iter_mut().for_each(|v| *v /= s);

        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![0.0; n];
        let mut best: Option<(f64, Vec<f64>)> = None;

        loop {
            let j = basis.len() - 1;
            apply(&basis[j], &mut w);
            total_iters += 1;
            let a = dot(&basis[j], &w);
            alpha.push(a);
            // Full reorthogonalization, twice, including the deflated directions:
            // rounding otherwise reintroduces them and their zero Ritz value wins.
            for _ in 0..2 {
                project_out(&mut w, deflate);
                for b in &basis {
                    let c = dot(b, &w);
                    axpy_neg(c, b, &mut w);
                }
            }
            let b_next = norm(&w);
            let exhausted = b_next <= 1e-12 * a.abs().max(1.0);
            let full = basis.len() >= max_basis;

            if exhausted || full || alpha.len() % opts.check_every == 0 {
                let (theta, y) = tridiagonal_top(&alpha, &beta);
                let estimate = if exhausted {
                    0.0
                } else {
                    (b_next * y[y.len() - 1]).abs()
                };
                if estimate <= opts.tol || exhausted || full {
                    let mut x = vec![0.0; n];
                    for (coef, b) in y.iter().zip(&basis) {
                        for (xi, bi) in x.iter_mut().zip(b) {
                            *xi += coef * bi;
                        }
                    }
                    project_out(&mut x, deflate);
                    let nx = norm(&x);
                    x.iter_mut().for_each(|v| *v /= nx);
                    let mut ax = vec![0.0; n];
                    apply(&x, &mut ax);
                    let rq = dot(&x, &ax);
                    axpy_neg(rq, &x, &mut ax);
                    let residual = norm(&ax);
                    last_residual = residual;
                    if residual <= opts.tol {
                        return Ok(EigenPair {
                            value: sign * rq,
                            vector: x,
                            residual,
                            iterations: total_iters,
                        });
                    }
                    best = Some((theta, x));
                    if exhausted || full {
                        break;
                    }
                }
            }
            if exhausted {
                break;
            }
            beta.push(b_next);
            let next: Vec<f64> = w.iter().map(|v| v / b_next).collect();
            basis.push(next);
        }
        match best {
            Some((_, x)) => start = x,
            None => break,
        }
    }
    Err(Error::NoConvergence {
        iterations: total_iters,
        residual: last_residual,
    })
}
