//! Primal active-set solver for strictly convex, box-constrained dense QPs:
//!
//! ```text
//!     minimize    1/2 u' H u + p' u
//!     subject to  lower <= u <= upper
//! ```
//!
//! Each iteration fixes the working set at its bounds and solves the reduced
//! equality-constrained problem with a Cholesky factorisation of the free
//! block of `H`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub solve_time: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

pub fn objective(h: &DMatrix<f64>, p: &DVector<f64>, u: &DVector<f64>) -> f64 {
    0.5 * u.dot(&(h * u)) + p.dot(u)
}

/// Largest violation of the first-order conditions of the box QP at `u`.
///
/// Bound activity is decided with a relative tolerance on the box width; a
/// variable at its lower bound must have a non-negative gradient, at its upper
/// bound a non-positive one, and a zero gradient when interior.
pub fn kkt_residual(
    h: &DMatrix<f64>,
    p: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let g = h * u + p;
    let mut worst: f64 = 0.0;
    for i in 0..u.len() {
        let tol = 1e-12 * (1.0 + lower[i].abs().max(upper[i].abs()));
        let violation = (lower[i] - u[i]).max(u[i] - upper[i]).max(0.0);
        let at_lower = u[i] - lower[i] <= tol;
        let at_upper = upper[i] - u[i] <= tol;
        let r = match (at_lower, at_upper) {
            (true, true) => 0.0,
            (true, false) => (-g[i]).max(0.0),
            (false, true) => g[i].max(0.0),
            (false, false) => g[i].abs(),
        };
        worst = worst.max(r).max(violation);
    }
    worst
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    p: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<QpSolution> {
    solve_qp_warm(h, p, lower, upper, None)
}

/// As [`solve_qp`], starting from `guess` (clamped into the box) instead of the
/// clamped unconstrained minimiser. Bounds active at the clamped guess form the
/// initial working set.
pub fn solve_qp_warm(
    h: &DMatrix<f64>,
    p: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    guess: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    let start = Instant::now();
    let n = p.len();
    if h.shape() != (n, n) || lower.len() != n || upper.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "QP with H {:?}, p {}, bounds {}/{}",
            h.shape(),
            n,
            lower.len(),
            upper.len()
        )));
    }
    for i in 0..n {
        if !(lower[i] <= upper[i]) {
            return Err(Error::InfeasibleBounds {
                index: i,
                lower: lower[i],
                upper: upper[i],
            });
        }
    }
    let full = h.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;

    let clamp = |v: &DVector<f64>| {
        DVector::from_iterator(n, (0..n).map(|i| v[i].clamp(lower[i], upper[i])))
    };
    let mut u = match guess {
        Some(g) if g.len() == n => clamp(g),
        _ => clamp(&full.solve(&(-p))),
    };
    let mut set: Vec<Bound> = (0..n)
        .map(|i| {
            if u[i] <= lower[i] {
                Bound::Lower
            } else if u[i] >= upper[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    let max_iter = 10 * n + 50;
    let mut iterations = 0;
    loop {
        if iterations >= max_iter {
            return Err(Error::QpNotConverged { iterations });
        }
        iterations += 1;

        let free: Vec<usize> = (0..n).filter(|&i| set[i] == Bound::Free).collect();
        for i in 0..n {
            match set[i] {
                Bound::Lower => u[i] = lower[i],
                Bound::Upper => u[i] = upper[i],
                Bound::Free => {}
            }
        }

        // Reduced problem: H_FF u_F = -(p_F + H_FW u_W)
        let mut candidate = u.clone();
        if !free.is_empty() {
            let nf = free.len();
            let h_ff = DMatrix::from_fn(nf, nf, |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(nf, |a, _| {
                let i = free[a];
                let mut acc = p[i];
                for j in 0..n {
                    if set[j] != Bound::Free {
                        acc += h[(i, j)] * u[j];
                    }
                }
                -acc
            });
            let chol = h_ff.cholesky().ok_or(Error::NotPositiveDefinite)?;
            let sol = chol.solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                candidate[i] = sol[a];
            }
        }

        // Longest feasible step toward the candidate.
        let mut alpha = 1.0;
        let mut blocking: Option<(usize, Bound)> = None;
        for &i in &free {
            let d = candidate[i] - u[i];
            if d < 0.0 && candidate[i] < lower[i] {
                let a = (lower[i] - u[i]) / d;
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, Bound::Lower));
                }
            } else if d > 0.0 && candidate[i] > upper[i] {
                let a = (upper[i] - u[i]) / d;
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, Bound::Upper));
                }
            }
        }

        if let Some((i, b)) = blocking {
            for &j in &free {
                u[j] += alpha * (candidate[j] - u[j]);
            }
            set[i] = b;
            continue;
        }

        u = candidate;
        // Multipliers of the working set; drop the most negative one.
        let g = h * &u + p;
        let scale = 1.0 + g.amax();
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let lambda = match set[i] {
                Bound::Lower => g[i],
                Bound::Upper => -g[i],
                Bound::Free => continue,
            };
            // A degenerate box (lower == upper) never leaves the working set.
            if lower[i] == upper[i] {
                continue;
            }
            if lambda < -1e-13 * scale && worst.is_none_or(|(_, w)| lambda < w) {
                worst = Some((i, lambda));
            }
        }
        match worst {
            Some((i, _)) => set[i] = Bound::Free,
            None => break,
        }
    }

    let u = clamp(&u);
    Ok(QpSolution {
        objective: objective(h, p, &u),
        kkt_residual: kkt_residual(h, p, lower, upper, &u),
        iterations,
        u,
        solve_time: start.elapsed(),
    })
}
