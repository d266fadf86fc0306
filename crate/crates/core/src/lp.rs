//! Phase-one simplex: decides whether `A x = b, x >= 0` has a solution.
//!
//! Dense tableau; Dantzig pricing with a Bland fallback against cycling. Sized for the static
//! equilibrium problems of a single tower: a few hundred columns at most.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("row {row} has {got} coefficients, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("simplex did not terminate within {0} pivots")]
    IterationLimit(usize),
}

/// Outcome of a phase-one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase1 {
    /// Sum of artificial variables at the optimum (0 iff feasible).
    pub infeasibility: f64,
    /// A non-negative solution of the original variables.
    pub solution: Vec<f64>,
}

impl Phase1 {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.infeasibility <= tol
    }
}

const PIVOT_EPS: f64 = 1e-9;
const REDUCED_COST_EPS: f64 = 1e-11;
const ZERO_EPS: f64 = 1e-11;
const HARRIS_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 20;

/// Minimise the total residual of `rows * x = rhs` over `x >= 0`.
pub fn phase_one(rows: &[Vec<f64>], rhs: &[f64], num_vars: usize) -> Result<Phase1, LpError> {
    let m = rows.len();
    let n = num_vars;
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(LpError::RaggedRow {
                row: i,
                got: r.len(),
                expected: n,
            });
        }
    }
    // Columns: n original, m artificial, then rhs.
    let width = n + m + 1;
    let mut t = vec![0.0; m * width];
    for i in 0..m {
        let sign = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
        let row = &mut t[i * width..(i + 1) * width];
        for (dst, &a) in row[..n].iter_mut().zip(&rows[i]) {
            *dst = sign * a;
        }
        row[n + i] = 1.0;
        row[width - 1] = sign * rhs[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    // Reduced costs of the phase-one objective (sum of artificials).
    let mut cost = vec![0.0; width];
    for i in 0..m {
        for j in 0..n {
            cost[j] -= t[i * width + j];
        }
        cost[width - 1] -= t[i * width + width - 1];
    }

    // Dantzig's rule until the objective stalls, then Bland's rule for the
    // rest of the solve.
    let limit = 50 * (m + n + 1);
    let mut pivots = 0;
    let mut stalled = 0usize;
    let mut objective = -cost[width - 1];
    loop {
        let enter = if stalled < STALL_LIMIT {
            let mut best: Option<usize> = None;
            for j in 0..n + m {
                if cost[j] < -REDUCED_COST_EPS && best.is_none_or(|b| cost[j] < cost[b]) {
                    best = Some(j);
                }
            }
            best
        } else {
            (0..n + m).find(|&j| cost[j] < -REDUCED_COST_EPS)
        };
        let Some(enter) = enter else {
            break;
        };
        // Harris two-pass ratio test: find the loosest step that keeps every
        // basic variable above -HARRIS_TOL, then among the rows blocking
        // within that step take the largest pivot element.
        let mut bound = f64::INFINITY;
        for i in 0..m {
            let a = t[i * width + enter];
            if a > PIVOT_EPS {
                let rhs = t[i * width + width - 1].max(0.0);
                bound = bound.min((rhs + HARRIS_TOL) / a);
            }
        }
        let mut leave: Option<usize> = None;
        let mut best_pivot = 0.0;
        for i in 0..m {
            let a = t[i * width + enter];
            if a > PIVOT_EPS {
                let rhs = t[i * width + width - 1].max(0.0);
                if rhs / a <= bound
                    && (a > best_pivot
                        || (a == best_pivot && leave.is_some_and(|l| basis[i] < basis[l])))
                {
                    leave = Some(i);
                    best_pivot = a;
                }
            }
        }
        let Some(r) = leave else {
            // No positive entry: the phase-one objective is bounded below, so
            // this column cannot improve it.
            cost[enter] = 0.0;
            continue;
        };
        pivot(&mut t, &mut cost, width, m, r, enter);
        for i in 0..m {
            let v = &mut t[i * width + width - 1];
            if *v < 0.0 && *v > -HARRIS_TOL {
                *v = 0.0;
            }
        }
        let next = -cost[width - 1];
        if stalled < STALL_LIMIT {
            if next < objective - 1e-12 * (1.0 + objective.abs()) {
                stalled = 0;
            } else {
                stalled += 1;
            }
        }
        objective = next;
        basis[r] = enter;
        pivots += 1;
        if pivots > limit {
            return Err(LpError::IterationLimit(limit));
        }
    }

    let mut solution = vec![0.0; n];
    let mut infeasibility = 0.0;
    for (i, &bv) in basis.iter().enumerate() {
        let v = t[i * width + width - 1];
        if bv < n {
            solution[bv] = v;
        } else {
            infeasibility += v;
        }
    }
    Ok(Phase1 {
        infeasibility: infeasibility.max(0.0),
        solution,
    })
}

fn pivot(t: &mut [f64], cost: &mut [f64], width: usize, m: usize, r: usize, c: usize) {
    let p = t[r * width + c];
    for v in &mut t[r * width..(r + 1) * width] {
        *v /= p;
    }
    let (before, rest) = t.split_at_mut(r * width);
    let (prow, after) = rest.split_at_mut(width);
    let eliminate = |row: &mut [f64]| {
        let f = row[c];
        if f != 0.0 {
            for (x, &y) in row.iter_mut().zip(prow.iter()) {
                *x -= f * y;
                // Round-off left behind by cancellation would otherwise turn
                // degenerate pivots into slightly negative ones and defeat
                // the anti-cycling rule.
                if x.abs() < ZERO_EPS {
                    *x = 0.0;
                }
            }
            row[c] = 0.0;
        }
    };
    for row in before.chunks_mut(width).chain(after.chunks_mut(width)) {
        eliminate(row);
    }
    eliminate(cost);
    debug_assert!(m > r);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_system() {
        // x + y = 1, x - y = 0 -> x = y = 0.5
        let rows = vec![vec![1.0, 1.0], vec![1.0, -1.0]];
        let out = phase_one(&rows, &[1.0, 0.0], 2).unwrap();
        assert!(out.is_feasible(1e-12));
        assert!((out.solution[0] - 0.5).abs() < 1e-12);
        assert!((out.solution[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_because_of_sign() {
        // x + y = -1 has no non-negative solution.
        let out = phase_one(&[vec![1.0, 1.0]], &[-1.0], 2).unwrap();
        assert!((out.infeasibility - 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_zero_rows_are_fine() {
        let rows = vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![0.0, 0.0]];
        let out = phase_one(&rows, &[0.0, 4.0, 0.0], 2).unwrap();
        assert!(out.is_feasible(1e-12));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(
            phase_one(&[vec![1.0]], &[1.0], 2),
            Err(LpError::RaggedRow { row: 0, .. })
        ));
    }
}
