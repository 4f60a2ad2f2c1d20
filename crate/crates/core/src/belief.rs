//! Controller belief model: which memories the controller believes to be
//! charged, and the resulting readout-readiness probability `R`.
//!
//! The controller only sees herald clicks and its own readouts, so its belief
//! about a memory evolves as a two-state chain with switching probabilities
//! `w = (1 - R) q` (empty -> charged) and `z = (1 - q) R` (charged -> empty).
//! Requiring `R = Y^(N-1)` with `Y = q + (1 - q) V` closes the loop and gives
//! the consistency polynomial
//!
//! ```text
//! (1 - 2q) Y^N + q^2 Y^(N-1) + q Y - q = 0
//! ```
//!
//! whose root in `[q, 1]` fixes everything else.

use serde::Serialize;

use crate::error::{check_range, ModelError, Result};

/// Residual bound used when callers have no specific requirement.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Subintervals scanned on `[q, 1]` to count sign changes.
const SCAN_CELLS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeliefSolution {
    /// Probability a unit is believed to provide a photon.
    pub y: f64,
    /// Steady-state probability a memory is believed charged.
    pub v: f64,
    /// Readout-readiness probability `Y^(N-1)`.
    pub r: f64,
    /// Belief switching probability empty -> charged.
    pub w: f64,
    /// Belief switching probability charged -> empty.
    pub z: f64,
    /// Consistency polynomial evaluated at `y`.
    pub residual: f64,
    /// Number of sign changes seen on `[q, 1]`; more than one means the
    /// smallest root was taken from several candidates.
    pub sign_changes: usize,
}

impl BeliefSolution {
    pub fn multiple_roots(&self) -> bool {
        self.sign_changes > 1
    }
}

/// Column-stochastic belief transfer matrix `[[1-w, z], [w, 1-z]]`.
pub fn belief_transfer(q: f64, r: f64) -> [[f64; 2]; 2] {
    let w = (1.0 - r) * q;
    let z = (1.0 - q) * r;
    [[1.0 - w, z], [w, 1.0 - z]]
}

/// Steady believed-charged probability `w / (w + z)` of a belief matrix, or
/// `None` when the chain never switches.
pub fn belief_steady_state(s: &[[f64; 2]; 2]) -> Option<f64> {
    let w = s[1][0];
    let z = s[0][1];
    (w + z > 0.0).then(|| w / (w + z))
}

pub fn consistency_polynomial(y: f64, q: f64, units: usize) -> f64 {
    let n = units as i32;
    (1.0 - 2.0 * q) * y.powi(n) + q * q * y.powi(n - 1) + q * y - q
}

fn consistency_derivative(y: f64, q: f64, units: usize) -> f64 {
    let n = units as i32;
    let lower = if units >= 2 {
        (n - 1) as f64 * q * q * y.powi(n - 2)
    } else {
        0.0
    };
    n as f64 * (1.0 - 2.0 * q) * y.powi(n - 1) + lower + q
}

/// Solves the consistency condition for the belief steady state of an
/// `units`-fold array whose sources herald with probability `q`.
///
/// The root is bracketed on `[q, 1]`, located by bisection and polished with
/// one Newton step that is kept only if it stays in the bracket and lowers
/// the residual.
pub fn solve_belief(q: f64, units: usize, tol: f64) -> Result<BeliefSolution> {
    check_range("q", q, (0.0..1.0).contains(&q), "0 <= q < 1")?;
    check_range("N", units as f64, units >= 1, "N >= 1")?;
    check_range("tol", tol, tol > 0.0, "tol > 0")?;

    let f = |y: f64| consistency_polynomial(y, q, units);
    let failure = |reason: String| ModelError::SolverFailure { q, units, reason };

    // f(q) = (1 - q)(q^N - q) <= 0, exactly zero for N = 1 or q = 0
    let f_at_q = (1.0 - q) * (q.powi(units as i32) - q);
    let mut sign_changes = 0;
    let mut first: Option<(f64, f64)> = None;
    let mut lo = q;
    let mut f_lo = f_at_q;
    if f_lo == 0.0 {
        sign_changes = 1;
        first = Some((lo, lo));
    }
    for i in 1..=SCAN_CELLS {
        let hi = q + (1.0 - q) * i as f64 / SCAN_CELLS as f64;
        let f_hi = f(hi);
        if f_lo != 0.0 && (f_hi == 0.0 || f_lo.signum() != f_hi.signum()) {
            sign_changes += 1;
            first.get_or_insert((lo, hi));
        }
        lo = hi;
        f_lo = f_hi;
    }
    let (mut a, mut b) =
        first.ok_or_else(|| failure("no sign change of the consistency polynomial on [q, 1]".into()))?;

    let mut fa = if a == q { f_at_q } else { f(a) };
    if fa != 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = f(mid);
            if fm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if fm.signum() == fa.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
    }
    if fa == 0.0 {
        b = a;
    }
    let mut y = if f(a).abs() <= f(b).abs() { a } else { b };
    let slope = consistency_derivative(y, q, units);
    if slope != 0.0 {
        let polished = y - f(y) / slope;
        if polished >= a.min(b) && polished <= a.max(b) && f(polished).abs() < f(y).abs() {
            y = polished;
        }
    }
    let residual = f(y);
    if residual.abs() > tol {
        return Err(failure(format!("residual {residual:e} exceeds tolerance {tol:e}")));
    }

    let r = y.powi(units as i32 - 1);
    let w = (1.0 - r) * q;
    let z = (1.0 - q) * r;
    // w / (w + z) avoids the cancellation in (Y - q) / (1 - q) as q -> 1
    let v = if w + z > 0.0 { w / (w + z) } else { (y - q) / (1.0 - q) };
    Ok(BeliefSolution {
        y,
        v,
        r,
        w,
        z,
        residual,
        sign_changes,
    })
}
