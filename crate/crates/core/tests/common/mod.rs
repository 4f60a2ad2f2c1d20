//! Independent reference computations for the acceptance suite.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Probability that `units` independent draws from `p` sum to fewer than
/// `units`, by enumerating every tuple.
pub fn fewer_than_by_enumeration(p: &[f64], units: usize) -> f64 {
    let mut total = 0.0;
    let mut tuple = vec![0usize; units];
    loop {
        if tuple.iter().sum::<usize>() < units {
            total += tuple.iter().map(|&n| p[n]).product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == units {
                return total;
            }
            tuple[i] += 1;
            if tuple[i] < p.len() {
                break;
            }
            tuple[i] = 0;
            i += 1;
        }
    }
}

/// Stationary vector of a column-stochastic matrix given row-major, found by
/// replacing one balance equation with the normalization.
pub fn stationary_direct(entries: &[f64], dim: usize) -> Vec<f64> {
    let mut a = DMatrix::from_row_slice(dim, dim, entries);
    for i in 0..dim {
        a[(i, i)] -= 1.0;
    }
    for k in 0..dim {
        a[(0, k)] = 1.0;
    }
    let mut rhs = DVector::zeros(dim);
    rhs[0] = 1.0;
    let x = a.lu().solve(&rhs).expect("nonsingular balance equations");
    x.iter().copied().collect()
}

/// Smaller solution of `(1 - p)(1 - p(1 - h)) = theta` by the textbook
/// quadratic formula.
pub fn unsync_threshold_textbook(h: f64, theta: f64) -> f64 {
    if h == 1.0 {
        return 1.0 - theta;
    }
    let a = 1.0 - h;
    let b = -(2.0 - h);
    let c = 1.0 - theta;
    (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
}
