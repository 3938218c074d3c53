#![allow(dead_code)]

use vla_core::linalg::{Matrix, Vector};
use vla_core::rng::SeededRng;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Largest singular value from the eigenvalues of `mᵀm`.
pub fn svd_sigma_max(m: &Matrix) -> f64 {
    let mtm = m.transpose().matmul(m);
    jacobi_eigenvalues(&mtm).into_iter().fold(0.0, f64::max).sqrt()
}

/// Random unit pair `(k, a)` in `d` dimensions with `kᵀa = c` exactly up to rounding.
pub fn unit_pair(rng: &mut SeededRng, d: usize, c: f64) -> (Vector, Vector) {
    let k = Vector::random_unit(rng, d);
    let mut w = Vector::gaussian(rng, d);
    let p = w.dot(&k);
    w = w.sub(&k.scaled(p)).normalized().unwrap();
    let a = k.scaled(c).add(&w.scaled((1.0 - c * c).max(0.0).sqrt()));
    (k, a)
}
