#![allow(dead_code)]

use nalgebra::DMatrix;
use qcf::lattice::{Displacement, IndexRange};
use rand::Rng;

/// Uniform[-1, 1] samples on `-n..=n`, zero at `±n` when `homogeneous`.
pub fn random_sites(n: usize, rng: &mut impl Rng, homogeneous: bool) -> Displacement {
    let n = n as i64;
    Displacement::from_fn(IndexRange::sites(n as usize), |j| {
        if homogeneous && j.abs() == n {
            0.0
        } else {
            rng.random_range(-1.0..=1.0)
        }
    })
}

/// Central-difference Jacobian of `force` (rows: its output range, columns:
/// the sites of `y`).
pub fn fd_jacobian(y: &Displacement, h: f64, force: impl Fn(&Displacement) -> Displacement) -> DMatrix<f64> {
    let rows = force(y).range();
    let cols = y.range();
    let mut jac = DMatrix::zeros(rows.len(), cols.len());
    for (c, j) in cols.iter().enumerate() {
        let mut plus = y.clone();
        let mut minus = y.clone();
        plus.set(j, y[j] + h);
        minus.set(j, y[j] - h);
        let (fp, fm) = (force(&plus), force(&minus));
        for (r, i) in rows.iter().enumerate() {
            jac[(r, c)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}
