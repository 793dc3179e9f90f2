//! Arrival-weight recursions.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::topology::SubsystemTopology;

/// How the centralized estimator advances its arrival weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceRule {
    /// `P+ = Q + A P A' - A P C' (R + C P C')^-1 C P A'`.
    #[default]
    Riccati,
    /// The distributed update applied with a single block covering the whole state.
    Distributed,
}

/// Solves `m x = rhs` for symmetric `m`, preferring Cholesky.
fn solve_symmetric(m: &DMatrix<f64>, rhs: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(context.to_string()))
}

/// One step of the distributed covariance recursion for subsystem `i`.
///
/// `a`, `c` and `r` are global; `q` is the process weight of subsystem `i`.
/// Returns the gain `L_i` and the symmetrized `P_i`.
pub fn distributed_covariance_update(
    topology: &SubsystemTopology,
    i: usize,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    block_update(p, a, c, q, r, topology.lifted_range(i))
}

pub(crate) fn block_update(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cols: Range<usize>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ni = cols.len();
    let n = a.nrows();
    let ny = c.nrows();
    if p.shape() != (ni, ni) || q.shape() != (ni, ni) {
        return Err(Error::dim("arrival weight", ni, p.nrows()));
    }
    if a.shape() != (n, n) || c.ncols() != n || r.shape() != (ny, ny) {
        return Err(Error::dim("covariance update model", n, c.ncols()));
    }
    let a_ci = a.columns(cols.start, ni);
    let a_ii = a.view((cols.start, cols.start), (ni, ni));
    let c_ci = c.columns(cols.start, ni);
    let cap = c * a_ci * p;
    let cross = &cap * a_ii.transpose() + c_ci * q;
    let inner = &cap * a_ci.transpose() * c.transpose() + c_ci * q * c_ci.transpose() + r;
    let l = solve_symmetric(&inner, &cross, "distributed covariance update")?.transpose();
    let mut next = -(&l * &cross) + a_ii * p * a_ii.transpose() + q;
    symmetrize(&mut next);
    Ok((l, next))
}

/// Prediction-form Riccati recursion of the centralized estimator.
pub fn riccati_update(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let apc = a * p * c.transpose();
    let inner = r + c * p * c.transpose();
    let gain = solve_symmetric(&inner, &apc.transpose(), "Riccati update")?;
    let mut next = q + a * p * a.transpose() - &apc * gain;
    symmetrize(&mut next);
    Ok(next)
}

/// Measurement update `X - X C' (C X C' + R)^-1 C X`.
pub fn filter_update(x: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cx = c * x;
    let inner = &cx * c.transpose() + r;
    let mut next = x - cx.transpose() * solve_symmetric(&inner, &cx, "measurement update")?;
    symmetrize(&mut next);
    Ok(next)
}
