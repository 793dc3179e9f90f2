//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for pseudoinverses.
pub const PINV_RTOL: f64 = 1e-10;

/// Moore-Penrose pseudoinverse via SVD.
#[derive(Debug, Clone)]
pub struct Pseudoinverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    /// Number of singular values discarded by the relative cutoff.
    pub truncated: usize,
}

pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> Pseudoinverse {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Pseudoinverse {
            matrix: DMatrix::zeros(cols, rows),
            rank: 0,
            truncated: 0,
        };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rtol * sigma_max;
    let mut out = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    Pseudoinverse {
        matrix: out,
        rank,
        truncated: svd.singular_values.len() - rank,
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Inverse of a symmetric positive-definite matrix, falling back to LU.
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.inverse());
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(context.to_string()))
}

pub fn solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(context.to_string()))
}

/// Block-diagonal matrix from a list of blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Exact zero-order-hold discretization of `dx/dt = a x + b u` over `step`.
pub fn zoh_discretize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    step: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * step));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * step));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn vec_from(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}
