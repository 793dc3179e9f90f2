//! Condensed window problem shared by the local and centralized estimators.
//!
//! The decision vector is `theta = [z_b(k-N); w_b(k-N); ...; w_b(k-1)]` for a
//! block `b` of lifted coordinates. Every other coordinate is fixed at its
//! prior and carries no disturbance. The cost is
//!
//! ```text
//! |z_b - zbar_b|^2_{P^-1} + sum |w_b|^2_{Q^-1} + |Y - O zbar_rest - Lambda U - [O_b Gamma_b] theta|^2_{R^-1}
//! ```

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, spd_inverse, symmetrize};
use crate::predict::StackedMatrices;
use crate::qp::{QpSolver, QuadraticProgram};

/// Bound on one lifted coordinate, in scaled units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateBound {
    pub coordinate: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Stacked data of one window, `N + 1` measurements and `N` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowData {
    /// `[y(k-N); ...; y(k)]`, scaled.
    pub measurements: DVector<f64>,
    /// `[v(k-N); ...; v(k-1)]`, lifted.
    pub inputs: DVector<f64>,
}

impl WindowData {
    pub fn stack(measurements: &[DVector<f64>], inputs: &[DVector<f64>]) -> Self {
        let cat = |parts: &[DVector<f64>]| {
            let len = parts.iter().map(|p| p.len()).sum();
            let mut out = DVector::zeros(len);
            let mut r = 0;
            for p in parts {
                out.rows_mut(r, p.len()).copy_from(p);
                r += p.len();
            }
            out
        };
        WindowData {
            measurements: cat(measurements),
            inputs: cat(inputs),
        }
    }
}

/// Precomputed matrices of the window QP for one block of coordinates.
#[derive(Debug, Clone)]
pub struct WindowProblem {
    pub horizon: usize,
    pub block: Range<usize>,
    n: usize,
    /// `[O_b, Gamma_b]`.
    phi: DMatrix<f64>,
    /// `Phi' R^-1`.
    phi_t_rinv: DMatrix<f64>,
    /// `Phi' R^-1 Phi`.
    curvature: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    observability: DMatrix<f64>,
    lambda: DMatrix<f64>,
    transition: DMatrix<f64>,
    input_to_state: DMatrix<f64>,
    /// Disturbance-to-state columns of the block.
    disturbance_block: DMatrix<f64>,
    /// Constraint rows of the window state stack with their bounds.
    rows: Vec<usize>,
    lb: DVector<f64>,
    ub: DVector<f64>,
    /// Constraint matrix `[G_b, J_b]` restricted to `rows`.
    e: DMatrix<f64>,
}

/// Optimal window estimate of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    /// `z_b(k-N|k)`.
    pub start: DVector<f64>,
    /// `w_b(d|k)` for `d = k-N..k-1`.
    pub disturbances: Vec<DVector<f64>>,
    /// Global window states `Z^(b)` at `d = k-N..k`.
    pub states: Vec<DVector<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub active: usize,
    /// Largest violation of the finite bounds by the returned window.
    pub max_violation: f64,
}

impl WindowSolution {
    /// Block coordinates of the window state at `d = k`.
    pub fn current(&self, block: &Range<usize>) -> DVector<f64> {
        self.states
            .last()
            .expect("window has states")
            .rows(block.start, block.len())
            .into_owned()
    }
}

fn columns(m: &DMatrix<f64>, ranges: &[Range<usize>]) -> DMatrix<f64> {
    let width = ranges.iter().map(|r| r.len()).sum();
    let mut out = DMatrix::zeros(m.nrows(), width);
    let mut c = 0;
    for r in ranges {
        out.columns_mut(c, r.len())
            .copy_from(&m.columns(r.start, r.len()));
        c += r.len();
    }
    out
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

impl WindowProblem {
    /// Builds the window problem of `block`.
    ///
    /// `q` is the process weight of the block, `r` the global measurement
    /// weight, and `bounds` the finite bounds on coordinates of the block.
    pub fn new(
        stacks: &StackedMatrices,
        block: Range<usize>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        bounds: &[CoordinateBound],
    ) -> Result<Self> {
        let horizon = stacks.horizon;
        let n = stacks.transition.ncols();
        let nb = block.len();
        let steps = horizon + 1;
        if q.shape() != (nb, nb) {
            return Err(Error::dim("process weight", nb, q.nrows()));
        }
        if r.nrows() * steps != stacks.observability.nrows() {
            return Err(Error::dim(
                "measurement weight",
                stacks.observability.nrows() / steps,
                r.nrows(),
            ));
        }
        if block.end > n {
            return Err(Error::dim("estimation block", n, block.end));
        }
        let w_ranges: Vec<Range<usize>> = (0..horizon)
            .map(|s| s * n + block.start..s * n + block.end)
            .collect();
        let o_b = columns(&stacks.observability, std::slice::from_ref(&block));
        let gamma_b = columns(&stacks.gamma, &w_ranges);
        let mut phi = DMatrix::zeros(o_b.nrows(), nb * steps);
        phi.columns_mut(0, nb).copy_from(&o_b);
        phi.columns_mut(nb, nb * horizon).copy_from(&gamma_b);

        let r_inv = spd_inverse(r, "measurement weight")?;
        let r_bold = block_diag(&vec![r_inv; steps]);
        let phi_t_rinv = phi.transpose() * r_bold;
        let mut curvature = &phi_t_rinv * &phi;
        symmetrize(&mut curvature);

        let mut rows_idx = Vec::new();
        let mut lb = Vec::new();
        let mut ub = Vec::new();
        for s in 0..steps {
            for b in bounds {
                if !block.contains(&b.coordinate) {
                    return Err(Error::Config(format!(
                        "bound on coordinate {} outside the block",
                        b.coordinate
                    )));
                }
                if b.lower.is_finite() || b.upper.is_finite() {
                    rows_idx.push(s * n + b.coordinate);
                    lb.push(b.lower);
                    ub.push(b.upper);
                }
            }
        }
        let g_b = rows(
            &columns(&stacks.transition, std::slice::from_ref(&block)),
            &rows_idx,
        );
        let disturbance_block = columns(&stacks.disturbance_to_state, &w_ranges);
        let j_b = rows(&disturbance_block, &rows_idx);
        let mut e = DMatrix::zeros(rows_idx.len(), nb * steps);
        e.columns_mut(0, nb).copy_from(&g_b);
        e.columns_mut(nb, nb * horizon).copy_from(&j_b);

        Ok(WindowProblem {
            horizon,
            block,
            n,
            phi,
            phi_t_rinv,
            curvature,
            q_inv: spd_inverse(q, "process weight")?,
            observability: stacks.observability.clone(),
            lambda: stacks.lambda.clone(),
            transition: stacks.transition.clone(),
            input_to_state: stacks.input_to_state.clone(),
            disturbance_block,
            rows: rows_idx,
            lb: DVector::from_vec(lb),
            ub: DVector::from_vec(ub),
            e,
        })
    }

    pub fn dim(&self) -> usize {
        self.block.len() * (self.horizon + 1)
    }

    pub fn constraint_rows(&self) -> usize {
        self.rows.len()
    }

    /// Measurement-misfit matrix `[O_b, Gamma_b]`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Assembles the QP for the given priors and arrival weight.
    ///
    /// `priors` is the global prior `zbar(k-N)`; its block entries anchor the
    /// arrival term and the remaining entries are held fixed.
    pub fn program(
        &self,
        data: &WindowData,
        priors: &DVector<f64>,
        arrival: &DMatrix<f64>,
    ) -> Result<QuadraticProgram> {
        let nb = self.block.len();
        if priors.len() != self.n {
            return Err(Error::dim("window priors", self.n, priors.len()));
        }
        if arrival.shape() != (nb, nb) {
            return Err(Error::dim("arrival weight", nb, arrival.nrows()));
        }
        if data.measurements.len() != self.observability.nrows()
            || data.inputs.len() != self.lambda.ncols()
        {
            return Err(Error::dim(
                "window measurements",
                self.observability.nrows(),
                data.measurements.len(),
            ));
        }
        let p_inv = spd_inverse(arrival, "arrival weight")?;
        let mut rest = priors.clone();
        rest.rows_mut(self.block.start, nb).fill(0.0);
        let residual =
            &data.measurements - &self.observability * &rest - &self.lambda * &data.inputs;

        let mut h = self.curvature.clone();
        {
            let mut top = h.view_mut((0, 0), (nb, nb));
            top += &p_inv;
        }
        for s in 0..self.horizon {
            let o = nb * (s + 1);
            let mut blk = h.view_mut((o, o), (nb, nb));
            blk += &self.q_inv;
        }
        symmetrize(&mut h);
        let mut g = -(&self.phi_t_rinv * residual);
        let anchor = &p_inv * priors.rows(self.block.start, nb);
        {
            let mut top = g.rows_mut(0, nb);
            top -= &anchor;
        }

        let fixed = &self.transition * &rest + &self.input_to_state * &data.inputs;
        let f = DVector::from_fn(self.rows.len(), |r, _| fixed[self.rows[r]]);
        Ok(QuadraticProgram {
            h,
            g,
            e: self.e.clone(),
            f,
            lb: self.lb.clone(),
            ub: self.ub.clone(),
        })
    }

    /// Solves the window QP and expands the optimal window.
    pub fn solve(
        &self,
        data: &WindowData,
        priors: &DVector<f64>,
        arrival: &DMatrix<f64>,
        solver: &mut QpSolver,
    ) -> Result<WindowSolution> {
        let qp = self.program(data, priors, arrival)?;
        let sol = solver.solve(&qp)?;
        let nb = self.block.len();
        let start = sol.x.rows(0, nb).into_owned();
        let disturbances: Vec<DVector<f64>> = (0..self.horizon)
            .map(|s| sol.x.rows(nb * (s + 1), nb).into_owned())
            .collect();

        let mut z0 = priors.clone();
        z0.rows_mut(self.block.start, nb).copy_from(&start);
        let w = sol.x.rows(nb, nb * self.horizon);
        let stacked = &self.transition * z0
            + &self.input_to_state * &data.inputs
            + &self.disturbance_block * w;
        let states = (0..=self.horizon)
            .map(|s| stacked.rows(s * self.n, self.n).into_owned())
            .collect();

        let mut max_violation: f64 = 0.0;
        for (r, &row) in self.rows.iter().enumerate() {
            let v = stacked[row];
            max_violation = max_violation.max(self.lb[r] - v).max(v - self.ub[r]);
        }
        Ok(WindowSolution {
            start,
            disturbances,
            states,
            objective: sol.objective,
            iterations: sol.iterations,
            active: sol.active.len(),
            max_violation,
        })
    }
}
