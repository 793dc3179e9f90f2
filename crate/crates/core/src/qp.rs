//! Dense convex QP with two-sided linear inequality constraints:
//!
//! ```text
//! minimize    0.5 x'Hx + g'x
//! subject to  lb <= E x + f <= ub
//! ```
//!
//! Solved with a dual active-set method in the style of Goldfarb and Idnani.
//! The iteration starts from the unconstrained minimizer and adds violated
//! constraints one at a time, dropping any whose multiplier would turn
//! negative. Each two-sided row is split into one-sided rows normalized to
//! unit length; infinite bounds never enter the arithmetic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Diagonal shift applied when `H` is not numerically positive definite.
pub const REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub e: DMatrix<f64>,
    pub f: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QuadraticProgram {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let d = g.len();
        QuadraticProgram {
            h,
            g,
            e: DMatrix::zeros(0, d),
            f: DVector::zeros(0),
            lb: DVector::zeros(0),
            ub: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn constraints(&self) -> usize {
        self.e.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let c = self.constraints();
        if self.h.shape() != (d, d) {
            return Err(Error::dim("QP Hessian", d, self.h.nrows()));
        }
        if self.e.ncols() != d {
            return Err(Error::dim("QP constraint columns", d, self.e.ncols()));
        }
        if self.f.len() != c || self.lb.len() != c || self.ub.len() != c {
            return Err(Error::dim("QP constraint rows", c, self.f.len()));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * self.h.amax().max(1.0) {
            return Err(Error::Config(format!(
                "QP Hessian not symmetric ({asym:e})"
            )));
        }
        for r in 0..c {
            if self.lb[r].is_nan() || self.ub[r].is_nan() || self.lb[r] > self.ub[r] {
                return Err(Error::Infeasible(format!("row {r} has lb > ub")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveBound {
    pub row: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Bounds active at the solution.
    pub active: Vec<ActiveBound>,
    /// Multipliers of the lower bounds, per constraint row (>= 0).
    pub lower_multipliers: DVector<f64>,
    /// Multipliers of the upper bounds, per constraint row (>= 0).
    pub upper_multipliers: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Primal feasibility tolerance on unit-normalized rows.
    pub tolerance: f64,
    pub max_iterations: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tolerance: 1e-10,
            max_iterations: None,
        }
    }
}

/// One-sided row `a'x >= b`, with `a` of unit norm.
struct Row {
    a: DVector<f64>,
    b: f64,
    norm: f64,
    bound: ActiveBound,
}

fn one_sided_rows(qp: &QuadraticProgram) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for r in 0..qp.constraints() {
        let e = qp.e.row(r).transpose();
        let norm = e.norm();
        let (lo, hi) = (qp.lb[r] - qp.f[r], qp.ub[r] - qp.f[r]);
        if norm == 0.0 {
            if lo > 0.0 || hi < 0.0 {
                return Err(Error::Infeasible(format!(
                    "row {r} is empty but its bounds exclude 0"
                )));
            }
            continue;
        }
        let a = e / norm;
        if lo.is_finite() {
            rows.push(Row {
                a: a.clone(),
                b: lo / norm,
                norm,
                bound: ActiveBound {
                    row: r,
                    side: Side::Lower,
                },
            });
        }
        if hi.is_finite() {
            rows.push(Row {
                a: -a,
                b: -hi / norm,
                norm,
                bound: ActiveBound {
                    row: r,
                    side: Side::Upper,
                },
            });
        }
    }
    Ok(rows)
}

fn factor(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = h.clone().cholesky() {
        return Ok(c);
    }
    let shift = REGULARIZATION * h.diagonal().amax().max(1.0);
    let d = h.nrows();
    (h + DMatrix::identity(d, d) * shift)
        .cholesky()
        .ok_or_else(|| Error::Singular("QP Hessian is not positive semidefinite".into()))
}

/// Reusable solver that remembers the previous active set for warm starts.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub options: QpOptions,
    warm: Vec<ActiveBound>,
}

impl QpSolver {
    pub fn new(options: QpOptions) -> Self {
        QpSolver {
            options,
            warm: Vec::new(),
        }
    }

    pub fn warm_set(&self) -> &[ActiveBound] {
        &self.warm
    }

    pub fn solve(&mut self, qp: &QuadraticProgram) -> Result<QpSolution> {
        let sol = solve_with(qp, &self.options, &self.warm)?;
        self.warm = sol.active.clone();
        Ok(sol)
    }
}

/// Cold-start solve.
pub fn solve(qp: &QuadraticProgram, options: &QpOptions) -> Result<QpSolution> {
    solve_with(qp, options, &[])
}

/// Solve, examining violated constraints from `warm` before any others.
pub fn solve_with(
    qp: &QuadraticProgram,
    options: &QpOptions,
    warm: &[ActiveBound],
) -> Result<QpSolution> {
    qp.validate()?;
    let d = qp.dim();
    let rows = one_sided_rows(qp)?;
    let chol = factor(&qp.h)?;
    let hinv = chol.inverse();
    let tol = options.tolerance;
    let max_iter = options.max_iterations.unwrap_or(10 * (d + rows.len()) + 50);

    let mut x = -(&hinv * &qp.g);
    // Active set as indices into `rows`, with multipliers.
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let preferred: Vec<bool> = rows.iter().map(|r| warm.contains(&r.bound)).collect();
    let mut iterations = 0;

    loop {
        // Pick the next violated row: warm-start rows first, then the worst.
        let mut pick: Option<(usize, f64, bool)> = None;
        for (j, row) in rows.iter().enumerate() {
            if active.contains(&j) {
                continue;
            }
            let s = row.a.dot(&x) - row.b;
            if s < -tol {
                let better = match pick {
                    None => true,
                    Some((_, best, pref)) => {
                        (preferred[j] && !pref) || (preferred[j] == pref && s < best)
                    }
                };
                if better {
                    pick = Some((j, s, preferred[j]));
                }
            }
        }
        let Some((p, _, _)) = pick else { break };

        let mut lambda_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::MaxIterations(max_iter));
            }
            let np = &rows[p].a;
            // Directions in the primal (z) and dual (r) spaces.
            let (z, r) = if active.is_empty() {
                (&hinv * np, Vec::new())
            } else {
                let k = active.len();
                let a_mat = DMatrix::from_fn(d, k, |i, c| rows[active[c]].a[i]);
                let w = &hinv * &a_mat;
                let m = a_mat.transpose() * &w;
                let rhs = w.transpose() * np;
                let r = match m.clone().cholesky() {
                    Some(c) => c.solve(&rhs),
                    None => m
                        .lu()
                        .solve(&rhs)
                        .ok_or_else(|| Error::Singular("QP active-set matrix".into()))?,
                };
                (&hinv * np - &w * &r, r.iter().copied().collect())
            };

            // Largest dual step keeping active multipliers non-negative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (c, &rc) in r.iter().enumerate() {
                if rc > 0.0 {
                    let t = lambda[c] / rc;
                    if t < t1 {
                        t1 = t;
                        drop = Some(c);
                    }
                }
            }
            let zn = z.dot(np);
            let s = np.dot(&x) - rows[p].b;
            let t2 = if z.amax() > 1e-14 * np.amax().max(1.0) && zn > 0.0 {
                -s / zn
            } else {
                f64::INFINITY
            };
            if !t1.is_finite() && !t2.is_finite() {
                let b = rows[p].bound;
                return Err(Error::Infeasible(format!(
                    "{:?} bound of row {} cannot be satisfied with the active constraints",
                    b.side, b.row
                )));
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                x += &z * t;
            }
            for (c, &rc) in r.iter().enumerate() {
                lambda[c] -= t * rc;
            }
            lambda_p += t;
            if t2 <= t1 {
                active.push(p);
                lambda.push(lambda_p);
                break;
            }
            let c = drop.expect("finite partial step drops a constraint");
            active.remove(c);
            lambda.remove(c);
        }
    }

    let c = qp.constraints();
    let mut lower_multipliers = DVector::zeros(c);
    let mut upper_multipliers = DVector::zeros(c);
    let mut bounds = Vec::with_capacity(active.len());
    for (&j, &l) in active.iter().zip(&lambda) {
        let row = &rows[j];
        let scaled = l.max(0.0) / row.norm;
        match row.bound.side {
            Side::Lower => lower_multipliers[row.bound.row] = scaled,
            Side::Upper => upper_multipliers[row.bound.row] = scaled,
        }
        bounds.push(row.bound);
    }
    bounds.sort();
    Ok(QpSolution {
        objective: qp.objective(&x),
        x,
        iterations,
        active: bounds,
        lower_multipliers,
        upper_multipliers,
    })
}

/// Worst-case KKT violations of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(qp: &QuadraticProgram, sol: &QpSolution) -> KktResiduals {
    let ex = &qp.e * &sol.x + &qp.f;
    let mult = &sol.lower_multipliers - &sol.upper_multipliers;
    let grad = &qp.h * &sol.x + &qp.g - qp.e.transpose() * &mult;
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for r in 0..qp.constraints() {
        primal = primal.max(qp.lb[r] - ex[r]).max(ex[r] - qp.ub[r]);
        if sol.lower_multipliers[r] > 0.0 {
            complementarity =
                complementarity.max((sol.lower_multipliers[r] * (ex[r] - qp.lb[r])).abs());
        }
        if sol.upper_multipliers[r] > 0.0 {
            complementarity =
                complementarity.max((sol.upper_multipliers[r] * (qp.ub[r] - ex[r])).abs());
        }
    }
    let dual = sol
        .lower_multipliers
        .iter()
        .chain(sol.upper_multipliers.iter())
        .fold(0.0f64, |m, &l| m.max(-l));
    KktResiduals {
        stationarity: grad.amax(),
        primal: primal.max(0.0),
        dual,
        complementarity,
    }
}
