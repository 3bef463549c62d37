//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x' H x + g' x
//! subject to  lb <= x <= ub
//!             G x <= h
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The method starts
//! from the unconstrained minimizer and adds violated constraints one at a
//! time, so the objective is non-decreasing across iterations and the final
//! active set carries exact Lagrange multipliers for the KKT certificate.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Diagonal shift added to `H` before factorization.
pub const REGULARIZATION: f64 = 1e-9;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("hessian is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// `G` in `G x <= h`; `m x n`, possibly with zero rows.
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with `n` variables.
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
            ineq: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.ineq = g;
        self.ineq_rhs = h;
        self
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    /// Largest bound or inequality violation at `x` (zero when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..x.len() {
            worst = worst.max(self.lb[i] - x[i]).max(x[i] - self.ub[i]);
        }
        if self.ineq.nrows() > 0 {
            let gx = &self.ineq * x;
            for (gi, hi) in gx.iter().zip(self.ineq_rhs.iter()) {
                worst = worst.max(gi - hi);
            }
        }
        worst
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::Dimension(format!(
                "hessian is {:?}, expected ({n}, {n})",
                self.hessian.shape()
            )));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(QpError::Dimension("bound vectors must have length n".into()));
        }
        if self.ineq.ncols() != n || self.ineq.nrows() != self.ineq_rhs.len() {
            return Err(QpError::Dimension(format!(
                "inequality matrix is {:?} with {} right-hand sides",
                self.ineq.shape(),
                self.ineq_rhs.len()
            )));
        }
        if !self.hessian.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("hessian"));
        }
        if !self.gradient.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("gradient"));
        }
        if !self.ineq.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("inequality matrix"));
        }
        if self.lb.iter().chain(self.ub.iter()).chain(self.ineq_rhs.iter()).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("bounds"));
        }
        let scale = 1.0 + self.hessian.amax();
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::MaxIter => "max_iter",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

/// One constraint in `c' x >= b` form.
struct Row {
    normal: DVector<f64>,
    rhs: f64,
}

fn collect_rows(p: &QpProblem) -> Vec<Row> {
    let n = p.dim();
    let mut rows = Vec::with_capacity(p.ineq.nrows() + 2 * n);
    for r in 0..p.ineq.nrows() {
        if p.ineq_rhs[r] == f64::INFINITY {
            continue;
        }
        let normal = -p.ineq.row(r).transpose();
        rows.push(Row { normal, rhs: -p.ineq_rhs[r] });
    }
    for i in 0..n {
        if p.lb[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            rows.push(Row { normal: e, rhs: p.lb[i] });
        }
        if p.ub[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            rows.push(Row { normal: e, rhs: -p.ub[i] });
        }
    }
    rows
}

/// Rotation `(c, s)` mapping `(a, b)` onto `(hypot(a, b), 0)`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

/// `J <- J G'` on columns `i`, `k`.
fn rotate_columns(j: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for r in 0..j.nrows() {
        let (ji, jk) = (j[(r, i)], j[(r, k)]);
        j[(r, i)] = c * ji + s * jk;
        j[(r, k)] = -s * ji + c * jk;
    }
}

/// Working factorization of the active set: `J = L^{-T} Q`, `R` upper triangular.
struct ActiveSet {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    rows: Vec<usize>,
    mult: Vec<f64>,
}

impl ActiveSet {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn add(&mut self, mut d: DVector<f64>, row: usize, mult: f64) {
        let n = self.j.nrows();
        let q = self.len();
        for i in (q + 1..n).rev() {
            let (c, s, h) = givens(d[i - 1], d[i]);
            d[i - 1] = h;
            d[i] = 0.0;
            rotate_columns(&mut self.j, i - 1, i, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.rows.push(row);
        self.mult.push(mult);
    }

    fn drop(&mut self, l: usize) {
        let q = self.len();
        self.rows.remove(l);
        self.mult.remove(l);
        for col in l..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        // Restore triangularity: zero the subdiagonal left by the removed column.
        for i in l..q - 1 {
            let (c, s, h) = givens(self.r[(i, i)], self.r[(i + 1, i)]);
            self.r[(i, i)] = h;
            self.r[(i + 1, i)] = 0.0;
            for col in i + 1..q - 1 {
                let (a, b) = (self.r[(i, col)], self.r[(i + 1, col)]);
                self.r[(i, col)] = c * a + s * b;
                self.r[(i + 1, col)] = -s * a + c * b;
            }
            rotate_columns(&mut self.j, i, i + 1, c, s);
        }
    }

    /// Solves `R[..q, ..q] r = d[..q]`.
    fn back_substitute(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.len();
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }
}

/// Solves with the default tolerance and iteration cap.
pub fn solve_default(problem: &QpProblem) -> Result<QpSolution, QpError> {
    solve(problem, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

pub fn solve(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    solve_traced(problem, tol, max_iter).map(|(s, _)| s)
}

/// Like [`solve`], also returning the objective after every full primal step.
pub fn solve_traced(
    problem: &QpProblem,
    tol: f64,
    max_iter: usize,
) -> Result<(QpSolution, Vec<f64>), QpError> {
    problem.validate()?;
    let n = problem.dim();
    let mut history = Vec::new();

    if (0..n).any(|i| problem.lb[i] > problem.ub[i]) {
        let x = DVector::zeros(n);
        let sol = QpSolution {
            objective: problem.objective(&x),
            kkt_residual: f64::INFINITY,
            x,
            iterations: 0,
            status: QpStatus::Infeasible,
        };
        return Ok((sol, history));
    }

    let sym = (&problem.hessian + problem.hessian.transpose()) * 0.5;
    let reg = &sym + DMatrix::identity(n, n) * REGULARIZATION;
    let chol = match reg.clone().cholesky() {
        Some(c) => c,
        None => {
            let min_eig = sym.symmetric_eigenvalues().min();
            return Err(QpError::NotPsd(min_eig));
        }
    };
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPsd(f64::NAN))?;

    let rows = collect_rows(problem);
    let mut x = chol.solve(&(-&problem.gradient));
    let mut active = ActiveSet {
        j: l_inv.transpose(),
        r: DMatrix::zeros(n, n),
        rows: Vec::new(),
        mult: Vec::new(),
    };
    let mut is_active = vec![false; rows.len()];
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(&reg * x)) + problem.gradient.dot(x);
    history.push(objective(&x));

    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // Most violated inactive constraint.
        let mut pick: Option<(usize, f64)> = None;
        for (k, row) in rows.iter().enumerate() {
            if is_active[k] {
                continue;
            }
            let slack = row.normal.dot(&x) - row.rhs;
            let floor = 1e-11 * (1.0 + row.rhs.abs());
            if slack < -floor && pick.is_none_or(|(_, s)| slack < s) {
                pick = Some((k, slack));
            }
        }
        let Some((p, _)) = pick else { break };
        let np = &rows[p].normal;
        let mut u_new = 0.0;

        loop {
            if iterations >= max_iter {
                status = QpStatus::MaxIter;
                break 'outer;
            }
            iterations += 1;

            let q = active.len();
            let d = active.j.transpose() * np;
            let mut z = DVector::zeros(n);
            for col in q..n {
                z.axpy(d[col], &active.j.column(col), 1.0);
            }
            let r = active.back_substitute(&d);

            let mut t_dual = f64::INFINITY;
            let mut drop_at = None;
            for (l, &rl) in r.iter().enumerate() {
                if rl > 1e-14 {
                    let ratio = active.mult[l] / rl;
                    if ratio < t_dual {
                        t_dual = ratio;
                        drop_at = Some(l);
                    }
                }
            }

            let d2_sq: f64 = d.rows(q, n - q).norm_squared();
            let dependent = d2_sq <= 1e-20 * d.norm_squared();
            let t_primal = if dependent {
                f64::INFINITY
            } else {
                let slack = np.dot(&x) - rows[p].rhs;
                -slack / z.dot(np)
            };

            let t = t_dual.min(t_primal);
            if !t.is_finite() {
                status = QpStatus::Infeasible;
                break 'outer;
            }

            if t_primal.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            for (m, rl) in active.mult.iter_mut().zip(&r) {
                *m -= t * rl;
            }
            u_new += t;

            if t_primal <= t_dual {
                active.add(d, p, u_new);
                is_active[p] = true;
                history.push(objective(&x));
                continue 'outer;
            }
            let l = drop_at.expect("finite dual step has a blocking constraint");
            is_active[active.rows[l]] = false;
            active.drop(l);
        }
    }

    // KKT certificate against the (symmetrized) unregularized problem.
    let mut stationarity = &sym * &x + &problem.gradient;
    let mut complementarity = 0.0_f64;
    let mut dual_infeas = 0.0_f64;
    for (&k, &m) in active.rows.iter().zip(&active.mult) {
        stationarity.axpy(-m, &rows[k].normal, 1.0);
        let slack = rows[k].normal.dot(&x) - rows[k].rhs;
        complementarity = complementarity.max((m * slack).abs());
        dual_infeas = dual_infeas.max(-m);
    }
    let kkt_residual = stationarity
        .amax()
        .max(problem.max_violation(&x))
        .max(complementarity)
        .max(dual_infeas);

    if status == QpStatus::Optimal && kkt_residual > tol {
        status = QpStatus::MaxIter;
    }

    let sol = QpSolution {
        objective: problem.objective(&x),
        x,
        kkt_residual,
        iterations,
        status,
    };
    Ok((sol, history))
}
