//! Primal active-set method for dense quadratic programs
//!
//! ```text
//! minimize ½ xᵀQx + cᵀx  subject to  Ax ≤ b, Ex = d.
//! ```
//!
//! The start comes from a phase-1 LP. Each iteration works in an orthonormal
//! null-space basis of the working set. Entering and leaving rows are picked
//! by lowest index among ties, which keeps the method from cycling on the
//! degenerate cone systems used by the diagnostics. Indefinite `Q` is allowed;
//! the result is then a KKT point that is locally optimal along the final
//! working set.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{independent_rows, lstsq, min_eigenvalue, null_space, stack_rows, symmetrize};
use crate::lp::find_feasible;
use crate::polyhedral::Polyhedron;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    /// Global minimizer (Q is PSD on the affine hull of the constraints).
    Optimal,
    /// KKT point of a nonconvex program.
    Stationary,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `Ax ≤ b` (nonnegative, zero off the working set).
    pub ineq_mult: DVector<f64>,
    /// Multipliers of `Ex = d`.
    pub eq_mult: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
}

impl QpSolution {
    /// Norm of `Qx + c + Aᵀμ + Eᵀν`.
    pub fn stationarity(&self, q: &DMatrix<f64>, c: &DVector<f64>, poly: &Polyhedron) -> f64 {
        (q * &self.x + c + poly.a().transpose() * &self.ineq_mult + poly.e().transpose() * &self.eq_mult)
            .norm()
    }
}

enum Step {
    Newton(DVector<f64>),
    Ray(DVector<f64>),
    None,
}

fn slack_tol(bi: f64) -> f64 {
    1e-9 * (1.0 + bi.abs())
}

fn objective(q: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(q * x)) + c.dot(x)
}

/// Direction to take inside the null space `z` of the working set.
fn choose_step(q: &DMatrix<f64>, g: &DVector<f64>, z: &DMatrix<f64>, scale: f64) -> Step {
    if z.ncols() == 0 {
        return Step::None;
    }
    let hz = symmetrize(&(z.transpose() * q * z));
    let gz = z.transpose() * g;
    let eig = SymmetricEigen::new(hz.clone());
    let tol = 1e-10 * scale;
    let (imin, lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if lmin < -tol {
        let mut d = z * eig.eigenvectors.column(imin);
        if g.dot(&d) > 0.0 {
            d = -d;
        }
        return Step::Ray(d);
    }
    if lmin > tol {
        let pz = hz.clone().cholesky().map(|ch| ch.solve(&(-&gz)));
        if let Some(pz) = pz {
            return Step::Newton(z * pz);
        }
    }
    let pz = lstsq(&hz, &(-&gz));
    if (&hz * &pz + &gz).norm() <= 1e-9 * (1.0 + gz.norm()) {
        return Step::Newton(z * pz);
    }
    let kernel = null_space(&hz);
    let dz = -(&kernel * (kernel.transpose() * &gz));
    Step::Ray(z * dz)
}

/// Solves the QP. `x0` is used as the start when it is feasible.
pub fn qp_solve(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    poly: &Polyhedron,
    x0: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    let n = poly.dim();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::dim("QP Hessian", n, q.nrows()));
    }
    if c.len() != n {
        return Err(Error::dim("QP linear term", n, c.len()));
    }
    let q = symmetrize(q);
    let (a, b, e, d) = (poly.a(), poly.b(), poly.e(), poly.d());
    let p = a.nrows();
    let eq_rows = independent_rows(e);
    let e_red = e.select_rows(eq_rows.iter());
    let d_red = DVector::from_iterator(eq_rows.len(), eq_rows.iter().map(|&i| d[i]));

    let mut x = match x0 {
        Some(x0) if x0.len() == n && poly.contains(x0, 1e-9)? => x0.clone(),
        _ => find_feasible(poly)?.ok_or(Error::Infeasible)?,
    };
    let scale = 1.0 + q.amax();

    let mut working: Vec<usize> = Vec::new();
    {
        let mut rows: Vec<DMatrix<f64>> = vec![e_red.clone()];
        for i in 0..p {
            if b[i] - a.row(i).dot(&x.transpose()) <= slack_tol(b[i]) {
                let trial = stack_rows(&[&rows[0], &a.rows(i, 1).into_owned()], n);
                if crate::linalg::rank(&trial) == trial.nrows() {
                    rows[0] = trial;
                    working.push(i);
                }
            }
        }
    }

    let max_iter = 100 * (n + p + 10);
    for _ in 0..max_iter {
        working.sort_unstable();
        let aw = a.select_rows(working.iter());
        let m = stack_rows(&[&e_red, &aw], n);
        let rhs = DVector::from_iterator(
            m.nrows(),
            d_red.iter().cloned().chain(working.iter().map(|&i| b[i])),
        );
        if m.nrows() > 0 {
            let resid = &m * &x - &rhs;
            if resid.amax() > 0.0 {
                x -= lstsq(&m, &resid);
            }
        }
        let z = null_space(&m);
        let g = &q * &x + c;
        let step = choose_step(&q, &g, &z, scale);
        let (dir, is_ray) = match step {
            Step::Newton(pv) if pv.norm() > 1e-13 * (1.0 + x.norm()) => (pv, false),
            Step::Ray(dv) => (dv, true),
            _ => {
                // stationary on the working set: check multiplier signs
                let mult = lstsq(&m.transpose(), &(-&g));
                let neq = e_red.nrows();
                let mtol = 1e-10 * (1.0 + g.norm());
                let leave = working
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mult[neq + k] < -mtol)
                    .map(|(k, &row)| (k, row))
                    .min_by_key(|&(_, row)| row);
                match leave {
                    Some((k, _)) => {
                        working.remove(k);
                        continue;
                    }
                    None => {
                        let mut ineq_mult = DVector::zeros(p);
                        for (k, &row) in working.iter().enumerate() {
                            ineq_mult[row] = mult[neq + k].max(0.0);
                        }
                        let mut eq_mult = DVector::zeros(e.nrows());
                        for (k, &row) in eq_rows.iter().enumerate() {
                            eq_mult[row] = mult[k];
                        }
                        let ze = null_space(&e_red);
                        let curvature = min_eigenvalue(&(ze.transpose() * &q * &ze));
                        let status = if curvature >= -1e-9 * scale {
                            QpStatus::Optimal
                        } else {
                            QpStatus::Stationary
                        };
                        let objective = objective(&q, c, &x);
                        return Ok(QpSolution {
                            x,
                            ineq_mult,
                            eq_mult,
                            status,
                            objective,
                        });
                    }
                }
            }
        };
        let dnorm = dir.norm();
        let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
        let mut blocking: Option<usize> = None;
        for i in 0..p {
            if working.contains(&i) {
                continue;
            }
            let ai = a.row(i);
            let rate = ai.dot(&dir.transpose());
            if rate > 1e-12 * ai.norm() * dnorm {
                let t = ((b[i] - ai.dot(&x.transpose())).max(0.0)) / rate;
                // rows are scanned in order, so ties keep the lowest index
                if t < alpha - 1e-15 || (blocking.is_none() && t <= alpha) {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        if alpha.is_infinite() {
            return Err(Error::Unbounded);
        }
        x += &dir * alpha;
        if let Some(j) = blocking {
            working.push(j);
        }
    }
    Err(Error::Numerical("active-set QP iteration limit reached".into()))
}
