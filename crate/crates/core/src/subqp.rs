//! The SQP subproblem at `(x_k, λ_k)`:
//!
//! ```text
//! minimize ⟨∇φ(x_k), s⟩ + ½⟨Hs, s⟩ + g(Φ(x_k) + ∇Φ(x_k)s)  over  x_k + s ∈ Θ,
//! ```
//!
//! solved exactly by one convex (or stationary) QP per piece of `g`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kkt::CompositeProblem;
use crate::linalg::is_symmetric;
use crate::polyhedral::{normal_cone_dist, Polyhedron};
pub use crate::qp::{qp_solve, QpSolution, QpStatus};

/// Acceptance bound for the linearized KKT residual of a candidate.
pub const SUBPROBLEM_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SubproblemSpec {
    pub xk: DVector<f64>,
    pub lambdak: DVector<f64>,
    pub h: DMatrix<f64>,
    /// Localization radius on `‖(x_next − x_k, λ_next − λ_k)‖`; may be +∞.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSolution {
    pub x_next: DVector<f64>,
    pub lambda_next: DVector<f64>,
    pub piece_index: usize,
    pub qp_status: QpStatus,
    pub objective: f64,
    /// Linearized KKT residual at `(x_next, lambda_next)`.
    pub residual: f64,
}

/// Linearized data at `x_k`: `∇φ(x_k)`, `Φ(x_k)`, `∇Φ(x_k)`.
struct Linearization {
    grad_phi: DVector<f64>,
    z: DVector<f64>,
    jac: DMatrix<f64>,
}

impl Linearization {
    fn new(problem: &CompositeProblem, xk: &DVector<f64>) -> Self {
        Linearization {
            grad_phi: problem.phi.gradient(xk),
            z: problem.big_phi.value(xk),
            jac: problem.big_phi.jacobian(xk),
        }
    }

    fn y(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.z + &self.jac * s
    }
}

/// Residual of the subproblem KKT system at `(ξ, λ)`, in the same form as the
/// KKT residual of the problem but with linearized data.
pub fn linearized_residual(
    problem: &CompositeProblem,
    spec: &SubproblemSpec,
    xi: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<f64> {
    let lin = Linearization::new(problem, &spec.xk);
    residual_with(problem, &lin, &spec.h, &spec.xk, xi, lambda)
}

fn residual_with(
    problem: &CompositeProblem,
    lin: &Linearization,
    h: &DMatrix<f64>,
    xk: &DVector<f64>,
    xi: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<f64> {
    let s = xi - xk;
    let grad = &lin.grad_phi + h * &s + lin.jac.transpose() * lambda;
    let stationarity = normal_cone_dist(&problem.theta, xi, &(-grad))?;
    let y = lin.y(&s);
    let feas = (&y - problem.g.prox(&(lambda + &y))?).norm();
    Ok(stationarity + feas)
}

/// Cheap screen before the full residual: stationarity plus the subgradient gap.
fn screen(
    problem: &CompositeProblem,
    lin: &Linearization,
    h: &DMatrix<f64>,
    xk: &DVector<f64>,
    xi: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<f64> {
    let s = xi - xk;
    let grad = &lin.grad_phi + h * &s + lin.jac.transpose() * lambda;
    let stationarity = normal_cone_dist(&problem.theta, xi, &(-grad))?;
    let gap = match problem.g.subgradient_gap(&lin.y(&s), lambda) {
        Ok(g) => g,
        Err(Error::PointOutsideDomain) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(stationarity + gap)
}

/// Closest multiplier to `guess` that makes `(ξ, λ)` a subproblem KKT pair.
fn repair_multiplier(
    problem: &CompositeProblem,
    lin: &Linearization,
    h: &DMatrix<f64>,
    xk: &DVector<f64>,
    xi: &DVector<f64>,
    guess: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    let (n, m) = (problem.n(), problem.m());
    let s = xi - xk;
    let sub = match problem.g.subdifferential(&lin.y(&s)) {
        Ok(p) => p,
        Err(Error::PointOutsideDomain) => return Ok(None),
        Err(e) => return Err(e),
    };
    let theta = &problem.theta;
    let rows = theta.active_rows(xi);
    let aj = theta.a().select_rows(rows.iter());
    let (k, q) = (aj.nrows(), theta.n_eq());
    let nv = m + k + q;
    // λ ∈ ∂g(y);  ∇φ + Hs + ∇Φᵀλ + A_Jᵀμ + Eᵀν = 0;  μ ≥ 0
    let mut ineq = DMatrix::zeros(sub.n_ineq() + k, nv);
    ineq.view_mut((0, 0), (sub.n_ineq(), m)).copy_from(sub.a());
    ineq.view_mut((sub.n_ineq(), m), (k, k)).copy_from(&(-DMatrix::identity(k, k)));
    let mut b = DVector::zeros(sub.n_ineq() + k);
    b.rows_mut(0, sub.n_ineq()).copy_from(sub.b());
    let mut eq = DMatrix::zeros(sub.n_eq() + n, nv);
    eq.view_mut((0, 0), (sub.n_eq(), m)).copy_from(sub.e());
    eq.view_mut((sub.n_eq(), 0), (n, m)).copy_from(&lin.jac.transpose());
    eq.view_mut((sub.n_eq(), m), (n, k)).copy_from(&aj.transpose());
    eq.view_mut((sub.n_eq(), m + k), (n, q)).copy_from(&theta.e().transpose());
    let mut d = DVector::zeros(sub.n_eq() + n);
    d.rows_mut(0, sub.n_eq()).copy_from(sub.d());
    d.rows_mut(sub.n_eq(), n).copy_from(&(-(&lin.grad_phi + h * &s)));
    let poly = Polyhedron::new(ineq, b, eq, d)?;
    let mut qm = DMatrix::zeros(nv, nv);
    qm.view_mut((0, 0), (m, m)).fill_with_identity();
    let mut c = DVector::zeros(nv);
    c.rows_mut(0, m).copy_from(&(-guess));
    match qp_solve(&qm, &c, &poly, None) {
        Ok(sol) => Ok(Some(sol.x.rows(0, m).into_owned())),
        Err(Error::Infeasible) => Ok(None),
        Err(e) => Err(e),
    }
}

/// All KKT points of the subproblem found by piece enumeration that lie
/// within `delta` of `(x_k, λ_k)`, sorted by step length then objective.
pub fn solve_subproblem(problem: &CompositeProblem, spec: &SubproblemSpec) -> Result<Vec<SubproblemSolution>> {
    let (n, m) = (problem.n(), problem.m());
    if spec.xk.len() != n {
        return Err(Error::dim("x_k", n, spec.xk.len()));
    }
    if spec.lambdak.len() != m {
        return Err(Error::dim("lambda_k", m, spec.lambdak.len()));
    }
    if spec.h.nrows() != n || spec.h.ncols() != n {
        return Err(Error::dim("H", n, spec.h.nrows()));
    }
    if !is_symmetric(&spec.h, 1e-12 * (1.0 + spec.h.amax())) {
        return Err(Error::Validation("H symmetric".into()));
    }
    if !(spec.delta > 0.0) {
        return Err(Error::Validation("delta must be positive".into()));
    }
    let xk = &spec.xk;
    let h = &spec.h;
    let lin = Linearization::new(problem, xk);
    let constant = -lin.grad_phi.dot(xk) + 0.5 * xk.dot(&(h * xk));
    // ξ ∈ Θ, y free, y − ∇Φ ξ = Φ(x_k) − ∇Φ x_k
    let link_rhs = &lin.z - &lin.jac * xk;
    let mut link = DMatrix::zeros(m, n + m);
    link.view_mut((0, 0), (m, n)).copy_from(&(-&lin.jac));
    link.view_mut((0, n), (m, m)).fill_with_identity();

    let mut raw: Vec<SubproblemSolution> = Vec::new();
    for (i, piece) in problem.g.pieces().iter().enumerate() {
        // link rows first, so they survive the removal of dependent equalities
        let prod = problem.theta.product(&piece.c);
        let feasible = Polyhedron::new(
            prod.a().clone(),
            prod.b().clone(),
            crate::linalg::stack_rows(&[&link, prod.e()], n + m),
            crate::polyhedral::concat(&link_rhs, prod.d()),
        )?;
        let mut q = DMatrix::zeros(n + m, n + m);
        q.view_mut((0, 0), (n, n)).copy_from(h);
        q.view_mut((n, n), (m, m)).copy_from(&piece.a);
        let mut c = DVector::zeros(n + m);
        c.rows_mut(0, n).copy_from(&(&lin.grad_phi - h * xk));
        c.rows_mut(n, m).copy_from(&piece.lin);
        let sol = match qp_solve(&q, &c, &feasible, None) {
            Ok(s) => s,
            Err(Error::Infeasible) | Err(Error::Unbounded) => continue,
            Err(e) => return Err(e),
        };
        let xi = sol.x.rows(0, n).into_owned();
        let lambda = -sol.eq_mult.rows(0, m).into_owned();
        raw.push(SubproblemSolution {
            x_next: xi,
            lambda_next: lambda,
            piece_index: i,
            qp_status: sol.status,
            objective: sol.objective + constant + piece.alpha,
            residual: f64::NAN,
        });
    }
    if raw.is_empty() {
        return Err(Error::NoFeasiblePiece);
    }

    let mut valid: Vec<SubproblemSolution> = Vec::new();
    for mut cand in raw {
        let scale = 1.0 + cand.lambda_next.norm() + lin.grad_phi.norm();
        let mut ok = screen(problem, &lin, h, xk, &cand.x_next, &cand.lambda_next)? <= SUBPROBLEM_TOL * scale;
        if !ok {
            if let Some(lam) = repair_multiplier(problem, &lin, h, xk, &cand.x_next, &cand.lambda_next)? {
                if screen(problem, &lin, h, xk, &cand.x_next, &lam)? <= SUBPROBLEM_TOL * scale {
                    cand.lambda_next = lam;
                    ok = true;
                }
            }
        }
        if !ok {
            continue;
        }
        let duplicate = valid.iter().any(|v| {
            (&v.x_next - &cand.x_next).norm() <= 1e-10 * (1.0 + cand.x_next.norm())
                && (&v.lambda_next - &cand.lambda_next).norm() <= 1e-10 * (1.0 + cand.lambda_next.norm())
        });
        if duplicate {
            continue;
        }
        cand.residual = residual_with(problem, &lin, h, xk, &cand.x_next, &cand.lambda_next)?;
        if cand.residual <= SUBPROBLEM_TOL * scale {
            valid.push(cand);
        }
    }
    if valid.is_empty() {
        return Err(Error::NoFeasiblePiece);
    }
    let candidates = valid.len();
    let mut kept: Vec<SubproblemSolution> = valid
        .into_iter()
        .filter(|c| {
            let dx = (&c.x_next - xk).norm_squared();
            let dl = (&c.lambda_next - &spec.lambdak).norm_squared();
            (dx + dl).sqrt() <= spec.delta
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::AllCandidatesOutsideDelta {
            candidates,
            delta: spec.delta,
        });
    }
    kept.sort_by(|a, b| {
        let sa = (&a.x_next - xk).norm();
        let sb = (&b.x_next - xk).norm();
        sa.total_cmp(&sb)
            .then(a.objective.total_cmp(&b.objective))
            .then(a.piece_index.cmp(&b.piece_index))
    });
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::{Poly2, Poly2Map};
    use crate::plq::PlqFunction;
    use nalgebra::dvector;

    fn p1() -> CompositeProblem {
        CompositeProblem::new(
            Poly2::new(2.0, dvector![-2.0], DMatrix::identity(1, 1)).unwrap(),
            Poly2Map::affine(&DMatrix::identity(1, 1), &dvector![-1.0]).unwrap(),
            PlqFunction::indicator(Polyhedron::nonpos_orthant(1)).unwrap(),
            Polyhedron::whole(1),
        )
        .unwrap()
    }

    #[test]
    fn one_step_on_p1() {
        let spec = SubproblemSpec {
            xk: dvector![0.0],
            lambdak: dvector![0.0],
            h: DMatrix::identity(1, 1),
            delta: f64::INFINITY,
        };
        let sols = solve_subproblem(&p1(), &spec).unwrap();
        assert_eq!(sols.len(), 1);
        assert!((sols[0].x_next[0] - 1.0).abs() < 1e-12);
        assert!((sols[0].lambda_next[0] - 1.0).abs() < 1e-12);
        assert!(sols[0].residual <= 1e-9);
    }

    #[test]
    fn abs_outer_function_solves_two_piece_qps() {
        // min ½(x − 3)² + |x|: solution x = 2, λ = 1
        let problem = CompositeProblem::new(
            Poly2::new(4.5, dvector![-3.0], DMatrix::identity(1, 1)).unwrap(),
            Poly2Map::affine(&DMatrix::identity(1, 1), &dvector![0.0]).unwrap(),
            PlqFunction::abs(),
            Polyhedron::whole(1),
        )
        .unwrap();
        let spec = SubproblemSpec {
            xk: dvector![-1.0],
            lambdak: dvector![0.0],
            h: DMatrix::identity(1, 1),
            delta: f64::INFINITY,
        };
        let sols = solve_subproblem(&problem, &spec).unwrap();
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].piece_index, 1);
        assert!((sols[0].x_next[0] - 2.0).abs() < 1e-12);
        assert!((sols[0].lambda_next[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn localization_filters_far_candidates() {
        let spec = SubproblemSpec {
            xk: dvector![0.0],
            lambdak: dvector![0.0],
            h: DMatrix::identity(1, 1),
            delta: 0.5,
        };
        assert!(matches!(
            solve_subproblem(&p1(), &spec),
            Err(Error::AllCandidatesOutsideDelta { .. })
        ));
    }
}
