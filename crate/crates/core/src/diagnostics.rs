//! Structural checks at a KKT pair: noncriticality, multiplier uniqueness,
//! second-order sufficiency, the local graph reduction of `∂g`, and sampled
//! calmness constants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kkt::CompositeProblem;
use crate::linalg::{from_rows_vec, symmetrize};
use crate::lp::{self, LpOutcome};
use crate::plq::{random_point, PlqFunction};
use crate::polyhedral::{critical_cone, project, tangent_cone, PolyCone, Polyhedron, FACE_ROW_CAP};
use crate::sqp::{run_sqp, DeltaRule, HessianMode, SqpConfig};

/// Largest number of sign patterns visited by the noncriticality search.
pub const NONCRITICAL_NODE_CAP: usize = 50_000;
/// Threshold on `q(w)` for `‖w‖∞ = 1` below which second-order sufficiency fails.
pub const SOSC_TOL: f64 = 1e-8;
/// Perturbed solutions farther than this from `(x̄, λ̄)` are not used.
pub const CALMNESS_NEIGHBORHOOD: f64 = 1.0;

const STRICT_TOL: f64 = 1e-9;
const ZERO_ROW_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    Noncritical,
    UniqueMultiplier,
    Sosc,
    Calmness,
    PrimalEstimateD,
    PrimalEstimateDplus,
    ReductionLemma,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::Noncritical => "noncritical",
            Condition::UniqueMultiplier => "unique_multiplier",
            Condition::Sosc => "sosc",
            Condition::Calmness => "calmness",
            Condition::PrimalEstimateD => "primal_estimate_D",
            Condition::PrimalEstimateDplus => "primal_estimate_Dplus",
            Condition::ReductionLemma => "reduction_lemma",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Holds,
    Fails,
    HeuristicHolds,
    HeuristicFails,
}

impl Outcome {
    pub fn is_positive(self) -> bool {
        matches!(self, Outcome::Holds | Outcome::HeuristicHolds)
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Holds => "holds",
            Outcome::Fails => "fails",
            Outcome::HeuristicHolds => "heuristic_holds",
            Outcome::HeuristicFails => "heuristic_fails",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Certificate {
    Vector(DVector<f64>),
    Scalar(f64),
}

impl std::fmt::Display for Certificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Certificate::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
                write!(f, "[{}]", parts.join(" "))
            }
            Certificate::Scalar(s) => write!(f, "{s:e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub condition: Condition,
    pub result: Outcome,
    pub certificate: Option<Certificate>,
    pub detail: String,
}

impl Verdict {
    fn new(condition: Condition, result: Outcome, certificate: Option<Certificate>, detail: impl Into<String>) -> Self {
        Verdict {
            condition,
            result,
            certificate,
            detail: detail.into(),
        }
    }

    pub fn holds(&self) -> bool {
        self.result.is_positive()
    }

    pub fn csv_header() -> &'static str {
        "condition,result,certificate,detail"
    }

    pub fn csv_row(&self) -> String {
        let cert = self.certificate.as_ref().map(|c| c.to_string()).unwrap_or_default();
        format!(
            "{},{},{},\"{}\"",
            self.condition,
            self.result,
            cert,
            self.detail.replace('"', "'")
        )
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.condition, self.result)?;
        if let Some(c) = &self.certificate {
            write!(f, " certificate {c}")?;
        }
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Row-by-row builder for the LP systems below.
struct LinSys {
    nv: usize,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    e: Vec<Vec<f64>>,
    d: Vec<f64>,
}

impl LinSys {
    fn new(nv: usize) -> Self {
        LinSys {
            nv,
            a: Vec::new(),
            b: Vec::new(),
            e: Vec::new(),
            d: Vec::new(),
        }
    }

    fn le(&mut self, row: Vec<f64>, rhs: f64) {
        self.a.push(row);
        self.b.push(rhs);
    }

    fn eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.e.push(row);
        self.d.push(rhs);
    }

    fn zero(&self) -> Vec<f64> {
        vec![0.0; self.nv]
    }

    fn unit(&self, j: usize, s: f64) -> Vec<f64> {
        let mut r = self.zero();
        r[j] = s;
        r
    }

    /// `lo ≤ x_j ≤ hi` for `j` in `range`.
    fn bounds(&mut self, range: std::ops::Range<usize>, lo: f64, hi: f64) {
        for j in range {
            let up = self.unit(j, 1.0);
            self.le(up, hi);
            let down = self.unit(j, -1.0);
            self.le(down, -lo);
        }
    }

    fn poly(&self) -> Result<Polyhedron> {
        Polyhedron::new(
            from_rows_vec(&self.a, self.nv),
            DVector::from_vec(self.b.clone()),
            from_rows_vec(&self.e, self.nv),
            DVector::from_vec(self.d.clone()),
        )
    }

    fn maximize(&self, j: usize, sign: f64) -> Result<Option<(f64, DVector<f64>)>> {
        let c = DVector::from_vec(self.unit(j, sign));
        Ok(match lp::maximize(&c, &self.poly()?)? {
            LpOutcome::Optimal { x, value } => Some((value, x)),
            LpOutcome::Unbounded => Some((f64::INFINITY, DVector::zeros(self.nv))),
            LpOutcome::Infeasible => None,
        })
    }
}

fn normalize_inf(w: &DVector<f64>) -> DVector<f64> {
    let s = w.amax();
    if s > 0.0 {
        w / s
    } else {
        w.clone()
    }
}

/// How a cone row sits in the hyperplane arrangement.
#[derive(Clone, Copy, Debug)]
enum RowRef {
    /// The row vanishes identically on the space, so it is always active.
    Zero,
    Hyp(usize, f64),
}

#[derive(Default)]
struct Arrangement {
    hyps: Vec<DVector<f64>>,
}

impl Arrangement {
    fn add(&mut self, row: DVector<f64>) -> RowRef {
        let norm = row.norm();
        if norm <= ZERO_ROW_TOL {
            return RowRef::Zero;
        }
        let u = row / norm;
        for (k, h) in self.hyps.iter().enumerate() {
            if (&u - h).norm() < 1e-9 {
                return RowRef::Hyp(k, 1.0);
            }
            if (&u + h).norm() < 1e-9 {
                return RowRef::Hyp(k, -1.0);
            }
        }
        self.hyps.push(u);
        RowRef::Hyp(self.hyps.len() - 1, 1.0)
    }
}

fn row_sign(r: RowRef, sigma: &[i8]) -> i8 {
    match r {
        RowRef::Zero => 0,
        RowRef::Hyp(k, o) => {
            if o > 0.0 {
                sigma[k]
            } else {
                -sigma[k]
            }
        }
    }
}

/// Data of the critical linearization `0 ∈ ∇²L w + ∇Φᵀu + N_{K_Θ}(w)`,
/// `u ∈ D(∂g)(Φ(x̄), λ̄)(∇Φ w)`.
struct Linearization {
    n: usize,
    m: usize,
    hess: DMatrix<f64>,
    jac: DMatrix<f64>,
    k_theta: PolyCone,
    members: Vec<(DMatrix<f64>, PolyCone)>,
}

impl Linearization {
    fn new(problem: &CompositeProblem, xbar: &DVector<f64>, lambdabar: &DVector<f64>) -> Result<Self> {
        problem.require_kkt(xbar, lambdabar)?;
        let grad = problem.grad_lagrangian(xbar, lambdabar)?;
        let k_theta = critical_cone(&problem.theta, xbar, &(-grad))?;
        let z = problem.big_phi.value(xbar);
        let members = problem
            .g
            .critical_members(&z, lambdabar)?
            .into_iter()
            .map(|(i, k)| (problem.g.pieces()[i].a.clone(), k))
            .collect();
        Ok(Linearization {
            n: problem.n(),
            m: problem.m(),
            hess: problem.hess_lagrangian(lambdabar),
            jac: problem.big_phi.jacobian(xbar),
            k_theta,
            members,
        })
    }
}

struct Cells<'a> {
    lin: &'a Linearization,
    arr: Arrangement,
    theta_rows: Vec<RowRef>,
    member_ineq: Vec<Vec<RowRef>>,
    member_eq: Vec<Vec<RowRef>>,
    allowed: Vec<Vec<i8>>,
    nodes: usize,
}

impl<'a> Cells<'a> {
    fn new(lin: &'a Linearization) -> Self {
        let mut arr = Arrangement::default();
        let kt = &lin.k_theta;
        let theta_rows: Vec<RowRef> = (0..kt.a().nrows()).map(|r| arr.add(kt.a().row(r).transpose())).collect();
        let mut member_ineq = Vec::new();
        let mut member_eq = Vec::new();
        for (_, k) in &lin.members {
            let pa = k.a() * &lin.jac;
            let pe = k.e() * &lin.jac;
            member_ineq.push((0..pa.nrows()).map(|r| arr.add(pa.row(r).transpose())).collect());
            member_eq.push((0..pe.nrows()).map(|r| arr.add(pe.row(r).transpose())).collect());
        }
        let mut allowed = vec![vec![-1i8, 0, 1]; arr.hyps.len()];
        for r in &theta_rows {
            if let RowRef::Hyp(k, o) = *r {
                let bad = if o > 0.0 { 1 } else { -1 };
                allowed[k].retain(|&s| s != bad);
            }
        }
        Cells {
            lin,
            arr,
            theta_rows,
            member_ineq,
            member_eq,
            allowed,
            nodes: 0,
        }
    }

    /// Sign rows on `(w, s)` shared by the pruning and the leaf systems.
    fn sign_rows(&self, sys: &mut LinSys, sigma: &[i8], s_col: usize) -> bool {
        let n = self.lin.n;
        for r in 0..self.lin.k_theta.e().nrows() {
            let mut row = sys.zero();
            for j in 0..n {
                row[j] = self.lin.k_theta.e()[(r, j)];
            }
            sys.eq(row, 0.0);
        }
        let mut strict = false;
        for (k, &s) in sigma.iter().enumerate() {
            let h = &self.arr.hyps[k];
            let mut row = sys.zero();
            match s {
                0 => {
                    for j in 0..n {
                        row[j] = h[j];
                    }
                    sys.eq(row, 0.0);
                }
                _ => {
                    // s·⟨h, w⟩ ≥ slack  ⇔  −s·⟨h, w⟩ + slack ≤ 0
                    for j in 0..n {
                        row[j] = -f64::from(s) * h[j];
                    }
                    row[s_col] = 1.0;
                    sys.le(row, 0.0);
                    strict = true;
                }
            }
        }
        sys.bounds(0..n, -1.0, 1.0);
        strict
    }

    fn feasible(&self, sigma: &[i8]) -> Result<bool> {
        let n = self.lin.n;
        let mut sys = LinSys::new(n + 1);
        let strict = self.sign_rows(&mut sys, sigma, n);
        if !strict {
            return Ok(true);
        }
        let top = sys.unit(n, 1.0);
        sys.le(top, 1.0);
        Ok(matches!(sys.maximize(n, 1.0)?, Some((v, _)) if v > STRICT_TOL))
    }

    /// Searches the cell with full sign vector `sigma` for a nonzero `w`.
    fn leaf(&self, sigma: &[i8]) -> Result<Option<DVector<f64>>> {
        let lin = self.lin;
        let (n, m) = (lin.n, lin.m);
        let inside: Vec<usize> = (0..lin.members.len())
            .filter(|&i| {
                self.member_ineq[i].iter().all(|&r| row_sign(r, sigma) <= 0)
                    && self.member_eq[i].iter().all(|&r| row_sign(r, sigma) == 0)
            })
            .collect();
        if inside.is_empty() {
            return Ok(None);
        }
        let kt = &lin.k_theta;
        let theta_active: Vec<usize> = (0..self.theta_rows.len())
            .filter(|&r| row_sign(self.theta_rows[r], sigma) == 0)
            .collect();
        // columns: w | u | s | μ_Θ | ν_Θ | (μ_i, ν_i) per member inside
        let s_col = n + m;
        let mut col = s_col + 1;
        let mu_t = col;
        col += theta_active.len();
        let nu_t = col;
        col += kt.e().nrows();
        let mut blocks = Vec::new();
        for &i in &inside {
            let k = &lin.members[i].1;
            let act: Vec<usize> = (0..k.a().nrows())
                .filter(|&r| row_sign(self.member_ineq[i][r], sigma) == 0)
                .collect();
            let mu = col;
            col += act.len();
            let nu = col;
            col += k.e().nrows();
            blocks.push((i, act, mu, nu));
        }
        let mut sys = LinSys::new(col);
        let strict = self.sign_rows(&mut sys, sigma, s_col);
        if strict {
            let top = sys.unit(s_col, 1.0);
            sys.le(top, 1.0);
        } else {
            let fix = sys.unit(s_col, 1.0);
            sys.eq(fix, 0.0);
        }
        for c in mu_t..nu_t {
            let r = sys.unit(c, -1.0);
            sys.le(r, 0.0);
        }
        // H w + Jᵀu + A_actᵀ μ + Eᵀ ν = 0
        for row_i in 0..n {
            let mut row = sys.zero();
            for j in 0..n {
                row[j] = lin.hess[(row_i, j)];
            }
            for j in 0..m {
                row[n + j] = lin.jac[(j, row_i)];
            }
            for (t, &r) in theta_active.iter().enumerate() {
                row[mu_t + t] = kt.a()[(r, row_i)];
            }
            for r in 0..kt.e().nrows() {
                row[nu_t + r] = kt.e()[(r, row_i)];
            }
            sys.eq(row, 0.0);
        }
        // u − Aᵢ J w − aᵢᵀ μᵢ − eᵢᵀ νᵢ = 0 for every member containing J w
        for (i, act, mu, nu) in &blocks {
            let (ai, k) = &lin.members[*i];
            let aj = ai * &lin.jac;
            for c in *mu..*mu + act.len() {
                let r = sys.unit(c, -1.0);
                sys.le(r, 0.0);
            }
            for row_i in 0..m {
                let mut row = sys.zero();
                row[n + row_i] = 1.0;
                for j in 0..n {
                    row[j] = -aj[(row_i, j)];
                }
                for (t, &r) in act.iter().enumerate() {
                    row[mu + t] = -k.a()[(r, row_i)];
                }
                for r in 0..k.e().nrows() {
                    row[nu + r] = -k.e()[(r, row_i)];
                }
                sys.eq(row, 0.0);
            }
        }
        if strict {
            if let Some((v, x)) = sys.maximize(s_col, 1.0)? {
                if v > STRICT_TOL {
                    return Ok(Some(normalize_inf(&x.rows(0, n).into_owned())));
                }
            }
            return Ok(None);
        }
        for j in 0..n {
            for sign in [1.0, -1.0] {
                if let Some((v, x)) = sys.maximize(j, sign)? {
                    if v > STRICT_TOL {
                        return Ok(Some(normalize_inf(&x.rows(0, n).into_owned())));
                    }
                }
            }
        }
        Ok(None)
    }

    fn search(&mut self, sigma: &mut Vec<i8>) -> Result<Option<DVector<f64>>> {
        self.nodes += 1;
        if self.nodes > NONCRITICAL_NODE_CAP {
            return Err(Error::TooManyFaces {
                count: self.nodes,
                cap: NONCRITICAL_NODE_CAP,
            });
        }
        if !self.feasible(sigma)? {
            return Ok(None);
        }
        let k = sigma.len();
        if k == self.arr.hyps.len() {
            return self.leaf(sigma);
        }
        for s in self.allowed[k].clone() {
            sigma.push(s);
            let found = self.search(sigma)?;
            sigma.pop();
            if found.is_some() {
                return Ok(found);
            }
        }
        Ok(None)
    }
}

/// Decides whether `λ̄` is noncritical by searching every cell of the
/// hyperplane arrangement cut out by the rows of `K_Θ` and of the critical
/// members of `g`. On a fixed cell the memberships and active rows are fixed,
/// so the linearized inclusion becomes an LP in `(w, u, multipliers)`.
pub fn check_noncritical(problem: &CompositeProblem, xbar: &DVector<f64>, lambdabar: &DVector<f64>) -> Result<Verdict> {
    let lin = Linearization::new(problem, xbar, lambdabar)?;
    let mut cells = Cells::new(&lin);
    let found = cells.search(&mut Vec::new())?;
    let detail = format!("{} sign patterns searched", cells.nodes);
    Ok(match found {
        Some(w) => Verdict::new(
            Condition::Noncritical,
            Outcome::Fails,
            Some(Certificate::Vector(w)),
            format!("critical direction found; {detail}"),
        ),
        None => Verdict::new(Condition::Noncritical, Outcome::Holds, None, detail),
    })
}

/// `Λ(x̄) = {λ̄}` checked through the multiplier polyhedron and through the
/// dual cone condition; the two answers must agree.
pub fn check_unique_multiplier(
    problem: &CompositeProblem,
    xbar: &DVector<f64>,
    lambdabar: &DVector<f64>,
) -> Result<Verdict> {
    let lin = Linearization::new(problem, xbar, lambdabar)?;
    let m = lin.m;

    // geometric route: Λ(x̄) has zero width in every coordinate
    let set = problem.multiplier_set(xbar)?;
    let mut width_dir: Option<DVector<f64>> = None;
    for j in 0..m {
        let mut c = DVector::zeros(m);
        c[j] = 1.0;
        let hi = lp::maximize(&c, &set)?.value().unwrap_or(f64::NAN);
        let lo = lp::minimize(&c, &set)?.value().unwrap_or(f64::NAN);
        if !(hi - lo <= 1e-7 * (1.0 + lambdabar.amax())) {
            width_dir = Some(c);
            break;
        }
    }
    let geometric_unique = width_dir.is_none();

    // dual route: u ∈ ∩ K_iᵒ and −∇Φᵀu ∈ K_Θᵒ forces u = 0
    let kt = &lin.k_theta;
    let mut col = m;
    let mut layout = Vec::new();
    for (_, k) in &lin.members {
        layout.push((col, col + k.a().nrows()));
        col += k.a().nrows() + k.e().nrows();
    }
    let mu_t = col;
    let nu_t = mu_t + kt.a().nrows();
    let nv = nu_t + kt.e().nrows();
    let mut sys = LinSys::new(nv);
    sys.bounds(0..m, -1.0, 1.0);
    for ((_, k), &(mu, nu)) in lin.members.iter().zip(layout.iter()) {
        for c in mu..mu + k.a().nrows() {
            let r = sys.unit(c, -1.0);
            sys.le(r, 0.0);
        }
        for row_i in 0..m {
            let mut row = sys.unit(row_i, 1.0);
            for r in 0..k.a().nrows() {
                row[mu + r] = -k.a()[(r, row_i)];
            }
            for r in 0..k.e().nrows() {
                row[nu + r] = -k.e()[(r, row_i)];
            }
            sys.eq(row, 0.0);
        }
    }
    for c in mu_t..nu_t {
        let r = sys.unit(c, -1.0);
        sys.le(r, 0.0);
    }
    for row_i in 0..lin.n {
        let mut row = sys.zero();
        for j in 0..m {
            row[j] = -lin.jac[(j, row_i)];
        }
        for r in 0..kt.a().nrows() {
            row[mu_t + r] = -kt.a()[(r, row_i)];
        }
        for r in 0..kt.e().nrows() {
            row[nu_t + r] = -kt.e()[(r, row_i)];
        }
        sys.eq(row, 0.0);
    }
    let mut dual_cert: Option<DVector<f64>> = None;
    'outer: for j in 0..m {
        for sign in [1.0, -1.0] {
            if let Some((v, x)) = sys.maximize(j, sign)? {
                if v > STRICT_TOL {
                    dual_cert = Some(normalize_inf(&x.rows(0, m).into_owned()));
                    break 'outer;
                }
            }
        }
    }
    let dual_unique = dual_cert.is_none();
    if geometric_unique != dual_unique {
        return Err(Error::Numerical(format!(
            "multiplier uniqueness routes disagree (geometric {geometric_unique}, dual {dual_unique})"
        )));
    }
    Ok(if dual_unique {
        Verdict::new(
            Condition::UniqueMultiplier,
            Outcome::Holds,
            None,
            "multiplier set and dual condition agree",
        )
    } else {
        Verdict::new(
            Condition::UniqueMultiplier,
            Outcome::Fails,
            dual_cert.map(Certificate::Vector),
            "multiplier set has positive width; dual condition admits u != 0",
        )
    })
}

/// Minimum of `wᵀQw` over one cone with `‖w‖∞ = 1`, by multistart local QP.
fn cone_minimum<R: Rng>(
    q: &DMatrix<f64>,
    cone: &PolyCone,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, DVector<f64>)> {
    let n = cone.dim();
    let mut best = (f64::INFINITY, DVector::zeros(n));
    let consider = |w: &DVector<f64>, best: &mut (f64, DVector<f64>)| {
        let w = normalize_inf(w);
        let val = w.dot(&(q * &w));
        if val < best.0 {
            *best = (val, w);
        }
    };

    let lin = cone.lineality_basis();
    if lin.ncols() > 0 {
        let ql = symmetrize(&(lin.transpose() * q * &lin));
        let eig = SymmetricEigen::new(ql);
        let (k, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        consider(&(&lin * eig.eigenvectors.column(k)), &mut best);
    }
    let rays = match cone.extreme_rays(FACE_ROW_CAP) {
        Ok(r) => r,
        Err(Error::TooManyRows { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    for r in &rays {
        consider(r, &mut best);
    }

    let boxed = Polyhedron::boxed(&DVector::from_element(n, -1.0), &DVector::from_element(n, 1.0))?;
    let mut faces = Vec::new();
    for j in 0..n {
        for s in [1.0, -1.0] {
            let mut row = DMatrix::zeros(1, n);
            row[(0, j)] = 1.0;
            let face = cone.poly().intersect(&boxed)?.with_equalities(&row, &DVector::from_element(1, s))?;
            if lp::find_feasible(&face)?.is_some() {
                faces.push((j, s, face));
            }
        }
    }
    if faces.is_empty() {
        return Ok(best);
    }
    let q2 = q * 2.0;
    let zero = DVector::zeros(n);
    let mut starts: Vec<(usize, DVector<f64>)> = Vec::new();
    for r in &rays {
        let w = normalize_inf(r);
        let j = w.iamax();
        if let Some(f) = faces.iter().position(|(fj, s, _)| *fj == j && (w[j] - s).abs() < 1e-12) {
            starts.push((f, w));
        }
    }
    for t in 0..samples {
        let f = t % faces.len();
        if let Some(p) = random_point(&faces[f].2, rng, 1.0)? {
            starts.push((f, p));
        }
    }
    for (f, start) in starts {
        consider(&start, &mut best);
        match crate::qp::qp_solve(&q2, &zero, &faces[f].2, Some(&start)) {
            Ok(sol) => consider(&sol.x, &mut best),
            Err(Error::Numerical(_)) | Err(Error::Infeasible) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

/// Sampled check that `⟨∇²L w, w⟩ + d²g(Φ(x̄), λ̄)(∇Φ w) > 0` on `𝒟 \ {0}`.
pub fn check_sosc<R: Rng>(
    problem: &CompositeProblem,
    xbar: &DVector<f64>,
    lambdabar: &DVector<f64>,
    samples: usize,
    rng: &mut R,
) -> Result<Verdict> {
    let lin = Linearization::new(problem, xbar, lambdabar)?;
    let mut all_trivial = true;
    let mut worst: (f64, DVector<f64>) = (f64::INFINITY, DVector::zeros(lin.n));
    for (ai, k) in &lin.members {
        let cone = lin.k_theta.intersect(&k.preimage(&lin.jac)?)?;
        if cone.is_trivial()? {
            continue;
        }
        all_trivial = false;
        let q = symmetrize(&(&lin.hess + lin.jac.transpose() * ai * &lin.jac));
        let found = cone_minimum(&q, &cone, samples, rng)?;
        if found.0 < worst.0 {
            worst = found;
        }
    }
    if all_trivial {
        return Ok(Verdict::new(Condition::Sosc, Outcome::HeuristicHolds, None, "D trivial"));
    }
    Ok(if worst.0 > SOSC_TOL {
        Verdict::new(
            Condition::Sosc,
            Outcome::HeuristicHolds,
            Some(Certificate::Scalar(worst.0)),
            format!("smallest sampled curvature {:e}", worst.0),
        )
    } else {
        Verdict::new(
            Condition::Sosc,
            Outcome::HeuristicFails,
            Some(Certificate::Vector(worst.1)),
            format!("curvature {:e} along the certificate", worst.0),
        )
    })
}

fn ball_point<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    if dim == 0 {
        return DVector::zeros(0);
    }
    let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = g.norm();
    if norm == 0.0 {
        return DVector::zeros(dim);
    }
    let r = radius * rng.random_range(0.0f64..1.0).powf(1.0 / dim as f64);
    g * (r / norm)
}

fn unit_sphere<R: Rng>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 1e-12 {
            return g / norm;
        }
    }
}

/// Counts `(violations, tested)` of the two graph inclusions at radius `eps`.
fn reduction_violations(
    g: &PlqFunction,
    zbar: &DVector<f64>,
    vbar: &DVector<f64>,
    eps: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = g.dim();
    let members = g.critical_members(zbar, vbar)?;
    let active = g.active_indices(zbar)?;
    let mut violations = 0;
    let mut tested = 0;

    // graph of ∂g near (z̄, v̄), shifted to the origin
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < n_samples && attempts < 50 * n_samples.max(1) {
        attempts += 1;
        let piece = &g.pieces()[active[attempts % active.len()]];
        let t = tangent_cone(&piece.c, zbar)?;
        let dir = random_point(t.poly(), &mut rng, 1.0)?.unwrap_or_else(|| DVector::zeros(m));
        let r = if rng.random_range(0.0..1.0) < 0.25 {
            0.0
        } else {
            rng.random_range(0.0..0.5 * eps)
        };
        let z = if dir.norm() > 1e-12 {
            zbar + &dir * (r / dir.norm())
        } else {
            zbar.clone()
        };
        let sub = match g.subdifferential(&z) {
            Ok(s) => s,
            Err(Error::PointOutsideDomain) => continue,
            Err(e) => return Err(e),
        };
        let target = vbar + ball_point(&mut rng, m, 0.5 * eps);
        let v = match project(&sub, &target) {
            Ok(v) => v,
            Err(Error::EmptyPolyhedron) => continue,
            Err(e) => return Err(e),
        };
        let (w, u) = (&z - zbar, &v - vbar);
        if (w.norm_squared() + u.norm_squared()).sqrt() > eps {
            continue;
        }
        accepted += 1;
        tested += 1;
        if !g.proto_derivative_contains(zbar, vbar, &w, &u, 1e-6)? {
            violations += 1;
        }
    }

    // graph of D(∂g)(z̄, v̄) scaled into the ε-ball
    for t in 0..n_samples {
        let (_, k) = &members[t % members.len()];
        let Some(w) = random_point(k.poly(), &mut rng, 1.0)? else { continue };
        let inside: Vec<&(usize, PolyCone)> = members
            .iter()
            .filter(|(_, kj)| kj.contains(&w, 1e-9).unwrap_or(false))
            .collect();
        let mut nv = m;
        let mut layout = Vec::new();
        for (_, kj) in &inside {
            let act = kj.poly().active_rows(&w);
            layout.push((nv, act.clone()));
            nv += act.len() + kj.e().nrows();
        }
        let mut sys = LinSys::new(nv);
        for ((i, kj), (off, act)) in inside.iter().zip(layout.iter()) {
            let aw = &g.pieces()[*i].a * &w;
            for c in *off..*off + act.len() {
                let r = sys.unit(c, -1.0);
                sys.le(r, 0.0);
            }
            let nu = off + act.len();
            for row_i in 0..m {
                let mut row = sys.unit(row_i, 1.0);
                for (t, &r) in act.iter().enumerate() {
                    row[off + t] = -kj.a()[(r, row_i)];
                }
                for r in 0..kj.e().nrows() {
                    row[nu + r] = -kj.e()[(r, row_i)];
                }
                sys.eq(row, aw[row_i]);
            }
        }
        let Some(x) = random_point(&sys.poly()?, &mut rng, 10.0)? else { continue };
        let u = x.rows(0, m).into_owned();
        let norm = (w.norm_squared() + u.norm_squared()).sqrt();
        let scale = if norm > 0.0 {
            eps * rng.random_range(0.0..1.0) / norm
        } else {
            0.0
        };
        let (z, v) = (zbar + &w * scale, vbar + &u * scale);
        tested += 1;
        let ok = match g.subgradient_gap(&z, &v) {
            Ok(gap) => gap <= 1e-7 * (1.0 + v.norm()),
            Err(Error::PointOutsideDomain) => false,
            Err(e) => return Err(e),
        };
        if !ok {
            violations += 1;
        }
    }
    Ok((violations, tested))
}

/// Sampled check that `gph ∂g − (z̄, v̄)` and `gph D(∂g)(z̄, v̄)` coincide in
/// the ball of radius `eps`. On failure the largest passing radius found by
/// bisection is returned as the certificate.
pub fn verify_reduction_lemma<R: Rng>(
    g: &PlqFunction,
    zbar: &DVector<f64>,
    vbar: &DVector<f64>,
    eps: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Verdict> {
    if !(eps > 0.0) {
        return Err(Error::Validation("eps must be positive".into()));
    }
    let seed: u64 = rng.random();
    let (violations, tested) = reduction_violations(g, zbar, vbar, eps, n_samples, seed)?;
    if violations == 0 {
        return Ok(Verdict::new(
            Condition::ReductionLemma,
            Outcome::Holds,
            None,
            format!("{tested} graph pairs, 0 violations"),
        ));
    }
    let (mut lo, mut hi) = (0.0, eps);
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if reduction_violations(g, zbar, vbar, mid, n_samples, seed)?.0 == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Verdict::new(
        Condition::ReductionLemma,
        Outcome::Fails,
        Some(Certificate::Scalar(lo)),
        format!("{violations} of {tested} graph pairs violate; largest passing radius {lo:e}"),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalmnessMode {
    /// `(‖x − x̄‖ + dist(λ, Λ(x̄))) / (‖v‖ + ‖p‖)`.
    Full,
    /// `‖x − x̄‖ / (‖P_𝒟(v)‖ + ‖p‖)`.
    PrimalD,
    /// `‖x − x̄‖ / (‖P_𝒟₊(v)‖ + ‖p‖)`.
    PrimalDplus,
    /// `(‖x − x̄‖ + ‖λ − λ̄‖) / (‖v‖ + ‖p‖)`, the isolated form.
    Isolated,
}

impl CalmnessMode {
    fn condition(self) -> Condition {
        match self {
            CalmnessMode::Full | CalmnessMode::Isolated => Condition::Calmness,
            CalmnessMode::PrimalD => Condition::PrimalEstimateD,
            CalmnessMode::PrimalDplus => Condition::PrimalEstimateDplus,
        }
    }
}

impl std::str::FromStr for CalmnessMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CalmnessMode::Full),
            "primal_D" => Ok(CalmnessMode::PrimalD),
            "primal_Dplus" => Ok(CalmnessMode::PrimalDplus),
            "isolated" => Ok(CalmnessMode::Isolated),
            other => Err(Error::Validation(format!("unknown calmness mode {other:?}"))),
        }
    }
}

/// Raw output of the calmness sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct CalmnessEstimate {
    pub radii: Vec<f64>,
    /// Largest observed ratio per radius.
    pub kappa: Vec<f64>,
    /// Largest `(‖x − x̄‖ + dist(λ, Λ(x̄))) / r(x, λ)` per radius, with `r` the
    /// unperturbed KKT residual.
    pub residual_kappa: Vec<f64>,
    /// Samples without a usable perturbed solution, per radius.
    pub skipped: Vec<usize>,
}

/// Solves the perturbed KKT system near `(x̄, λ̄)`; warm starts are `x̄` and
/// then `x̄ ± √ρ eⱼ` projected onto Θ.
fn perturbed_solution(
    problem: &CompositeProblem,
    xbar: &DVector<f64>,
    lambdabar: &DVector<f64>,
    rho: f64,
    lambda_set: Option<&Polyhedron>,
) -> Result<Option<(DVector<f64>, DVector<f64>)>> {
    let n = problem.n();
    let config = SqpConfig {
        hessian_mode: HessianMode::Exact,
        tol: 1e-12,
        max_iter: 200,
        delta_rule: DeltaRule::Fixed(10.0 * rho.sqrt()),
        ..Default::default()
    };
    let mut starts = vec![xbar.clone()];
    for j in 0..n {
        for s in [1.0, -1.0] {
            let mut x = xbar.clone();
            x[j] += s * rho.sqrt();
            starts.push(project(&problem.theta, &x)?);
        }
    }
    // With a nonunique multiplier the subproblem may jump to another element
    // of Λ(x̄), which the local radius rejects; retry unlocalized from x̄.
    let mut runs: Vec<(DVector<f64>, SqpConfig)> = starts.into_iter().map(|x0| (x0, config.clone())).collect();
    runs.push((
        xbar.clone(),
        SqpConfig {
            delta_rule: DeltaRule::Infinite,
            ..config.clone()
        },
    ));
    for (x0, config) in runs {
        let trace = match run_sqp(problem, &x0, lambdabar, &config) {
            Ok(t) => t,
            Err(
                Error::SubproblemFailure { .. }
                | Error::MaxIterReached { .. }
                | Error::Numerical(_)
                | Error::Unbounded
                | Error::Infeasible,
            ) => continue,
            Err(e) => return Err(e),
        };
        let last = trace.last().expect("nonempty trace");
        let dl = match lambda_set {
            Some(set) => project(set, &last.lambda)?.metric_distance(&last.lambda),
            None => (&last.lambda - lambdabar).norm(),
        };
        let dist = ((&last.x - xbar).norm_squared() + dl * dl).sqrt();
        if dist <= CALMNESS_NEIGHBORHOOD {
            return Ok(Some((last.x.clone(), last.lambda.clone())));
        }
    }
    Ok(None)
}

/// Samples `(v, p)` on spheres of the given radii and records the largest
/// ratio of solution displacement to perturbation size. The same unit
/// directions are reused at every radius.
pub fn calmness_samples<R: Rng>(
    problem: &CompositeProblem,
    xbar: &DVector<f64>,
    lambdabar: &DVector<f64>,
    radii: &[f64],
    n_samples: usize,
    mode: CalmnessMode,
    rng: &mut R,
) -> Result<CalmnessEstimate> {
    problem.require_kkt(xbar, lambdabar)?;
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Validation("radii must be positive".into()));
    }
    let (n, m) = (problem.n(), problem.m());
    let lambda_set = problem.multiplier_set(xbar)?;
    let cone = match mode {
        CalmnessMode::Full | CalmnessMode::Isolated => None,
        CalmnessMode::PrimalD => Some(problem.cone_d(xbar, lambdabar)?),
        CalmnessMode::PrimalDplus => Some(problem.subspace_dplus(xbar, lambdabar)?),
    };
    // isolated calmness is measured against λ̄ itself
    let near_set = (mode != CalmnessMode::Isolated).then_some(&lambda_set);
    let dirs: Vec<DVector<f64>> = (0..n_samples).map(|_| unit_sphere(rng, n + m)).collect();
    let mut out = CalmnessEstimate {
        radii: radii.to_vec(),
        kappa: Vec::new(),
        residual_kappa: Vec::new(),
        skipped: Vec::new(),
    };
    for &rho in radii {
        let (mut kappa, mut rkappa, mut skipped) = (0.0f64, 0.0f64, 0usize);
        for d in &dirs {
            let v = d.rows(0, n) * rho;
            let p = d.rows(n, m) * rho;
            let perturbed = problem.perturbed_problem(&v, &p)?;
            let Some((x, lambda)) = perturbed_solution(&perturbed, xbar, lambdabar, rho, near_set)? else {
                skipped += 1;
                continue;
            };
            let dx = (&x - xbar).norm();
            let dl = problem.multiplier_distance(xbar, &lambda, Some(&lambda_set))?;
            let (lhs, rhs) = match (&cone, mode) {
                (None, CalmnessMode::Isolated) => (dx + (&lambda - lambdabar).norm(), v.norm() + p.norm()),
                (None, _) => (dx + dl, v.norm() + p.norm()),
                (Some(c), _) => (dx, c.project(&v)?.norm() + p.norm()),
            };
            if lhs > 0.0 {
                kappa = kappa.max(if rhs > 0.0 { lhs / rhs } else { f64::INFINITY });
            }
            let r = problem.kkt_residual(&x, &lambda)?;
            if dx + dl > 0.0 {
                rkappa = rkappa.max(if r > 0.0 { (dx + dl) / r } else { f64::INFINITY });
            }
        }
        if skipped == dirs.len() {
            (kappa, rkappa) = (f64::NAN, f64::NAN);
        }
        out.kappa.push(kappa);
        out.residual_kappa.push(rkappa);
        out.skipped.push(skipped);
    }
    Ok(out)
}

/// `κ̂` is judged bounded when it is finite and varies by at most 2× across
/// the two smallest radii.
pub fn estimate_calmness<R: Rng>(
    problem: &CompositeProblem,
    xbar: &DVector<f64>,
    lambdabar: &DVector<f64>,
    radii: &[f64],
    n_samples: usize,
    mode: CalmnessMode,
    rng: &mut R,
) -> Result<Verdict> {
    let est = calmness_samples(problem, xbar, lambdabar, radii, n_samples, mode, rng)?;
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let bounded = match order.as_slice() {
        [] => false,
        [only] => est.kappa[*only].is_finite(),
        [a, b, ..] => {
            let (ka, kb) = (est.kappa[*a], est.kappa[*b]);
            let (lo, hi) = (ka.min(kb), ka.max(kb));
            hi.is_finite() && (hi == 0.0 || (lo > 0.0 && hi / lo <= 2.0))
        }
    };
    let mut parts: Vec<String> = radii
        .iter()
        .zip(est.kappa.iter().zip(est.skipped.iter()))
        .map(|(r, (k, s))| format!("rho={r:e} kappa={k:e} skipped={s}"))
        .collect();
    if mode == CalmnessMode::Isolated {
        parts.insert(0, "isolated".to_string());
    }
    Ok(Verdict::new(
        mode.condition(),
        if bounded {
            Outcome::HeuristicHolds
        } else {
            Outcome::HeuristicFails
        },
        Some(Certificate::Vector(DVector::from_vec(est.kappa.clone()))),
        parts.join("; "),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::{Poly2, Poly2Map};
    use nalgebra::dvector;

    fn p2() -> CompositeProblem {
        CompositeProblem::new(
            Poly2::new(0.0, dvector![0.0], DMatrix::from_element(1, 1, 2.0)).unwrap(),
            Poly2Map::new(1, vec![Poly2::new(0.0, dvector![0.0], DMatrix::from_element(1, 1, 2.0)).unwrap()]).unwrap(),
            PlqFunction::indicator(Polyhedron::origin(1)).unwrap(),
            Polyhedron::whole(1),
        )
        .unwrap()
    }

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
    fn p2_criticality() {
        let p = p2();
        let v = check_noncritical(&p, &dvector![0.0], &dvector![-1.0]).unwrap();
        assert_eq!(v.result, Outcome::Fails);
        match &v.certificate {
            Some(Certificate::Vector(w)) => assert!((w[0].abs() - 1.0).abs() < 1e-12),
            other => panic!("unexpected certificate {other:?}"),
        }
        for lam in [0.0, 1.0, -0.5] {
            let v = check_noncritical(&p, &dvector![0.0], &dvector![lam]).unwrap();
            assert_eq!(v.result, Outcome::Holds, "lambda {lam}");
        }
    }

    #[test]
    fn linear_inner_map_into_origin_is_noncritical() {
        let p = CompositeProblem::new(
            Poly2::new(0.0, dvector![0.0], DMatrix::identity(1, 1)).unwrap(),
            Poly2Map::affine(&DMatrix::identity(1, 1), &dvector![0.0]).unwrap(),
            PlqFunction::indicator(Polyhedron::origin(1)).unwrap(),
            Polyhedron::whole(1),
        )
        .unwrap();
        assert_eq!(check_noncritical(&p, &dvector![0.0], &dvector![0.0]).unwrap().result, Outcome::Holds);
    }

    #[test]
    fn uniqueness_examples() {
        assert_eq!(
            check_unique_multiplier(&p1(), &dvector![1.0], &dvector![1.0]).unwrap().result,
            Outcome::Holds
        );
        for lam in [-1.0, 0.0, 2.0] {
            assert_eq!(
                check_unique_multiplier(&p2(), &dvector![0.0], &dvector![lam]).unwrap().result,
                Outcome::Fails
            );
        }
    }

    #[test]
    fn sosc_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = check_sosc(&p1(), &dvector![1.0], &dvector![1.0], 10, &mut rng).unwrap();
        assert_eq!(v.result, Outcome::HeuristicHolds);
        assert_eq!(v.detail, "D trivial");
        let v = check_sosc(&p2(), &dvector![0.0], &dvector![-1.0], 10, &mut rng).unwrap();
        assert_eq!(v.result, Outcome::HeuristicFails);
        match v.certificate {
            Some(Certificate::Vector(w)) => assert!((w[0].abs() - 1.0).abs() < 1e-12),
            other => panic!("unexpected certificate {other:?}"),
        }
    }

    #[test]
    fn reduction_lemma_for_abs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = verify_reduction_lemma(&PlqFunction::abs(), &dvector![0.0], &dvector![1.0], 1e-2, 100, &mut rng).unwrap();
        assert_eq!(v.result, Outcome::Holds, "{v}");
    }

    #[test]
    fn verdict_rendering() {
        let v = Verdict::new(Condition::Sosc, Outcome::HeuristicHolds, None, "D trivial");
        assert_eq!(v.to_string(), "sosc: heuristic_holds (D trivial)");
        assert_eq!(v.csv_row(), "sosc,heuristic_holds,,\"D trivial\"");
    }
}
