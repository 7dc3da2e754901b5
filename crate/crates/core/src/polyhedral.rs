//! Polyhedra in H-representation `{x : Ax ≤ b, Ex = d}`, polyhedral cones,
//! and the tangent, normal and critical cone constructions on them.

use std::collections::{BTreeSet, HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, null_space, orth, stack_rows};
use crate::lp::{self, LpOutcome};
use crate::qp::qp_solve;

/// Row `i` is active at `x` when `bᵢ − Aᵢx ≤ ACTIVE_TOL·(1 + |bᵢ|)`.
pub const ACTIVE_TOL: f64 = 1e-8;
/// Tolerance used when a precondition asks for membership.
pub const MEMBERSHIP_TOL: f64 = 1e-7;
/// Default row cap for face enumeration.
pub const FACE_ROW_CAP: usize = 20;
/// Ambient dimension cap for face enumeration.
pub const FACE_DIM_CAP: usize = 16;
/// Dimension cap for Fourier–Motzkin projection.
pub const FM_DIM_CAP: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Polyhedron {
    a: DMatrix<f64>,
    b: DVector<f64>,
    e: DMatrix<f64>,
    d: DVector<f64>,
}

impl Polyhedron {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, e: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let n = a.ncols();
        if n == 0 && e.ncols() == 0 {
            return Err(Error::Validation("polyhedron dimension must be at least 1".into()));
        }
        if e.ncols() != n {
            return Err(Error::dim("polyhedron E columns", n, e.ncols()));
        }
        if b.len() != a.nrows() {
            return Err(Error::dim("polyhedron b", a.nrows(), b.len()));
        }
        if d.len() != e.nrows() {
            return Err(Error::dim("polyhedron d", e.nrows(), d.len()));
        }
        let finite = a.iter().chain(b.iter()).chain(e.iter()).chain(d.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("polyhedron entries must be finite".into()));
        }
        Ok(Polyhedron { a, b, e, d })
    }

    /// All of ℝⁿ.
    pub fn whole(n: usize) -> Self {
        Polyhedron {
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            e: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }

    pub fn from_inequalities(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = a.ncols();
        Self::new(a, b, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn from_equalities(e: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let n = e.ncols();
        Self::new(DMatrix::zeros(0, n), DVector::zeros(0), e, d)
    }

    pub fn nonneg_orthant(n: usize) -> Self {
        Self::from_inequalities(-DMatrix::identity(n, n), DVector::zeros(n)).expect("valid orthant")
    }

    pub fn nonpos_orthant(n: usize) -> Self {
        Self::from_inequalities(DMatrix::identity(n, n), DVector::zeros(n)).expect("valid orthant")
    }

    /// The single point `{0}`.
    pub fn origin(n: usize) -> Self {
        Self::from_equalities(DMatrix::identity(n, n), DVector::zeros(n)).expect("valid origin")
    }

    /// The box `lo ≤ x ≤ hi`.
    pub fn boxed(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Self> {
        let n = lo.len();
        if hi.len() != n {
            return Err(Error::dim("box bounds", n, hi.len()));
        }
        let a = stack_rows(&[&DMatrix::identity(n, n), &(-DMatrix::identity(n, n))], n);
        let b = DVector::from_iterator(2 * n, hi.iter().cloned().chain(lo.iter().map(|v| -v)));
        Self::from_inequalities(a, b)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }
    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }
    pub fn n_ineq(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_eq(&self) -> usize {
        self.e.nrows()
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim("point", self.dim(), x.len()));
        }
        Ok(())
    }

    /// `Ax ≤ b + tol` and `|Ex − d| ≤ tol`, componentwise.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(x)?;
        let ineq = (&self.a * x - &self.b).iter().all(|&r| r <= tol);
        let eq = (&self.e * x - &self.d).iter().all(|&r| r.abs() <= tol);
        Ok(ineq && eq)
    }

    /// Membership with a row-scaled tolerance, used for preconditions.
    pub fn contains_scaled(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(x)?;
        let scale = 1.0 + x.amax();
        let ineq = (0..self.n_ineq()).all(|i| {
            self.a.row(i).dot(&x.transpose()) - self.b[i]
                <= tol * (1.0 + self.b[i].abs()) * (self.a.row(i).amax().max(1.0)) * scale
        });
        let eq = (0..self.n_eq()).all(|i| {
            (self.e.row(i).dot(&x.transpose()) - self.d[i]).abs()
                <= tol * (1.0 + self.d[i].abs()) * (self.e.row(i).amax().max(1.0)) * scale
        });
        Ok(ineq && eq)
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(lp::find_feasible(self)?.is_none())
    }

    /// Inequality rows active at `x`.
    pub fn active_rows(&self, x: &DVector<f64>) -> Vec<usize> {
        (0..self.n_ineq())
            .filter(|&i| self.b[i] - self.a.row(i).dot(&x.transpose()) <= ACTIVE_TOL * (1.0 + self.b[i].abs()))
            .collect()
    }

    pub fn intersect(&self, other: &Polyhedron) -> Result<Polyhedron> {
        if other.dim() != self.dim() {
            return Err(Error::dim("intersected polyhedron", self.dim(), other.dim()));
        }
        let n = self.dim();
        Polyhedron::new(
            stack_rows(&[&self.a, &other.a], n),
            concat(&self.b, &other.b),
            stack_rows(&[&self.e, &other.e], n),
            concat(&self.d, &other.d),
        )
    }

    /// `{x : Mx + t ∈ P}`.
    pub fn preimage(&self, m: &DMatrix<f64>, t: &DVector<f64>) -> Result<Polyhedron> {
        if m.nrows() != self.dim() {
            return Err(Error::dim("preimage map rows", self.dim(), m.nrows()));
        }
        if t.len() != self.dim() {
            return Err(Error::dim("preimage offset", self.dim(), t.len()));
        }
        Polyhedron::new(
            &self.a * m,
            &self.b - &self.a * t,
            &self.e * m,
            &self.d - &self.e * t,
        )
    }

    /// The product `P × Q` in the stacked variable `(x, y)`.
    pub fn product(&self, other: &Polyhedron) -> Polyhedron {
        let (n1, n2) = (self.dim(), other.dim());
        let mut a = DMatrix::zeros(self.n_ineq() + other.n_ineq(), n1 + n2);
        a.view_mut((0, 0), (self.n_ineq(), n1)).copy_from(&self.a);
        a.view_mut((self.n_ineq(), n1), (other.n_ineq(), n2)).copy_from(&other.a);
        let mut e = DMatrix::zeros(self.n_eq() + other.n_eq(), n1 + n2);
        e.view_mut((0, 0), (self.n_eq(), n1)).copy_from(&self.e);
        e.view_mut((self.n_eq(), n1), (other.n_eq(), n2)).copy_from(&other.e);
        Polyhedron {
            a,
            b: concat(&self.b, &other.b),
            e,
            d: concat(&self.d, &other.d),
        }
    }

    /// Adds rows `Ax ≤ b`.
    pub fn with_inequalities(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Polyhedron> {
        let n = self.dim();
        Polyhedron::new(
            stack_rows(&[&self.a, a], n),
            concat(&self.b, b),
            self.e.clone(),
            self.d.clone(),
        )
    }

    /// Adds rows `Ex = d`.
    pub fn with_equalities(&self, e: &DMatrix<f64>, d: &DVector<f64>) -> Result<Polyhedron> {
        let n = self.dim();
        Polyhedron::new(
            self.a.clone(),
            self.b.clone(),
            stack_rows(&[&self.e, e], n),
            concat(&self.d, d),
        )
    }

    /// Keeps only the listed inequality rows; equalities are kept.
    pub fn select_inequalities(&self, rows: &[usize]) -> Polyhedron {
        Polyhedron {
            a: self.a.select_rows(rows.iter()),
            b: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.b[i])),
            e: self.e.clone(),
            d: self.d.clone(),
        }
    }
}

pub(crate) fn concat(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(u.len() + v.len(), u.iter().chain(v.iter()).cloned())
}

pub fn contains(p: &Polyhedron, x: &DVector<f64>, tol: f64) -> Result<bool> {
    p.contains(x, tol)
}

/// Euclidean projection of `z` onto `P`.
pub fn project(p: &Polyhedron, z: &DVector<f64>) -> Result<DVector<f64>> {
    p.check_dim(z)?;
    let n = p.dim();
    match qp_solve(&DMatrix::identity(n, n), &(-z), p, None) {
        Ok(sol) => Ok(sol.x),
        Err(Error::Infeasible) => Err(Error::EmptyPolyhedron),
        Err(e) => Err(e),
    }
}

pub fn tangent_cone(p: &Polyhedron, x: &DVector<f64>) -> Result<PolyCone> {
    if !p.contains_scaled(x, MEMBERSHIP_TOL)? {
        return Err(Error::PointNotInSet);
    }
    let rows = p.active_rows(x);
    Ok(PolyCone::new(p.a.select_rows(rows.iter()), p.e.clone()).expect("dimensions agree"))
}

/// `dist(v, N_P(x))`, computed as the norm of the projection of `v` onto the
/// tangent cone (the two cones are polar to each other).
pub fn normal_cone_dist(p: &Polyhedron, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    p.check_dim(v)?;
    let t = tangent_cone(p, x)?;
    Ok(t.project(v)?.norm())
}

/// Tolerance on `normal_cone_dist` for `critical_cone`.
pub const NORMAL_TOL: f64 = 1e-7;

/// `T_P(x) ∩ [v]^⊥`.
pub fn critical_cone(p: &Polyhedron, x: &DVector<f64>, v: &DVector<f64>) -> Result<PolyCone> {
    p.check_dim(v)?;
    let t = tangent_cone(p, x)?;
    let pt = t.project(v)?;
    let dist = pt.norm();
    if dist > NORMAL_TOL * (1.0 + v.norm()) {
        return Err(Error::NotANormalVector(dist));
    }
    // use the component of v inside the normal cone, which removes round-off
    let vn = v - pt;
    if vn.norm() <= 1e-8 {
        return Ok(t);
    }
    let row = DMatrix::from_row_slice(1, vn.len(), (vn / v.norm()).as_slice());
    t.with_equalities(&row)
}

/// Polyhedral cone `{w : Aw ≤ 0, Ew = 0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyCone {
    poly: Polyhedron,
}

impl PolyCone {
    pub fn new(a: DMatrix<f64>, e: DMatrix<f64>) -> Result<Self> {
        let (p, q) = (a.nrows(), e.nrows());
        Ok(PolyCone {
            poly: Polyhedron::new(a, DVector::zeros(p), e, DVector::zeros(q))?,
        })
    }

    pub fn from_polyhedron(poly: Polyhedron) -> Result<Self> {
        if poly.b.iter().chain(poly.d.iter()).any(|&v| v != 0.0) {
            return Err(Error::Validation("cone needs zero right-hand sides".into()));
        }
        Ok(PolyCone { poly })
    }

    pub fn whole(n: usize) -> Self {
        PolyCone {
            poly: Polyhedron::whole(n),
        }
    }

    pub fn origin(n: usize) -> Self {
        PolyCone {
            poly: Polyhedron::origin(n),
        }
    }

    pub fn poly(&self) -> &Polyhedron {
        &self.poly
    }
    pub fn dim(&self) -> usize {
        self.poly.dim()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.poly.a
    }
    pub fn e(&self) -> &DMatrix<f64> {
        &self.poly.e
    }

    /// Membership with a tolerance relative to `‖w‖`.
    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> Result<bool> {
        self.poly.contains(w, tol * (1.0 + w.norm()))
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.poly.check_dim(v)?;
        let n = self.dim();
        let zero = DVector::zeros(n);
        Ok(qp_solve(&DMatrix::identity(n, n), &(-v), &self.poly, Some(&zero))?.x)
    }

    pub fn with_equalities(&self, e: &DMatrix<f64>) -> Result<PolyCone> {
        Ok(PolyCone {
            poly: self.poly.with_equalities(e, &DVector::zeros(e.nrows()))?,
        })
    }

    pub fn with_inequalities(&self, a: &DMatrix<f64>) -> Result<PolyCone> {
        Ok(PolyCone {
            poly: self.poly.with_inequalities(a, &DVector::zeros(a.nrows()))?,
        })
    }

    pub fn intersect(&self, other: &PolyCone) -> Result<PolyCone> {
        Ok(PolyCone {
            poly: self.poly.intersect(&other.poly)?,
        })
    }

    /// `{w : Mw ∈ C}`.
    pub fn preimage(&self, m: &DMatrix<f64>) -> Result<PolyCone> {
        if m.nrows() != self.dim() {
            return Err(Error::dim("cone preimage map rows", self.dim(), m.nrows()));
        }
        PolyCone::new(self.a() * m, self.e() * m)
    }

    /// Inequality rows that vanish on the whole cone, given rows already fixed.
    pub fn implicit_rows(&self, fixed: &[usize]) -> Result<Vec<usize>> {
        let n = self.dim();
        let p = self.poly.n_ineq();
        let free: Vec<usize> = (0..p).filter(|i| !fixed.contains(i)).collect();
        if free.is_empty() {
            return Ok(Vec::new());
        }
        // maximize Σ s_i subject to A_i w + s_i ≤ 0, 0 ≤ s ≤ 1 on free rows
        let k = free.len();
        let nv = n + k;
        let mut a = DMatrix::zeros(3 * k, nv);
        let mut b = DVector::zeros(3 * k);
        for (r, &i) in free.iter().enumerate() {
            for j in 0..n {
                a[(r, j)] = self.a()[(i, j)];
            }
            a[(r, n + r)] = 1.0;
            a[(k + r, n + r)] = 1.0;
            b[k + r] = 1.0;
            a[(2 * k + r, n + r)] = -1.0;
        }
        let fixed_rows = self.a().select_rows(fixed.iter());
        let eq_w = stack_rows(&[&fixed_rows, self.e()], n);
        let mut e = DMatrix::zeros(eq_w.nrows(), nv);
        e.view_mut((0, 0), (eq_w.nrows(), n)).copy_from(&eq_w);
        let lp_poly = Polyhedron::new(a, b, e, DVector::zeros(eq_w.nrows()))?;
        let mut c = DVector::zeros(nv);
        for r in 0..k {
            c[n + r] = 1.0;
        }
        match lp::maximize(&c, &lp_poly)? {
            LpOutcome::Optimal { x, .. } => Ok(free
                .iter()
                .enumerate()
                .filter(|(r, _)| x[n + r] < 0.5)
                .map(|(_, &i)| i)
                .collect()),
            _ => Err(Error::Numerical("implicit-equality LP failed".into())),
        }
    }

    /// Orthonormal basis of `C − C`.
    pub fn span_basis(&self) -> Result<DMatrix<f64>> {
        let implicit = self.implicit_rows(&[])?;
        let rows = stack_rows(&[&self.a().select_rows(implicit.iter()), self.e()], self.dim());
        Ok(null_space(&rows))
    }

    /// Orthonormal basis of `C ∩ −C`.
    pub fn lineality_basis(&self) -> DMatrix<f64> {
        null_space(&stack_rows(&[self.a(), self.e()], self.dim()))
    }

    /// True when the cone is `{0}`.
    pub fn is_trivial(&self) -> Result<bool> {
        Ok(self.span_basis()?.ncols() == 0)
    }

    /// Directions of the one-dimensional faces modulo the lineality space.
    pub fn extreme_rays(&self, cap: usize) -> Result<Vec<DVector<f64>>> {
        let lin = self.lineality_basis();
        let lin_dim = lin.ncols();
        let mut rays = Vec::new();
        for face in enumerate_faces(self, cap)? {
            let cone = face.cone();
            let span = cone.span_basis()?;
            if span.ncols() != lin_dim + 1 {
                continue;
            }
            let resid = &span - &lin * (lin.transpose() * &span);
            let dir = orth(&resid);
            if dir.ncols() != 1 {
                continue;
            }
            let mut r = dir.column(0).into_owned();
            if !cone.contains(&r, 1e-9)? {
                r = -r;
            }
            rays.push(r);
        }
        Ok(rays)
    }
}

/// A face of a cone: the rows in `active` hold with equality.
#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub parent: PolyCone,
    pub active: Vec<usize>,
}

impl Face {
    pub fn cone(&self) -> PolyCone {
        let rows = self.parent.a().select_rows(self.active.iter());
        self.parent.with_equalities(&rows).expect("dimensions agree")
    }
}

/// All faces of `C`, one per set of rows that is closed under implicit equality.
pub fn enumerate_faces(c: &PolyCone, cap: usize) -> Result<Vec<Face>> {
    let rows = c.poly.n_ineq();
    if rows > cap {
        return Err(Error::TooManyRows { rows, cap });
    }
    if c.dim() > FACE_DIM_CAP {
        return Err(Error::DimensionCap {
            what: "face enumeration",
            dim: c.dim(),
            cap: FACE_DIM_CAP,
        });
    }
    let closure = |set: &BTreeSet<usize>| -> Result<BTreeSet<usize>> {
        let fixed: Vec<usize> = set.iter().cloned().collect();
        let mut out = set.clone();
        out.extend(c.implicit_rows(&fixed)?);
        Ok(out)
    };
    let root = closure(&BTreeSet::new())?;
    let mut seen: HashSet<BTreeSet<usize>> = HashSet::new();
    let mut queue = VecDeque::new();
    let mut faces = Vec::new();
    seen.insert(root.clone());
    queue.push_back(root);
    while let Some(set) = queue.pop_front() {
        for j in 0..rows {
            if set.contains(&j) {
                continue;
            }
            let mut next = set.clone();
            next.insert(j);
            let next = closure(&next)?;
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
        faces.push(Face {
            parent: c.clone(),
            active: set.into_iter().collect(),
        });
    }
    Ok(faces)
}

/// A finite union of polyhedral cones, or a linear subspace.
#[derive(Clone, Debug, PartialEq)]
pub enum ConeFamily {
    Union(Vec<PolyCone>),
    /// Orthonormal basis stored as columns.
    Subspace(DMatrix<f64>),
}

impl ConeFamily {
    pub fn subspace(basis: &DMatrix<f64>) -> Self {
        ConeFamily::Subspace(orth(basis))
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            ConeFamily::Union(m) => m.first().map(|c| c.dim()),
            ConeFamily::Subspace(b) => Some(b.nrows()),
        }
    }

    pub fn members(&self) -> &[PolyCone] {
        match self {
            ConeFamily::Union(m) => m,
            ConeFamily::Subspace(_) => &[],
        }
    }

    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> Result<bool> {
        match self {
            ConeFamily::Union(members) => {
                for m in members {
                    if m.contains(w, tol)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            ConeFamily::Subspace(basis) => {
                let r = w - basis * (basis.transpose() * w);
                Ok(r.norm() <= tol * (1.0 + w.norm()))
            }
        }
    }

    /// True when every member is `{0}`.
    pub fn is_trivial(&self) -> Result<bool> {
        match self {
            ConeFamily::Union(members) => {
                for m in members {
                    if !m.is_trivial()? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            ConeFamily::Subspace(basis) => Ok(basis.ncols() == 0),
        }
    }

    /// Orthonormal basis of the span of the family.
    pub fn span_basis(&self) -> Result<DMatrix<f64>> {
        match self {
            ConeFamily::Subspace(b) => Ok(b.clone()),
            ConeFamily::Union(members) => {
                let n = self.dim().unwrap_or(0);
                let mut cols: Vec<DVector<f64>> = Vec::new();
                for m in members {
                    let s = m.span_basis()?;
                    cols.extend(s.column_iter().map(|c| c.into_owned()));
                }
                if cols.is_empty() {
                    return Ok(DMatrix::zeros(n, 0));
                }
                Ok(orth(&DMatrix::from_columns(&cols)))
            }
        }
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        project_cone_union(self, v)
    }
}

/// Nearest point of the family to `v`; ties go to the first member.
pub fn project_cone_union(f: &ConeFamily, v: &DVector<f64>) -> Result<DVector<f64>> {
    match f {
        ConeFamily::Subspace(basis) => {
            if basis.nrows() != v.len() {
                return Err(Error::dim("subspace projection", basis.nrows(), v.len()));
            }
            if basis.ncols() == 0 {
                return Ok(DVector::zeros(v.len()));
            }
            let coef = lstsq(basis, v);
            Ok(basis * coef)
        }
        ConeFamily::Union(members) => {
            let mut best: Option<(f64, DVector<f64>)> = None;
            for m in members {
                let p = m.project(v)?;
                let dist = (v - &p).norm();
                if best.as_ref().is_none_or(|(bd, _)| dist < bd - 1e-12) {
                    best = Some((dist, p));
                }
            }
            best.map(|(_, p)| p)
                .ok_or_else(|| Error::Validation("empty cone family".into()))
        }
    }
}

/// Projects `P ⊂ ℝ^{k+r}` onto its first `k` coordinates by Gaussian
/// elimination on the equalities followed by Fourier–Motzkin on the
/// inequalities, with LP-based redundancy removal after every step.
pub fn fm_project(p: &Polyhedron, keep: usize) -> Result<Polyhedron> {
    if keep > FM_DIM_CAP {
        return Err(Error::DimensionCap {
            what: "Fourier-Motzkin projection",
            dim: keep,
            cap: FM_DIM_CAP,
        });
    }
    let n = p.dim();
    let mut ineq: Vec<(DVector<f64>, f64)> =
        (0..p.n_ineq()).map(|i| (p.a.row(i).transpose(), p.b[i])).collect();
    let mut eq: Vec<(DVector<f64>, f64)> =
        (0..p.n_eq()).map(|i| (p.e.row(i).transpose(), p.d[i])).collect();
    let coef_tol = 1e-11;

    // Gaussian elimination of the eliminated variables through equalities.
    for j in keep..n {
        let pivot = eq
            .iter()
            .enumerate()
            .filter(|(_, (r, _))| r[j].abs() > coef_tol * (1.0 + r.amax()))
            .max_by(|x, y| x.1 .0[j].abs().total_cmp(&y.1 .0[j].abs()))
            .map(|(k, _)| k);
        let Some(k) = pivot else { continue };
        let (pr, pb) = eq.remove(k);
        for (r, rb) in eq.iter_mut().chain(ineq.iter_mut()) {
            let f = r[j] / pr[j];
            if f != 0.0 {
                *r -= &pr * f;
                *rb -= pb * f;
                r[j] = 0.0;
            }
        }
    }
    // rows left over in the eliminated block with nonzero coefficient cannot occur
    // for equalities; ones with only zero coefficients stay as equalities in x.
    for j in keep..n {
        let pos: Vec<usize> = (0..ineq.len()).filter(|&k| ineq[k].0[j] > coef_tol).collect();
        let neg: Vec<usize> = (0..ineq.len()).filter(|&k| ineq[k].0[j] < -coef_tol).collect();
        let mut next: Vec<(DVector<f64>, f64)> = (0..ineq.len())
            .filter(|k| !pos.contains(k) && !neg.contains(k))
            .map(|k| {
                let (mut r, b) = ineq[k].clone();
                r[j] = 0.0;
                (r, b)
            })
            .collect();
        for &ip in &pos {
            for &iq in &neg {
                let (rp, bp) = &ineq[ip];
                let (rq, bq) = &ineq[iq];
                let (cp, cq) = (rp[j], -rq[j]);
                let mut r = rp * cq + rq * cp;
                r[j] = 0.0;
                next.push((r, bp * cq + bq * cp));
            }
        }
        ineq = normalize_rows(next)?;
        if ineq.iter().any(|(r, b)| r.amax() == 0.0 && *b < 0.0) {
            return Ok(empty_marker(keep));
        }
        ineq = remove_redundant(ineq, &eq, n)?;
    }
    let to_keep = |r: &DVector<f64>| r.rows(0, keep).into_owned();
    let mut a_rows: Vec<DVector<f64>> = Vec::new();
    let mut b_vals = Vec::new();
    for (r, b) in &ineq {
        let rk = to_keep(r);
        if rk.amax() <= coef_tol {
            if *b < -1e-9 {
                return Ok(empty_marker(keep));
            }
            continue;
        }
        a_rows.push(rk);
        b_vals.push(*b);
    }
    let mut e_rows: Vec<DVector<f64>> = Vec::new();
    let mut d_vals = Vec::new();
    for (r, d) in &eq {
        let rk = to_keep(r);
        if rk.amax() <= coef_tol {
            if d.abs() > 1e-9 {
                return Ok(empty_marker(keep));
            }
            continue;
        }
        e_rows.push(rk);
        d_vals.push(*d);
    }
    let build = |rows: &[DVector<f64>]| {
        let mut m = DMatrix::zeros(rows.len(), keep);
        for (i, r) in rows.iter().enumerate() {
            m.set_row(i, &r.transpose());
        }
        m
    };
    let out = Polyhedron::new(
        build(&a_rows),
        DVector::from_vec(b_vals),
        build(&e_rows),
        DVector::from_vec(d_vals),
    )?;
    simplify(&out)
}

fn empty_marker(n: usize) -> Polyhedron {
    let mut a = DMatrix::zeros(1, n);
    a[(0, 0)] = 1.0;
    let a = stack_rows(&[&a, &(-&a)], n);
    Polyhedron::from_inequalities(a, DVector::from_vec(vec![-1.0, 0.0])).expect("valid marker")
}

fn normalize_rows(rows: Vec<(DVector<f64>, f64)>) -> Result<Vec<(DVector<f64>, f64)>> {
    let mut out: Vec<(DVector<f64>, f64)> = Vec::new();
    for (r, b) in rows {
        let s = r.amax();
        if s == 0.0 {
            out.push((r, b));
            continue;
        }
        let (r, b) = (r / s, b / s);
        if !out.iter().any(|(q, qb)| (q - &r).amax() < 1e-10 && (qb - b).abs() < 1e-10) {
            out.push((r, b));
        }
    }
    Ok(out)
}

fn remove_redundant(
    rows: Vec<(DVector<f64>, f64)>,
    eq: &[(DVector<f64>, f64)],
    n: usize,
) -> Result<Vec<(DVector<f64>, f64)>> {
    let mut kept = rows;
    let mut i = 0;
    while i < kept.len() {
        if kept[i].0.amax() == 0.0 {
            if kept[i].1 >= -1e-12 {
                kept.remove(i);
            } else {
                i += 1;
            }
            continue;
        }
        let others: Vec<&(DVector<f64>, f64)> =
            kept.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, r)| r).collect();
        let mut a = DMatrix::zeros(others.len() + 1, n);
        let mut b = DVector::zeros(others.len() + 1);
        for (k, (r, rb)) in others.iter().enumerate() {
            a.set_row(k, &r.transpose());
            b[k] = *rb;
        }
        // relaxed copy of the row itself keeps the LP bounded when possible
        a.set_row(others.len(), &kept[i].0.transpose());
        b[others.len()] = kept[i].1 + 1.0;
        let mut e = DMatrix::zeros(eq.len(), n);
        let mut d = DVector::zeros(eq.len());
        for (k, (r, rd)) in eq.iter().enumerate() {
            e.set_row(k, &r.transpose());
            d[k] = *rd;
        }
        let poly = Polyhedron::new(a, b, e, d)?;
        let redundant = match lp::maximize(&kept[i].0, &poly)? {
            LpOutcome::Optimal { value, .. } => value <= kept[i].1 + 1e-9 * (1.0 + kept[i].1.abs()),
            LpOutcome::Infeasible => false,
            LpOutcome::Unbounded => false,
        };
        if redundant {
            kept.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(kept)
}

/// Removes duplicate and redundant inequality rows.
pub fn simplify(p: &Polyhedron) -> Result<Polyhedron> {
    let n = p.dim();
    let rows: Vec<(DVector<f64>, f64)> = (0..p.n_ineq()).map(|i| (p.a.row(i).transpose(), p.b[i])).collect();
    let eq: Vec<(DVector<f64>, f64)> = (0..p.n_eq()).map(|i| (p.e.row(i).transpose(), p.d[i])).collect();
    let rows = remove_redundant(normalize_rows(rows)?, &eq, n)?;
    let mut a = DMatrix::zeros(rows.len(), n);
    let mut b = DVector::zeros(rows.len());
    for (k, (r, rb)) in rows.iter().enumerate() {
        a.set_row(k, &r.transpose());
        b[k] = *rb;
    }
    // keep an independent set of equalities (the system is consistent here)
    let keep = crate::linalg::independent_rows(&p.e);
    let e = p.e.select_rows(keep.iter());
    let d = DVector::from_iterator(keep.len(), keep.iter().map(|&i| p.d[i]));
    Polyhedron::new(a, b, e, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn triangle() -> Polyhedron {
        Polyhedron::from_inequalities(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            dvector![1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    fn nonpos_line() -> Polyhedron {
        Polyhedron::nonpos_orthant(1)
    }

    #[test]
    fn membership() {
        assert!(nonpos_line().contains(&dvector![0.0], 0.0).unwrap());
        assert!(!nonpos_line().contains(&dvector![1e-3], 1e-6).unwrap());
        assert!(triangle().contains(&dvector![0.5, 0.5], 0.0).unwrap());
        assert!(triangle().contains(&dvector![0.5], 0.0).is_err());
    }

    #[test]
    fn projections() {
        let p = project(&Polyhedron::nonneg_orthant(2), &dvector![-1.0, 2.0]).unwrap();
        assert!((p - dvector![0.0, 2.0]).norm() < 1e-12);
        let p = project(&Polyhedron::origin(1), &dvector![7.0]).unwrap();
        assert!(p.norm() < 1e-12);
        let p = project(&triangle(), &dvector![1.0, 1.0]).unwrap();
        assert!((p - dvector![0.5, 0.5]).norm() < 1e-12);
    }

    #[test]
    fn tangent_cones() {
        let t = tangent_cone(&nonpos_line(), &dvector![0.0]).unwrap();
        assert_eq!(t.a().nrows(), 1);
        let t = tangent_cone(&nonpos_line(), &dvector![-1.0]).unwrap();
        assert_eq!(t.a().nrows(), 0);
        let t = tangent_cone(&Polyhedron::nonneg_orthant(2), &dvector![0.0, 1.0]).unwrap();
        assert!(t.contains(&dvector![1.0, -5.0], 0.0).unwrap());
        assert!(!t.contains(&dvector![-1.0, 0.0], 0.0).unwrap());
        assert!(matches!(
            tangent_cone(&nonpos_line(), &dvector![1.0]),
            Err(Error::PointNotInSet)
        ));
    }

    #[test]
    fn normal_cone_distances() {
        let z = dvector![0.0];
        assert!(normal_cone_dist(&nonpos_line(), &z, &dvector![1.0]).unwrap() < 1e-12);
        assert!((normal_cone_dist(&nonpos_line(), &z, &dvector![-1.0]).unwrap() - 1.0).abs() < 1e-12);
        let d = normal_cone_dist(&Polyhedron::whole(2), &dvector![1.0, 1.0], &dvector![3.0, 4.0]).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn critical_cones() {
        let k = critical_cone(&Polyhedron::nonneg_orthant(2), &dvector![0.0, 1.0], &dvector![-1.0, 0.0])
            .unwrap();
        assert!(k.contains(&dvector![0.0, -3.0], 1e-12).unwrap());
        assert!(!k.contains(&dvector![1.0, 0.0], 1e-12).unwrap());
        let k = critical_cone(&Polyhedron::whole(3), &dvector![1.0, 2.0, 3.0], &DVector::zeros(3)).unwrap();
        assert_eq!(k.span_basis().unwrap().ncols(), 3);
        let k = critical_cone(&Polyhedron::origin(1), &dvector![0.0], &dvector![5.0]).unwrap();
        assert!(k.is_trivial().unwrap());
        assert!(matches!(
            critical_cone(&nonpos_line(), &dvector![0.0], &dvector![-1.0]),
            Err(Error::NotANormalVector(_))
        ));
    }

    #[test]
    fn faces() {
        let orthant = PolyCone::from_polyhedron(Polyhedron::nonneg_orthant(2)).unwrap();
        assert_eq!(enumerate_faces(&orthant, FACE_ROW_CAP).unwrap().len(), 4);
        assert_eq!(enumerate_faces(&PolyCone::whole(3), FACE_ROW_CAP).unwrap().len(), 1);
        let line = PolyCone::new(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DMatrix::zeros(0, 1)).unwrap();
        assert_eq!(enumerate_faces(&line, FACE_ROW_CAP).unwrap().len(), 1);
        let many = PolyCone::new(DMatrix::zeros(21, 2), DMatrix::zeros(0, 2)).unwrap();
        assert!(matches!(enumerate_faces(&many, 20), Err(Error::TooManyRows { .. })));
    }

    #[test]
    fn extreme_rays_of_orthant() {
        let orthant = PolyCone::from_polyhedron(Polyhedron::nonneg_orthant(2)).unwrap();
        let rays = orthant.extreme_rays(FACE_ROW_CAP).unwrap();
        assert_eq!(rays.len(), 2);
        for r in rays {
            assert!(orthant.contains(&r, 1e-12).unwrap());
        }
    }

    #[test]
    fn union_projection() {
        let f = ConeFamily::Union(vec![PolyCone::from_polyhedron(Polyhedron::nonneg_orthant(1)).unwrap()]);
        assert!(project_cone_union(&f, &dvector![-2.0]).unwrap().norm() < 1e-12);
        let axis1 = PolyCone::new(
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        let axis2 = PolyCone::new(
            DMatrix::from_row_slice(1, 2, &[0.0, -1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let f = ConeFamily::Union(vec![axis1, axis2]);
        let p = project_cone_union(&f, &dvector![1.0, 2.0]).unwrap();
        assert!((p - dvector![0.0, 2.0]).norm() < 1e-12);
        let s = ConeFamily::subspace(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let p = project_cone_union(&s, &dvector![3.0, 4.0]).unwrap();
        assert!((p - dvector![3.0, 0.0]).norm() < 1e-12);
    }

    #[test]
    fn fourier_motzkin_interval() {
        // {(v, mu) : v + 1 = mu1, v - 1 = -mu2, mu >= 0} projects to [-1, 1]
        let e = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 1.0, 0.0, 1.0]);
        let d = dvector![-1.0, 1.0];
        let a = DMatrix::from_row_slice(2, 3, &[0.0, -1.0, 0.0, 0.0, 0.0, -1.0]);
        let p = Polyhedron::new(a, dvector![0.0, 0.0], e, d).unwrap();
        let proj = fm_project(&p, 1).unwrap();
        for (v, inside) in [(-1.0, true), (0.3, true), (1.0, true), (1.01, false), (-1.2, false)] {
            assert_eq!(proj.contains(&dvector![v], 1e-12).unwrap(), inside, "v = {v}");
        }
    }
}
