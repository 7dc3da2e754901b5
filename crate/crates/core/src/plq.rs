//! Convex piecewise linear-quadratic functions
//!
//! ```text
//! g(z) = ½⟨Aᵢz, z⟩ + ⟨aᵢ, z⟩ + αᵢ   for z ∈ Cᵢ,   +∞ off ∪Cᵢ,
//! ```
//!
//! and their first- and second-order variational objects.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, min_eigenvalue, symmetrize};
use crate::lp::{self, LpOutcome};
use crate::polyhedral::{
    critical_cone, fm_project, normal_cone_dist, simplify, tangent_cone, PolyCone, Polyhedron, ACTIVE_TOL,
};
use crate::qp::qp_solve;

pub use crate::polyhedral::ConeFamily;

/// Tolerance on the subgradient gap accepted by the second-order objects.
pub const SUBGRADIENT_TOL: f64 = 1e-7;
/// Largest piece count produced by [`DualLq::to_plq`].
pub const MAX_EXPANDED_PIECES: usize = 6561;

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub c: Polyhedron,
    pub a: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub alpha: f64,
}

impl Piece {
    pub fn new(c: Polyhedron, a: DMatrix<f64>, lin: DVector<f64>, alpha: f64) -> Result<Self> {
        let m = c.dim();
        if a.nrows() != m || a.ncols() != m {
            return Err(Error::dim("piece A", m, a.nrows()));
        }
        if lin.len() != m {
            return Err(Error::dim("piece a", m, lin.len()));
        }
        if !is_symmetric(&a, 1e-12) {
            return Err(Error::Validation("A symmetric".into()));
        }
        if !alpha.is_finite() || a.iter().chain(lin.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("piece data must be finite".into()));
        }
        Ok(Piece { c, a, lin, alpha })
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.a * z)) + self.lin.dot(z) + self.alpha
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a * z + &self.lin
    }

    /// Membership with the activity tolerance.
    pub fn holds(&self, z: &DVector<f64>) -> bool {
        let c = &self.c;
        let ineq = (0..c.n_ineq())
            .all(|i| c.a().row(i).dot(&z.transpose()) - c.b()[i] <= ACTIVE_TOL * (1.0 + c.b()[i].abs()));
        let eq = (0..c.n_eq())
            .all(|i| (c.e().row(i).dot(&z.transpose()) - c.d()[i]).abs() <= ACTIVE_TOL * (1.0 + c.d()[i].abs()));
        ineq && eq
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlqFunction {
    m: usize,
    pieces: Vec<Piece>,
}

impl PlqFunction {
    pub fn new(m: usize, pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::NoPiece);
        }
        for p in &pieces {
            if p.c.dim() != m {
                return Err(Error::dim("piece domain", m, p.c.dim()));
            }
        }
        Ok(PlqFunction { m, pieces })
    }

    /// `½⟨Az, z⟩ + ⟨a, z⟩ + α` on all of ℝᵐ.
    pub fn quadratic(a: DMatrix<f64>, lin: DVector<f64>, alpha: f64) -> Result<Self> {
        let m = lin.len();
        Self::new(m, vec![Piece::new(Polyhedron::whole(m), a, lin, alpha)?])
    }

    /// Indicator of a polyhedron.
    pub fn indicator(c: Polyhedron) -> Result<Self> {
        let m = c.dim();
        Self::new(m, vec![Piece::new(c, DMatrix::zeros(m, m), DVector::zeros(m), 0.0)?])
    }

    /// `|z|` on ℝ.
    pub fn abs() -> Self {
        let neg = Piece::new(Polyhedron::nonpos_orthant(1), DMatrix::zeros(1, 1), DVector::from_element(1, -1.0), 0.0);
        let pos = Piece::new(Polyhedron::nonneg_orthant(1), DMatrix::zeros(1, 1), DVector::from_element(1, 1.0), 0.0);
        Self::new(1, vec![neg.expect("valid piece"), pos.expect("valid piece")]).expect("valid function")
    }

    /// `max_j z_j` on ℝᵐ, one piece per coordinate.
    pub fn max_coordinate(m: usize) -> Result<Self> {
        let mut pieces = Vec::with_capacity(m);
        for i in 0..m {
            // z_j − z_i ≤ 0 for j ≠ i
            let mut a = DMatrix::zeros(m.saturating_sub(1), m);
            let mut r = 0;
            for j in 0..m {
                if j != i {
                    a[(r, j)] = 1.0;
                    a[(r, i)] = -1.0;
                    r += 1;
                }
            }
            let c = Polyhedron::new(a, DVector::zeros(m - 1), DMatrix::zeros(0, m), DVector::zeros(0))?;
            let mut lin = DVector::zeros(m);
            lin[i] = 1.0;
            pieces.push(Piece::new(c, DMatrix::zeros(m, m), lin, 0.0)?);
        }
        Self::new(m, pieces)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    fn check_dim(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.m {
            return Err(Error::dim("PLQ argument", self.m, z.len()));
        }
        Ok(())
    }

    pub fn eval(&self, z: &DVector<f64>) -> Result<f64> {
        self.check_dim(z)?;
        Ok(self
            .pieces
            .iter()
            .find(|p| p.holds(z))
            .map(|p| p.value(z))
            .unwrap_or(f64::INFINITY))
    }

    pub fn active_indices(&self, z: &DVector<f64>) -> Result<Vec<usize>> {
        self.check_dim(z)?;
        let idx: Vec<usize> = (0..self.pieces.len()).filter(|&i| self.pieces[i].holds(z)).collect();
        if idx.is_empty() {
            return Err(Error::PointOutsideDomain);
        }
        Ok(idx)
    }

    /// H-representation of `∂g(z)`.
    pub fn subdifferential(&self, z: &DVector<f64>) -> Result<Polyhedron> {
        let m = self.m;
        let mut out: Option<Polyhedron> = None;
        for i in self.active_indices(z)? {
            let piece = &self.pieces[i];
            let rows = piece.c.active_rows(z);
            let aj = piece.c.a().select_rows(rows.iter());
            let e = piece.c.e();
            let (k, q) = (aj.nrows(), e.nrows());
            let nv = m + k + q;
            // v − A_Jᵀμ − Eᵀν = ∇g_i(z), μ ≥ 0
            let mut eq = DMatrix::zeros(m, nv);
            eq.view_mut((0, 0), (m, m)).copy_from(&DMatrix::identity(m, m));
            eq.view_mut((0, m), (m, k)).copy_from(&(-aj.transpose()));
            eq.view_mut((0, m + k), (m, q)).copy_from(&(-e.transpose()));
            let mut ineq = DMatrix::zeros(k, nv);
            ineq.view_mut((0, m), (k, k)).copy_from(&(-DMatrix::identity(k, k)));
            let lifted = Polyhedron::new(ineq, DVector::zeros(k), eq, piece.gradient(z))?;
            let set = fm_project(&lifted, m)?;
            out = Some(match out {
                None => set,
                Some(prev) => prev.intersect(&set)?,
            });
        }
        simplify(&out.expect("at least one active piece"))
    }

    /// `max_{i ∈ I(z)} dist(v − ∇gᵢ(z), N_{Cᵢ}(z))`; zero iff `v ∈ ∂g(z)`.
    pub fn subgradient_gap(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.check_dim(v)?;
        let mut gap: f64 = 0.0;
        for i in self.active_indices(z)? {
            let piece = &self.pieces[i];
            gap = gap.max(normal_cone_dist(&piece.c, z, &(v - piece.gradient(z)))?);
        }
        Ok(gap)
    }

    pub fn is_subgradient(&self, z: &DVector<f64>, v: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.subgradient_gap(z, v)? <= tol)
    }

    pub fn subderivative(&self, z: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w)?;
        for i in self.active_indices(z)? {
            let piece = &self.pieces[i];
            if tangent_cone(&piece.c, z)?.contains(w, 1e-10)? {
                return Ok(piece.gradient(z).dot(w));
            }
        }
        Ok(f64::INFINITY)
    }

    fn require_subgradient(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        let gap = self.subgradient_gap(z, v)?;
        if gap > SUBGRADIENT_TOL * (1.0 + v.norm()) {
            return Err(Error::NotASubgradient(gap));
        }
        Ok(())
    }

    /// Members `(i, K_{Cᵢ}(z, v − ∇gᵢ(z)))` for the active pieces, in piece order.
    pub fn critical_members(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<Vec<(usize, PolyCone)>> {
        self.require_subgradient(z, v)?;
        let mut out = Vec::new();
        for i in self.active_indices(z)? {
            let piece = &self.pieces[i];
            out.push((i, critical_cone(&piece.c, z, &(v - piece.gradient(z)))?));
        }
        Ok(out)
    }

    /// `K_g(z, v)` as a union of polyhedral cones.
    pub fn critical_cone(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<ConeFamily> {
        Ok(ConeFamily::Union(
            self.critical_members(z, v)?.into_iter().map(|(_, k)| k).collect(),
        ))
    }

    pub fn second_subderivative(&self, z: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w)?;
        for (i, k) in self.critical_members(z, v)? {
            if k.contains(w, 1e-10)? {
                return Ok(w.dot(&(&self.pieces[i].a * w)));
            }
        }
        Ok(f64::INFINITY)
    }

    /// Whether `u ∈ D(∂g)(z, v)(w)`.
    pub fn proto_derivative_contains(
        &self,
        z: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
        u: &DVector<f64>,
        tol: f64,
    ) -> Result<bool> {
        self.check_dim(w)?;
        self.check_dim(u)?;
        let members = self.critical_members(z, v)?;
        // the graph is a cone, so test a normalized copy
        let s = w.norm().max(u.norm());
        let (w, u) = if s > 0.0 { (w / s, u / s) } else { (w.clone(), u.clone()) };
        let mut any = false;
        for (i, k) in members {
            if !k.contains(&w, tol)? {
                continue;
            }
            any = true;
            let r = &u - &self.pieces[i].a * &w;
            let dist = match normal_cone_dist(k.poly(), &w, &r) {
                Ok(d) => d,
                Err(Error::PointNotInSet) => return Ok(false),
                Err(e) => return Err(e),
            };
            if dist > tol {
                return Ok(false);
            }
        }
        Ok(any)
    }

    /// `argmin_z g(z) + ½‖x − z‖²`, one strongly convex QP per piece.
    pub fn prox(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let m = self.m;
        let eye = DMatrix::<f64>::identity(m, m);
        let mut best: Option<(f64, DVector<f64>)> = None;
        for piece in &self.pieces {
            let q = &piece.a + &eye;
            let c = &piece.lin - x;
            let sol = match qp_solve(&q, &c, &piece.c, None) {
                Ok(s) => s,
                Err(Error::Infeasible) => continue,
                Err(e) => return Err(e),
            };
            let obj = sol.objective + piece.alpha;
            if best.as_ref().is_none_or(|(b, _)| obj < b - 1e-12 * (1.0 + b.abs())) {
                best = Some((obj, sol.x));
            }
        }
        best.map(|(_, z)| z).ok_or(Error::NoPiece)
    }

    /// Checks that every piece domain is nonempty.
    pub fn check_nonempty(&self) -> Result<()> {
        for (i, p) in self.pieces.iter().enumerate() {
            if p.c.is_empty()? {
                return Err(Error::Validation(format!("C nonempty (piece {i})")));
            }
        }
        Ok(())
    }

    /// Sampled continuity certificate: pieces agree on shared points.
    pub fn check_consistency<R: Rng>(&self, rng: &mut R, samples: usize) -> Result<()> {
        let np = self.pieces.len();
        if np < 2 {
            return Ok(());
        }
        let pairs: Vec<(usize, usize)> = (0..np).flat_map(|i| (i + 1..np).map(move |j| (i, j))).collect();
        let exhaustive = pairs.len() <= 4 * samples.max(1);
        let draws = if exhaustive { pairs.len() } else { 4 * samples.max(1) };
        for t in 0..draws {
            let (i, j) = if exhaustive { pairs[t] } else { pairs[rng.random_range(0..pairs.len())] };
            let shared = self.pieces[i].c.intersect(&self.pieces[j].c)?;
            let Some(z) = random_point(&shared, rng, 10.0)? else { continue };
            let (vi, vj) = (self.pieces[i].value(&z), self.pieces[j].value(&z));
            if (vi - vj).abs() > 1e-9 * (1.0 + vi.abs().max(vj.abs())) {
                return Err(Error::Validation(format!(
                    "pieces {i} and {j} disagree at a shared point ({vi} vs {vj})"
                )));
            }
        }
        Ok(())
    }

    /// Sampled convexity certificate along segments inside the domain.
    pub fn check_convexity<R: Rng>(&self, rng: &mut R, samples: usize) -> Result<()> {
        let np = self.pieces.len();
        for _ in 0..samples {
            let (i, j) = (rng.random_range(0..np), rng.random_range(0..np));
            let (Some(z0), Some(z1)) = (
                random_point(&self.pieces[i].c, rng, 10.0)?,
                random_point(&self.pieces[j].c, rng, 10.0)?,
            ) else {
                continue;
            };
            let t: f64 = rng.random_range(0.05..0.95);
            let zt = &z0 * t + &z1 * (1.0 - t);
            let gt = self.eval(&zt)?;
            if !gt.is_finite() {
                continue;
            }
            let rhs = t * self.eval(&z0)? + (1.0 - t) * self.eval(&z1)?;
            if gt > rhs + 1e-9 * (1.0 + rhs.abs()) {
                return Err(Error::Validation(format!(
                    "convexity certificate failed between pieces {i} and {j}"
                )));
            }
        }
        Ok(())
    }

    /// Runs the nonemptiness, continuity and convexity certificates.
    pub fn validate<R: Rng>(&self, rng: &mut R, samples: usize) -> Result<()> {
        self.check_nonempty()?;
        self.check_consistency(rng, samples)?;
        self.check_convexity(rng, samples)
    }
}

/// A random point of `P ∩ [−r, r]ⁿ`: a convex combination of a few LP vertices.
pub fn random_point<R: Rng>(p: &Polyhedron, rng: &mut R, r: f64) -> Result<Option<DVector<f64>>> {
    let n = p.dim();
    let bounded = p.intersect(&Polyhedron::boxed(&DVector::from_element(n, -r), &DVector::from_element(n, r))?)?;
    let mut pts = Vec::new();
    for _ in 0..3 {
        let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        match lp::maximize(&c, &bounded)? {
            LpOutcome::Optimal { x, .. } => pts.push(x),
            _ => return Ok(None),
        }
    }
    let w: Vec<f64> = (0..pts.len()).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut z = DVector::zeros(n);
    for (pt, wi) in pts.iter().zip(w.iter()) {
        z += pt * (wi / total);
    }
    Ok(Some(z))
}

/// `f(z) = sup_{u∈Ω} ⟨z,u⟩ − ½⟨u,Bu⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualLq {
    pub omega: Polyhedron,
    pub b: DMatrix<f64>,
}

impl DualLq {
    pub fn new(omega: Polyhedron, b: DMatrix<f64>) -> Result<Self> {
        let m = omega.dim();
        if b.nrows() != m || b.ncols() != m {
            return Err(Error::dim("DualLQ B", m, b.nrows()));
        }
        if !is_symmetric(&b, 1e-12) {
            return Err(Error::Validation("B symmetric".into()));
        }
        if min_eigenvalue(&b) < -1e-10 {
            return Err(Error::Validation("B positive semidefinite".into()));
        }
        if omega.is_empty()? {
            return Err(Error::Validation("Omega nonempty".into()));
        }
        Ok(DualLq { omega, b })
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    /// The value `f(z)` (possibly +∞) and `prox_f(z)`.
    pub fn eval_prox(&self, z: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let m = self.dim();
        if z.len() != m {
            return Err(Error::dim("DualLQ argument", m, z.len()));
        }
        let value = match qp_solve(&self.b, &(-z), &self.omega, None) {
            Ok(sol) => -sol.objective,
            Err(Error::Unbounded) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let q = &self.b + DMatrix::<f64>::identity(m, m);
        let u = qp_solve(&symmetrize(&q), &(-z), &self.omega, None)?.x;
        Ok((value, z - u))
    }

    /// Coordinate bounds `(lo, hi)` when Ω is a box and B is diagonal.
    fn separable_bounds(&self) -> Option<Vec<(f64, f64)>> {
        let m = self.dim();
        let offdiag = (0..m).any(|i| (0..m).any(|j| i != j && self.b[(i, j)] != 0.0));
        if offdiag {
            return None;
        }
        let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); m];
        let unit = |row: nalgebra::DVectorView<f64>| -> Option<(usize, f64)> {
            let nz: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
            (nz.len() == 1).then(|| (nz[0], row[nz[0]]))
        };
        let (a, bb) = (self.omega.a(), self.omega.b());
        for i in 0..a.nrows() {
            let row = a.row(i).transpose();
            let (j, s) = unit(row.column(0))?;
            let bound = bb[i] / s;
            if s > 0.0 {
                bounds[j].1 = bounds[j].1.min(bound);
            } else {
                bounds[j].0 = bounds[j].0.max(bound);
            }
        }
        let (e, d) = (self.omega.e(), self.omega.d());
        for i in 0..e.nrows() {
            let row = e.row(i).transpose();
            let (j, s) = unit(row.column(0))?;
            let v = d[i] / s;
            bounds[j] = (bounds[j].0.max(v), bounds[j].1.min(v));
        }
        Some(bounds)
    }

    /// Expands a separable `f` (box Ω, diagonal B) into explicit pieces.
    pub fn to_plq(&self) -> Result<PlqFunction> {
        let m = self.dim();
        let bounds = self
            .separable_bounds()
            .ok_or_else(|| Error::Validation("DualLQ needs a box Omega and diagonal B to expand into pieces".into()))?;
        // per coordinate: (interval lo, interval hi, quadratic coef, linear coef, constant)
        type Seg = (f64, f64, f64, f64, f64);
        let mut per_coord: Vec<Vec<Seg>> = Vec::with_capacity(m);
        let inf = f64::INFINITY;
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            let bj = self.b[(j, j)];
            let mut segs = Vec::new();
            if lo == hi {
                segs.push((-inf, inf, 0.0, lo, -0.5 * bj * lo * lo));
            } else if bj > 0.0 {
                let (zl, zh) = (bj * lo, bj * hi);
                if lo.is_finite() {
                    segs.push((-inf, zl, 0.0, lo, -0.5 * bj * lo * lo));
                }
                segs.push((zl, zh, 1.0 / bj, 0.0, 0.0));
                if hi.is_finite() {
                    segs.push((zh, inf, 0.0, hi, -0.5 * bj * hi * hi));
                }
            } else {
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => {
                        segs.push((-inf, 0.0, 0.0, lo, 0.0));
                        segs.push((0.0, inf, 0.0, hi, 0.0));
                    }
                    (true, false) => segs.push((-inf, 0.0, 0.0, lo, 0.0)),
                    (false, true) => segs.push((0.0, inf, 0.0, hi, 0.0)),
                    (false, false) => segs.push((0.0, 0.0, 0.0, 0.0, 0.0)),
                }
            }
            per_coord.push(segs);
        }
        let count: usize = per_coord.iter().map(|s| s.len()).product();
        if count > MAX_EXPANDED_PIECES {
            return Err(Error::DimensionCap {
                what: "expanded DualLQ pieces",
                dim: count,
                cap: MAX_EXPANDED_PIECES,
            });
        }
        let mut pieces = Vec::with_capacity(count);
        let mut choice = vec![0usize; m];
        loop {
            let mut a_rows: Vec<(usize, f64, f64)> = Vec::new();
            let mut eq_rows: Vec<(usize, f64)> = Vec::new();
            let mut quad = DMatrix::zeros(m, m);
            let mut lin = DVector::zeros(m);
            let mut alpha = 0.0;
            for j in 0..m {
                let (zl, zh, qc, lc, cc) = per_coord[j][choice[j]];
                if zl == zh {
                    eq_rows.push((j, zl));
                } else {
                    if zh.is_finite() {
                        a_rows.push((j, 1.0, zh));
                    }
                    if zl.is_finite() {
                        a_rows.push((j, -1.0, -zl));
                    }
                }
                quad[(j, j)] = qc;
                lin[j] = lc;
                alpha += cc;
            }
            let mut a = DMatrix::zeros(a_rows.len(), m);
            let mut b = DVector::zeros(a_rows.len());
            for (r, &(j, s, rhs)) in a_rows.iter().enumerate() {
                a[(r, j)] = s;
                b[r] = rhs;
            }
            let mut e = DMatrix::zeros(eq_rows.len(), m);
            let mut d = DVector::zeros(eq_rows.len());
            for (r, &(j, v)) in eq_rows.iter().enumerate() {
                e[(r, j)] = 1.0;
                d[r] = v;
            }
            pieces.push(Piece::new(Polyhedron::new(a, b, e, d)?, quad, lin, alpha)?);
            // odometer over the per-coordinate choices
            let mut j = 0;
            while j < m {
                choice[j] += 1;
                if choice[j] < per_coord[j].len() {
                    break;
                }
                choice[j] = 0;
                j += 1;
            }
            if j == m {
                break;
            }
        }
        PlqFunction::new(m, pieces)
    }
}
