//! The composite problem `min φ(x) + g(Φ(x))` over `x ∈ Θ`, its Lagrangian
//! `L(x, λ) = φ(x) + ⟨Φ(x), λ⟩`, KKT residuals, multiplier sets and the
//! critical direction sets 𝒟 and 𝒟₊.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, null_space, orth};
use crate::plq::{DualLq, PlqFunction};
use crate::polyhedral::{
    critical_cone, fm_project, normal_cone_dist, project, simplify, ConeFamily, Polyhedron, MEMBERSHIP_TOL,
};

/// Residual below which a pair is accepted as a KKT point.
pub const KKT_TOL: f64 = 1e-7;

/// `c + ⟨l, x⟩ + ½⟨Qx, x⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly2 {
    pub c: f64,
    pub l: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl Poly2 {
    pub fn new(c: f64, l: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = l.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::dim("quadratic term", n, q.nrows()));
        }
        if !is_symmetric(&q, 1e-12) {
            return Err(Error::Validation("Q symmetric".into()));
        }
        if !c.is_finite() || l.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("quadratic data must be finite".into()));
        }
        Ok(Poly2 { c, l, q })
    }

    pub fn affine(c: f64, l: DVector<f64>) -> Self {
        let n = l.len();
        Poly2 {
            c,
            l,
            q: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.l.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.c + self.l.dot(x) + 0.5 * x.dot(&(&self.q * x))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.l + &self.q * x
    }
}

/// A quadratic map ℝⁿ → ℝᵏ given componentwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly2Map {
    n: usize,
    comps: Vec<Poly2>,
}

impl Poly2Map {
    pub fn new(n: usize, comps: Vec<Poly2>) -> Result<Self> {
        for c in &comps {
            if c.dim() != n {
                return Err(Error::dim("map component", n, c.dim()));
            }
        }
        Ok(Poly2Map { n, comps })
    }

    /// `x ↦ Mx + t`.
    pub fn affine(m: &DMatrix<f64>, t: &DVector<f64>) -> Result<Self> {
        if t.len() != m.nrows() {
            return Err(Error::dim("affine offset", m.nrows(), t.len()));
        }
        let comps = (0..m.nrows()).map(|j| Poly2::affine(t[j], m.row(j).transpose())).collect();
        Self::new(m.ncols(), comps)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.comps.len()
    }
    pub fn components(&self) -> &[Poly2] {
        &self.comps
    }

    pub fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.k(), self.comps.iter().map(|c| c.value(x)))
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.k(), self.n);
        for (r, c) in self.comps.iter().enumerate() {
            j.set_row(r, &c.gradient(x).transpose());
        }
        j
    }

    /// `Σ λⱼ ∇²Φⱼ`.
    pub fn weighted_hessian(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for (c, &l) in self.comps.iter().zip(lambda.iter()) {
            h += &c.q * l;
        }
        h
    }

    pub fn is_affine(&self) -> bool {
        self.comps.iter().all(|c| c.q.iter().all(|&v| v == 0.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDual {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl PrimalDual {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        PrimalDual { x, lambda }
    }

    pub fn stacked(&self) -> DVector<f64> {
        crate::polyhedral::concat(&self.x, &self.lambda)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeProblem {
    pub phi: Poly2,
    pub big_phi: Poly2Map,
    pub g: PlqFunction,
    /// Original dual representation when `g` was expanded from one.
    pub g_dual: Option<DualLq>,
    pub theta: Polyhedron,
}

impl CompositeProblem {
    pub fn new(phi: Poly2, big_phi: Poly2Map, g: PlqFunction, theta: Polyhedron) -> Result<Self> {
        let n = phi.dim();
        if big_phi.n() != n {
            return Err(Error::dim("inner map input", n, big_phi.n()));
        }
        if g.dim() != big_phi.k() {
            return Err(Error::dim("PLQ dimension", big_phi.k(), g.dim()));
        }
        if theta.dim() != n {
            return Err(Error::dim("Theta", n, theta.dim()));
        }
        if theta.is_empty()? {
            return Err(Error::Validation("Theta nonempty".into()));
        }
        Ok(CompositeProblem {
            phi,
            big_phi,
            g,
            g_dual: None,
            theta,
        })
    }

    /// Builds a problem whose outer function is `f_{Ω,B}`, expanded into pieces.
    pub fn with_dual_lq(phi: Poly2, big_phi: Poly2Map, h: DualLq, theta: Polyhedron) -> Result<Self> {
        let g = h.to_plq()?;
        let mut p = Self::new(phi, big_phi, g, theta)?;
        p.g_dual = Some(h);
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.phi.dim()
    }
    pub fn m(&self) -> usize {
        self.big_phi.k()
    }

    fn check(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::dim("x", self.n(), x.len()));
        }
        if lambda.len() != self.m() {
            return Err(Error::dim("lambda", self.m(), lambda.len()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.phi.value(x) + self.g.eval(&self.big_phi.value(x))?)
    }

    /// Value, gradient and Hessian in `x` of the Lagrangian.
    pub fn lagrangian(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        self.check(x, lambda)?;
        let value = self.phi.value(x) + self.big_phi.value(x).dot(lambda);
        let grad = self.phi.gradient(x) + self.big_phi.jacobian(x).transpose() * lambda;
        let hess = &self.phi.q + self.big_phi.weighted_hessian(lambda);
        Ok((value, grad, hess))
    }

    pub fn grad_lagrangian(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x, lambda)?;
        Ok(self.phi.gradient(x) + self.big_phi.jacobian(x).transpose() * lambda)
    }

    pub fn hess_lagrangian(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        &self.phi.q + self.big_phi.weighted_hessian(lambda)
    }

    /// `dist(−∇ₓL, N_Θ(x)) + ‖Φ(x) − prox_g(λ + Φ(x))‖`.
    pub fn kkt_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<f64> {
        self.check(x, lambda)?;
        if !self.theta.contains_scaled(x, MEMBERSHIP_TOL)? {
            return Err(Error::PointNotInTheta);
        }
        let grad = self.grad_lagrangian(x, lambda)?;
        let stationarity = normal_cone_dist(&self.theta, x, &(-grad))?;
        let z = self.big_phi.value(x);
        let feas = (&z - self.g.prox(&(lambda + &z))?).norm();
        Ok(stationarity + feas)
    }

    pub fn require_kkt(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<()> {
        let r = self.kkt_residual(x, lambda)?;
        if r > KKT_TOL {
            return Err(Error::NotAKktPoint(r));
        }
        Ok(())
    }

    /// H-representation of the Lagrange multiplier set at `x`.
    pub fn multiplier_set(&self, x: &DVector<f64>) -> Result<Polyhedron> {
        let (n, m) = (self.n(), self.m());
        if x.len() != n {
            return Err(Error::dim("x", n, x.len()));
        }
        if !self.theta.contains_scaled(x, MEMBERSHIP_TOL)? {
            return Err(Error::PointNotInTheta);
        }
        let z = self.big_phi.value(x);
        let sub = self.g.subdifferential(&z)?;
        let rows = self.theta.active_rows(x);
        let aj = self.theta.a().select_rows(rows.iter());
        let e = self.theta.e();
        let (k, q) = (aj.nrows(), e.nrows());
        let nv = m + k + q;
        // ∇Φᵀλ + A_Jᵀμ + Eᵀν = −∇φ, μ ≥ 0
        let mut eq = DMatrix::zeros(n, nv);
        eq.view_mut((0, 0), (n, m)).copy_from(&self.big_phi.jacobian(x).transpose());
        eq.view_mut((0, m), (n, k)).copy_from(&aj.transpose());
        eq.view_mut((0, m + k), (n, q)).copy_from(&e.transpose());
        let mut ineq = DMatrix::zeros(k, nv);
        ineq.view_mut((0, m), (k, k)).copy_from(&(-DMatrix::identity(k, k)));
        let lifted = Polyhedron::new(ineq, DVector::zeros(k), eq, -self.phi.gradient(x))?;
        let stat = fm_project(&lifted, m)?;
        simplify(&stat.intersect(&sub)?)
    }

    /// `dist(λ, Λ(x))`, or +∞ when the multiplier set is empty.
    pub fn multiplier_distance(&self, x: &DVector<f64>, lambda: &DVector<f64>, set: Option<&Polyhedron>) -> Result<f64> {
        let owned;
        let set = match set {
            Some(s) => s,
            None => {
                owned = self.multiplier_set(x)?;
                &owned
            }
        };
        match project(set, lambda) {
            Ok(p) => Ok((lambda - p).norm()),
            Err(Error::EmptyPolyhedron) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// 𝒟 as a union: `K_Θ(x̄, −∇ₓL) ∩ ∇Φ(x̄)⁻¹ K_{Cᵢ}` over the members of `K_g`.
    pub fn cone_d(&self, xbar: &DVector<f64>, lambdabar: &DVector<f64>) -> Result<ConeFamily> {
        self.require_kkt(xbar, lambdabar)?;
        let grad = self.grad_lagrangian(xbar, lambdabar)?;
        let k_theta = critical_cone(&self.theta, xbar, &(-grad))?;
        let jac = self.big_phi.jacobian(xbar);
        let z = self.big_phi.value(xbar);
        let mut members = Vec::new();
        for (_, k) in self.g.critical_members(&z, lambdabar)? {
            let member = k_theta.intersect(&k.preimage(&jac)?)?;
            if !members.contains(&member) {
                members.push(member);
            }
        }
        Ok(ConeFamily::Union(members))
    }

    /// 𝒟₊ = (K_Θ − K_Θ) ∩ ∇Φ(x̄)⁻¹(K_g − K_g).
    pub fn subspace_dplus(&self, xbar: &DVector<f64>, lambdabar: &DVector<f64>) -> Result<ConeFamily> {
        self.require_kkt(xbar, lambdabar)?;
        let grad = self.grad_lagrangian(xbar, lambdabar)?;
        let s_theta = critical_cone(&self.theta, xbar, &(-grad))?.span_basis()?;
        let z = self.big_phi.value(xbar);
        let kg = ConeFamily::Union(self.g.critical_members(&z, lambdabar)?.into_iter().map(|(_, k)| k).collect());
        let s_g = kg.span_basis()?;
        let m = self.m();
        let off_g = DMatrix::<f64>::identity(m, m) - &s_g * s_g.transpose();
        let constraint = off_g * self.big_phi.jacobian(xbar) * &s_theta;
        let coef = null_space(&constraint);
        Ok(ConeFamily::Subspace(orth(&(s_theta * coef))))
    }

    /// The problem with objective `φ(x) − ⟨v, x⟩` and inner map `Φ(x) + p`.
    pub fn perturbed_problem(&self, v: &DVector<f64>, p: &DVector<f64>) -> Result<CompositeProblem> {
        if v.len() != self.n() {
            return Err(Error::dim("perturbation v", self.n(), v.len()));
        }
        if p.len() != self.m() {
            return Err(Error::dim("perturbation p", self.m(), p.len()));
        }
        let mut out = self.clone();
        out.phi.l -= v;
        for (c, &pj) in out.big_phi.comps.iter_mut().zip(p.iter()) {
            c.c += pj;
        }
        Ok(out)
    }
}
