//! Seeded instance generators. Each instance is built around a chosen
//! primal-dual pair that satisfies the KKT system, recorded in the returned
//! metadata.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::ProblemMeta;
use crate::kkt::{CompositeProblem, Poly2, Poly2Map};
use crate::linalg::{rank, symmetrize};
use crate::plq::{DualLq, PlqFunction};
use crate::polyhedral::Polyhedron;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Nonlinear program: `g` is the indicator of `{0}ˢ × ℝ₋^{m−s}`.
    Nlp,
    /// Extended linear-quadratic program with `Ω = [0, 1]ᵐ` and diagonal `B`.
    Elqp,
    /// `φ = x²`, `Φ = x²`, `g = δ_{0}`; every λ is a multiplier at 0 and λ = −1 is critical.
    CriticalShowcase,
    /// `min φ(x) + max_j Φ_j(x)`.
    Minmax,
}

impl std::str::FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nlp" => Ok(Kind::Nlp),
            "elqp" => Ok(Kind::Elqp),
            "critical_showcase" => Ok(Kind::CriticalShowcase),
            "minmax" => Ok(Kind::Minmax),
            other => Err(Error::BadParams(format!("unknown instance kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Kind::Nlp => "nlp",
            Kind::Elqp => "elqp",
            Kind::CriticalShowcase => "critical_showcase",
            Kind::Minmax => "minmax",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub n: usize,
    pub m: usize,
    /// Number of equality constraints (nlp only).
    pub s: usize,
    /// `∇²ₓₓL(x̄, λ̄)` is `hess_scale · (I + 0.2 R)` with `R` PSD and `‖R‖ ≤ 1`
    /// for nlp and minmax, and the ELQP matrix `Q` is built the same way.
    pub hess_scale: f64,
    /// Scale of the curvature of the components of Φ (nlp and minmax).
    pub curvature: f64,
    /// Diagonal of `B` for elqp.
    pub b_diag: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n: 2,
            m: 1,
            s: 0,
            hess_scale: 1.0,
            curvature: 0.5,
            b_diag: 1.0,
        }
    }
}

fn uniform_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

fn uniform_mat<R: Rng>(rng: &mut R, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

/// `scale · (I + 0.2 R)` with `R` PSD of spectral norm at most one.
fn target_hessian<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let g = uniform_mat(rng, n, n, -1.0, 1.0);
    let r = &g * g.transpose();
    let norm = r.norm().max(1e-12);
    (DMatrix::identity(n, n) + r * (0.2 / norm)) * scale
}

fn random_symmetric<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    symmetrize(&uniform_mat(rng, n, n, -scale, scale))
}

/// Full row rank random matrix.
fn full_rank<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    loop {
        let m = uniform_mat(rng, r, c, -1.0, 1.0);
        if rank(&m) == r.min(c) {
            return m;
        }
    }
}

/// Component `½(x − x̄)ᵀQ(x − x̄) + gᵀ(x − x̄) + c` in expanded form.
fn centered(q: DMatrix<f64>, g: &DVector<f64>, c: f64, xbar: &DVector<f64>) -> Result<Poly2> {
    let qx = &q * xbar;
    let lin = g - &qx;
    let c0 = 0.5 * xbar.dot(&qx) - g.dot(xbar) + c;
    Poly2::new(c0, lin, q)
}

/// Component maps with prescribed value `c` and gradient rows of `jac` at `x̄`,
/// and `φ` chosen so that `∇ₓL(x̄, λ̄) = 0` with the target Hessian.
fn smooth_part<R: Rng>(
    rng: &mut R,
    params: &GenParams,
    xbar: &DVector<f64>,
    lambdabar: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> Result<(Poly2, Poly2Map)> {
    let n = params.n;
    let mut comps = Vec::new();
    let mut weighted = DMatrix::zeros(n, n);
    for j in 0..jac.nrows() {
        let qj = random_symmetric(rng, n, params.curvature);
        weighted += &qj * lambdabar[j];
        comps.push(centered(qj, &jac.row(j).transpose(), 0.0, xbar)?);
    }
    let h = target_hessian(rng, n, params.hess_scale);
    let qphi = symmetrize(&(h - weighted));
    let grad_phi = -(jac.transpose() * lambdabar);
    let phi = centered(qphi, &grad_phi, 0.0, xbar)?;
    Ok((phi, Poly2Map::new(n, comps)?))
}

/// Builds an instance and its metadata from a seed.
pub fn generate(kind: Kind, params: &GenParams, seed: u64) -> Result<(CompositeProblem, ProblemMeta)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (params.n, params.m);
    if !(params.hess_scale > 0.0) {
        return Err(Error::BadParams("hess_scale must be positive".into()));
    }
    let (problem, xbar, lambdabar, notes) = match kind {
        Kind::Nlp => {
            if n == 0 || m == 0 || m > n || params.s > m {
                return Err(Error::BadParams("nlp needs 1 <= m <= n and s <= m".into()));
            }
            let xbar = uniform_vec(&mut rng, n, -1.0, 1.0);
            let lambdabar = DVector::from_fn(m, |j, _| {
                if j < params.s {
                    rng.random_range(-1.0..1.0)
                } else {
                    rng.random_range(0.5..1.5)
                }
            });
            let jac = full_rank(&mut rng, m, n);
            let (phi, big_phi) = smooth_part(&mut rng, params, &xbar, &lambdabar, &jac)?;
            let mut e = DMatrix::zeros(params.s, m);
            for j in 0..params.s {
                e[(j, j)] = 1.0;
            }
            let mut a = DMatrix::zeros(m - params.s, m);
            for j in params.s..m {
                a[(j - params.s, j)] = 1.0;
            }
            let cset = Polyhedron::new(a, DVector::zeros(m - params.s), e, DVector::zeros(params.s))?;
            let g = PlqFunction::indicator(cset)?;
            let problem = CompositeProblem::new(phi, big_phi, g, Polyhedron::whole(n))?;
            (problem, xbar, lambdabar, "all constraints active with strictly complementary multipliers")
        }
        Kind::Minmax => {
            if n == 0 || m < 2 || m > n + 1 {
                return Err(Error::BadParams("minmax needs 2 <= m <= n + 1".into()));
            }
            let xbar = uniform_vec(&mut rng, n, -1.0, 1.0);
            let w = uniform_vec(&mut rng, m, 0.5, 1.5);
            let lambdabar = &w / w.sum();
            let jac = loop {
                let j = uniform_mat(&mut rng, m, n, -1.0, 1.0);
                let mut aug = DMatrix::from_element(n + 1, m, 1.0);
                aug.rows_mut(0, n).copy_from(&j.transpose());
                if rank(&aug) == m {
                    break j;
                }
            };
            let (phi, big_phi) = smooth_part(&mut rng, params, &xbar, &lambdabar, &jac)?;
            let problem = CompositeProblem::new(phi, big_phi, PlqFunction::max_coordinate(m)?, Polyhedron::whole(n))?;
            (problem, xbar, lambdabar, "all components tie at the solution; multiplier in the open simplex")
        }
        Kind::Elqp => {
            if n == 0 || m == 0 || m > 4 {
                return Err(Error::BadParams("elqp needs n >= 1 and 1 <= m <= 4".into()));
            }
            if !(params.b_diag > 0.0) {
                return Err(Error::BadParams("elqp needs a positive B diagonal".into()));
            }
            let xbar = uniform_vec(&mut rng, n, -1.0, 1.0);
            let bd = params.b_diag;
            // z̄ away from the breakpoints 0 and bd of each coordinate
            let zbar = DVector::from_fn(m, |_, _| loop {
                let z: f64 = rng.random_range(-0.5..1.5 * bd);
                if z.abs() > 0.1 && (z - bd).abs() > 0.1 {
                    break z;
                }
            });
            let lambdabar = zbar.map(|z| (z / bd).clamp(0.0, 1.0));
            let a = uniform_mat(&mut rng, m, n, -1.0, 1.0);
            let b = &zbar + &a * &xbar;
            let q = target_hessian(&mut rng, n, params.hess_scale);
            // ∇ₓL = q + Q x̄ − Aᵀ λ̄ = 0
            let lin = a.transpose() * &lambdabar - &q * &xbar;
            let phi = Poly2::new(0.0, lin, q)?;
            let big_phi = Poly2Map::affine(&(-&a), &b)?;
            let omega = Polyhedron::boxed(&DVector::zeros(m), &DVector::from_element(m, 1.0))?;
            let h = DualLq::new(omega, DMatrix::from_diagonal_element(m, m, bd))?;
            let problem = CompositeProblem::with_dual_lq(phi, big_phi, h, Polyhedron::whole(n))?;
            (problem, xbar, lambdabar, "Omega = [0,1]^m, B diagonal, Phi(x) = b - A x")
        }
        Kind::CriticalShowcase => {
            let two = DMatrix::from_element(1, 1, 2.0);
            let problem = CompositeProblem::new(
                Poly2::new(0.0, DVector::zeros(1), two.clone())?,
                Poly2Map::new(1, vec![Poly2::new(0.0, DVector::zeros(1), two)?])?,
                PlqFunction::indicator(Polyhedron::origin(1))?,
                Polyhedron::whole(1),
            )?;
            (
                problem,
                DVector::zeros(1),
                DVector::from_element(1, -1.0),
                "multiplier set at 0 is the whole line; lambda = -1 is the critical multiplier",
            )
        }
    };
    let meta = ProblemMeta {
        kind: Some(kind.to_string()),
        seed: Some(seed),
        xbar: Some(xbar.iter().cloned().collect()),
        lambdabar: Some(lambdabar.iter().cloned().collect()),
        local_min: Some(true),
        notes: Some(notes.to_string()),
    };
    Ok((problem, meta))
}
