//! Randomized consistency checks of the variational objects of a loaded
//! problem: the prox of `g`, its first and second subderivatives, and the
//! projection onto Θ.

use nalgebra::DVector;
use rand::Rng;

use plqsqp::kkt::CompositeProblem;
use plqsqp::lp::{self, LpOutcome};
use plqsqp::plq::PlqFunction;
use plqsqp::polyhedral::{normal_cone_dist, project, Polyhedron};
use plqsqp::Result;

pub struct PropertyResult {
    pub property: &'static str,
    pub cases: usize,
    pub failures: usize,
}

fn random_vec<R: Rng>(rng: &mut R, n: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-r..r))
}

fn prox_case<R: Rng>(g: &PlqFunction, rng: &mut R) -> Result<bool> {
    let x = random_vec(rng, g.dim(), 3.0);
    let p = g.prox(&x)?;
    Ok(g.subgradient_gap(&p, &(&x - &p))? <= 1e-7 * (1.0 + x.norm()))
}

/// `dg(z)(w)` against the support function of `∂g(z)`, at prox points so that
/// kinks are hit with positive probability.
fn duality_case<R: Rng>(g: &PlqFunction, rng: &mut R) -> Result<bool> {
    let z = g.prox(&random_vec(rng, g.dim(), 3.0))?;
    let w = random_vec(rng, g.dim(), 1.0);
    let dg = g.subderivative(&z, &w)?;
    let support = match lp::maximize(&w, &g.subdifferential(&z)?)? {
        LpOutcome::Optimal { value, .. } => value,
        LpOutcome::Unbounded => f64::INFINITY,
        LpOutcome::Infeasible => return Ok(false),
    };
    Ok(if dg.is_infinite() || support.is_infinite() {
        dg == support
    } else {
        (dg - support).abs() <= 1e-8 * (1.0 + dg.abs())
    })
}

/// `d²g(z, v)(w)` against the second-order difference quotient. Along a
/// critical direction the quotient is constant once `z + tw` stays in one
/// piece, so `t` is halved until two quotients agree.
fn second_order_case<R: Rng>(g: &PlqFunction, rng: &mut R) -> Result<bool> {
    let x = random_vec(rng, g.dim(), 3.0);
    let z = g.prox(&x)?;
    let v = &x - &z;
    let w = g.critical_cone(&z, &v)?.project(&random_vec(rng, g.dim(), 1.0))?;
    let d2 = g.second_subderivative(&z, &v, &w)?;
    if !d2.is_finite() {
        return Ok(false);
    }
    let gz = g.eval(&z)?;
    let quotient = |t: f64| -> Result<f64> {
        Ok(2.0 * (g.eval(&(&z + &w * t))? - gz - t * v.dot(&w)) / (t * t))
    };
    let mut t = 1e-2 / (1.0 + w.norm());
    let mut prev = quotient(t)?;
    for _ in 0..12 {
        t *= 0.5;
        let q = quotient(t)?;
        if prev.is_finite() && (q - prev).abs() <= 1e-6 * (1.0 + q.abs()) {
            return Ok((q - d2).abs() <= 1e-5 * (1.0 + d2.abs()));
        }
        prev = q;
    }
    Ok(false)
}

fn projection_case<R: Rng>(theta: &Polyhedron, rng: &mut R) -> Result<bool> {
    let n = theta.dim();
    let (y1, y2) = (random_vec(rng, n, 4.0), random_vec(rng, n, 4.0));
    let (p1, p2) = (project(theta, &y1)?, project(theta, &y2)?);
    let inside = theta.contains_scaled(&p1, 1e-9)?;
    let idempotent = (project(theta, &p1)? - &p1).norm() <= 1e-9 * (1.0 + p1.norm());
    let nonexpansive = (&p1 - &p2).norm() <= (&y1 - &y2).norm() + 1e-9;
    let normal = normal_cone_dist(theta, &p1, &(&y1 - &p1))? <= 1e-8 * (1.0 + y1.norm());
    Ok(inside && idempotent && nonexpansive && normal)
}

fn count<F>(property: &'static str, cases: usize, mut case: F) -> PropertyResult
where
    F: FnMut() -> Result<bool>,
{
    // an error inside a case counts against the property
    let failures = (0..cases).filter(|_| !matches!(case(), Ok(true))).count();
    PropertyResult {
        property,
        cases,
        failures,
    }
}

pub fn run_suite<R: Rng>(problem: &CompositeProblem, cases: usize, rng: &mut R) -> Result<Vec<PropertyResult>> {
    let g = &problem.g;
    Ok(vec![
        count("prox_resolvent", cases, || prox_case(g, rng)),
        count("subdifferential_duality", cases, || duality_case(g, rng)),
        count("second_subderivative", cases, || second_order_case(g, rng)),
        count("projection_theta", cases, || projection_case(&problem.theta, rng)),
    ])
}
