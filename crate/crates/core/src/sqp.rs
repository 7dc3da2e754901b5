//! Local SQP driver with exact, damped-BFGS and fixed identity Hessian models,
//! Dennis–Moré monitors and empirical rate classification.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kkt::{CompositeProblem, PrimalDual, KKT_TOL};
use crate::linalg::symmetrize;
use crate::polyhedral::{ConeFamily, MEMBERSHIP_TOL};
use crate::subqp::{solve_subproblem, SubproblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMode {
    /// `H_k = ∇²ₓₓL(x_k, λ_k)`.
    Exact,
    /// Powell-damped BFGS started from the identity.
    Bfgs,
    /// `H_k = I`.
    FixedIdentity,
}

impl std::str::FromStr for HessianMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(HessianMode::Exact),
            "bfgs" => Ok(HessianMode::Bfgs),
            "identity" | "fixed_identity" => Ok(HessianMode::FixedIdentity),
            other => Err(Error::Validation(format!("unknown Hessian mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for HessianMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HessianMode::Exact => "exact",
            HessianMode::Bfgs => "bfgs",
            HessianMode::FixedIdentity => "identity",
        })
    }
}

/// Localization radius used for the subproblem at each iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeltaRule {
    /// +∞ on the first step, then `max(factor·‖previous step‖, floor)`.
    Adaptive { factor: f64, floor: f64 },
    Fixed(f64),
    Infinite,
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::Adaptive {
            factor: 10.0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SqpConfig {
    pub hessian_mode: HessianMode,
    pub tol: f64,
    pub max_iter: usize,
    pub delta_rule: DeltaRule,
    pub bfgs_damping: f64,
    /// Point used for the 𝒟 and 𝒟₊ monitors; defaults to the final iterate.
    pub reference: Option<PrimalDual>,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            hessian_mode: HessianMode::Exact,
            tol: 1e-10,
            max_iter: 100,
            delta_rule: DeltaRule::default(),
            bfgs_damping: 0.2,
            reference: None,
        }
    }
}

impl SqpConfig {
    pub fn with_mode(mode: HessianMode) -> Self {
        SqpConfig {
            hessian_mode: mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Validation("tol must be positive".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::Validation("max_iter must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.bfgs_damping) {
            return Err(Error::Validation("bfgs_damping must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One row of an SQP trace. The Dennis–Moré values belong to the step that
/// produced this iterate, so they are NaN on the first record.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub residual: f64,
    pub step_norm: f64,
    pub dm_d: f64,
    pub dm_dplus: f64,
    pub dm_full: f64,
    /// Piece of `g` whose QP produced the step; −1 on the first record.
    pub piece_index: i64,
}

/// Powell-damped BFGS update.
pub fn bfgs_update(h: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, damping: f64) -> Result<DMatrix<f64>> {
    let sn = s.norm();
    if sn <= 1e-14 {
        return Err(Error::DegenerateStep(sn));
    }
    let hs = h * s;
    let shs = s.dot(&hs);
    let rho = s.dot(y);
    let y = if rho < damping * shs {
        let theta = (1.0 - damping) * shs / (shs - rho);
        y * theta + &hs * (1.0 - theta)
    } else {
        y.clone()
    };
    let sy = s.dot(&y);
    let out = h - &hs * hs.transpose() / shs + &y * y.transpose() / sy;
    Ok(symmetrize(&out))
}

/// `(‖P_𝒟 r‖, ‖P_𝒟₊ r‖, ‖r‖) / ‖x_next − x_k‖` with `r = (∇²ₓₓL(x_k, λ_k) − H)(x_next − x_k)`.
pub fn dennis_more_values(
    problem: &CompositeProblem,
    lambdak: &DVector<f64>,
    h: &DMatrix<f64>,
    xk: &DVector<f64>,
    x_next: &DVector<f64>,
    d: &ConeFamily,
    dplus: &ConeFamily,
) -> Result<(f64, f64, f64)> {
    let s = x_next - xk;
    let sn = s.norm();
    if sn == 0.0 {
        return Err(Error::ZeroStep);
    }
    let r = (problem.hess_lagrangian(lambdak) - h) * &s;
    Ok((d.project(&r)?.norm() / sn, dplus.project(&r)?.norm() / sn, r.norm() / sn))
}

/// Data kept per step for filling the projected monitors after the run.
struct StepData {
    r: DVector<f64>,
    step: f64,
}

fn fill_projected(trace: &mut [IterateRecord], steps: &[Option<StepData>], d: &ConeFamily, dplus: &ConeFamily) -> Result<()> {
    for (rec, sd) in trace.iter_mut().skip(1).zip(steps.iter()) {
        if let Some(sd) = sd {
            rec.dm_d = d.project(&sd.r)?.norm() / sd.step;
            rec.dm_dplus = dplus.project(&sd.r)?.norm() / sd.step;
        }
    }
    Ok(())
}

fn monitors_reference(
    problem: &CompositeProblem,
    trace: &[IterateRecord],
    config: &SqpConfig,
) -> Option<(ConeFamily, ConeFamily)> {
    let reference = match &config.reference {
        Some(r) => r.clone(),
        None => {
            let last = trace.last()?;
            if last.residual > KKT_TOL {
                return None;
            }
            PrimalDual::new(last.x.clone(), last.lambda.clone())
        }
    };
    let d = problem.cone_d(&reference.x, &reference.lambda).ok()?;
    let dp = problem.subspace_dplus(&reference.x, &reference.lambda).ok()?;
    Some((d, dp))
}

/// Runs the SQP method from `(x0, λ0)`.
pub fn run_sqp(
    problem: &CompositeProblem,
    x0: &DVector<f64>,
    lambda0: &DVector<f64>,
    config: &SqpConfig,
) -> Result<Vec<IterateRecord>> {
    config.validate()?;
    let n = problem.n();
    if x0.len() != n {
        return Err(Error::dim("x0", n, x0.len()));
    }
    if lambda0.len() != problem.m() {
        return Err(Error::dim("lambda0", problem.m(), lambda0.len()));
    }
    if !problem.theta.contains_scaled(x0, MEMBERSHIP_TOL)? {
        return Err(Error::PointNotInTheta);
    }
    let mut trace: Vec<IterateRecord> = Vec::new();
    let mut steps: Vec<Option<StepData>> = Vec::new();
    let (mut x, mut lambda) = (x0.clone(), lambda0.clone());
    let mut h_bfgs = DMatrix::<f64>::identity(n, n);
    let mut last_pd_step: Option<f64> = None;
    let mut pending = (0.0, f64::NAN, -1i64);

    let finish = |trace: &mut Vec<IterateRecord>, steps: &[Option<StepData>]| {
        if let Some((d, dp)) = monitors_reference(problem, trace, config) {
            fill_projected(trace, steps, &d, &dp)?;
        }
        Ok::<(), Error>(())
    };

    for k in 0..=config.max_iter {
        let residual = problem.kkt_residual(&x, &lambda)?;
        trace.push(IterateRecord {
            k,
            x: x.clone(),
            lambda: lambda.clone(),
            residual,
            step_norm: pending.0,
            dm_d: f64::NAN,
            dm_dplus: f64::NAN,
            dm_full: pending.1,
            piece_index: pending.2,
        });
        if residual <= config.tol {
            finish(&mut trace, &steps)?;
            return Ok(trace);
        }
        if k == config.max_iter {
            break;
        }
        let hess = problem.hess_lagrangian(&lambda);
        let h = match config.hessian_mode {
            HessianMode::Exact => hess.clone(),
            HessianMode::Bfgs => h_bfgs.clone(),
            HessianMode::FixedIdentity => DMatrix::identity(n, n),
        };
        let delta = match (config.delta_rule, last_pd_step) {
            (DeltaRule::Infinite, _) | (DeltaRule::Adaptive { .. }, None) => f64::INFINITY,
            (DeltaRule::Fixed(d), _) => d,
            (DeltaRule::Adaptive { factor, floor }, Some(prev)) => (factor * prev).max(floor),
        };
        let spec = SubproblemSpec {
            xk: x.clone(),
            lambdak: lambda.clone(),
            h: h.clone(),
            delta,
        };
        let sol = match solve_subproblem(problem, &spec) {
            Ok(mut sols) => sols.swap_remove(0),
            Err(cause) => {
                finish(&mut trace, &steps)?;
                return Err(Error::SubproblemFailure {
                    cause: Box::new(cause),
                    trace,
                });
            }
        };
        let s = &sol.x_next - &x;
        let sn = s.norm();
        let r = (&hess - &h) * &s;
        let dm_full = if sn > 0.0 { r.norm() / sn } else { f64::NAN };
        steps.push((sn > 0.0).then(|| StepData { r, step: sn }));
        if config.hessian_mode == HessianMode::Bfgs && sn > 1e-14 {
            let y = problem.grad_lagrangian(&sol.x_next, &sol.lambda_next)?
                - problem.grad_lagrangian(&x, &sol.lambda_next)?;
            h_bfgs = bfgs_update(&h_bfgs, &s, &y, config.bfgs_damping)?;
        }
        let dl = &sol.lambda_next - &lambda;
        last_pd_step = Some((sn * sn + dl.norm_squared()).sqrt());
        pending = (sn, dm_full, sol.piece_index as i64);
        x = sol.x_next;
        lambda = sol.lambda_next;
    }
    finish(&mut trace, &steps)?;
    Err(Error::MaxIterReached { trace })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateClass {
    Superlinear,
    Linear,
    Sublinear,
    Stalled,
}

impl std::fmt::Display for RateClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateClass::Superlinear => "superlinear",
            RateClass::Linear => "linear",
            RateClass::Sublinear => "sublinear",
            RateClass::Stalled => "stalled",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub ratios_primal: Vec<f64>,
    pub ratios_pd: Vec<f64>,
    /// Verdict from the primal-dual ratios.
    pub classification: RateClass,
    /// Verdict from the primal ratios alone.
    pub classification_primal: RateClass,
    pub reference_point: PrimalDual,
}

/// Superlinear: the last three ratios strictly decrease and the last is
/// below 0.1. Linear: every ratio lies in [0.1, 0.95] and they vary by less
/// than 0.2.
pub fn classify(ratios: &[f64]) -> RateClass {
    let n = ratios.len();
    if n >= 3 {
        let t = &ratios[n - 3..];
        if t[0] > t[1] && t[1] > t[2] && t[2] < 0.1 {
            return RateClass::Superlinear;
        }
    }
    if n > 0 {
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo >= 0.1 && hi <= 0.95 && hi - lo < 0.2 {
            return RateClass::Linear;
        }
    }
    RateClass::Sublinear
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Error ratios over the last `min(6, len − 1)` steps of a trace. Without a
/// reference the final iterate stands in for the limit.
pub fn rate_report(trace: &[IterateRecord], reference: Option<&PrimalDual>) -> Result<RateReport> {
    if trace.len() < 4 {
        return Err(Error::TooShortTrace(trace.len()));
    }
    let last = trace.last().expect("nonempty trace");
    // Measured against the last iterate, the final ratio is 0 by construction,
    // so that step is left out of the window.
    let (reference, trace) = match reference {
        Some(r) => (r.clone(), trace),
        None => (PrimalDual::new(last.x.clone(), last.lambda.clone()), &trace[..trace.len() - 1]),
    };
    let ex: Vec<f64> = trace.iter().map(|r| (&r.x - &reference.x).norm()).collect();
    let epd: Vec<f64> = trace
        .iter()
        .map(|r| ((&r.x - &reference.x).norm_squared() + (&r.lambda - &reference.lambda).norm_squared()).sqrt())
        .collect();
    let len = trace.len();
    let k = 6.min(len - 1);
    let window = len - 1 - k..len - 1;
    let ratios_primal: Vec<f64> = window.clone().map(|i| ratio(ex[i + 1], ex[i])).collect();
    let ratios_pd: Vec<f64> = window.clone().map(|i| ratio(epd[i + 1], epd[i])).collect();
    let stalled = window.clone().all(|i| {
        let scale = 1.0 + trace[i].x.norm() + trace[i].lambda.norm();
        (&trace[i + 1].x - &trace[i].x).norm() + (&trace[i + 1].lambda - &trace[i].lambda).norm() <= 1e-14 * scale
    });
    let (classification, classification_primal) = if stalled {
        (RateClass::Stalled, RateClass::Stalled)
    } else {
        (classify(&ratios_pd), classify(&ratios_primal))
    };
    Ok(RateReport {
        ratios_primal,
        ratios_pd,
        classification,
        classification_primal,
        reference_point: reference,
    })
}

/// Header for the trace CSV of a problem with `n` primal and `m` dual entries.
pub fn trace_csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((0..n).map(|i| format!("x{i}")));
    cols.extend((0..m).map(|j| format!("lambda{j}")));
    cols.extend(
        ["residual", "step_norm", "dm_D", "dm_Dplus", "dm_full", "piece_index"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

pub fn trace_to_csv(trace: &[IterateRecord]) -> String {
    let (n, m) = trace.first().map(|r| (r.x.len(), r.lambda.len())).unwrap_or((0, 0));
    let mut out = trace_csv_header(n, m);
    out.push('\n');
    for r in trace {
        let mut fields = vec![r.k.to_string()];
        fields.extend(r.x.iter().map(|v| format!("{v:e}")));
        fields.extend(r.lambda.iter().map(|v| format!("{v:e}")));
        for v in [r.residual, r.step_norm, r.dm_d, r.dm_dplus, r.dm_full] {
            fields.push(format!("{v:e}"));
        }
        fields.push(r.piece_index.to_string());
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::{Poly2, Poly2Map};
    use crate::plq::PlqFunction;
    use crate::polyhedral::Polyhedron;
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
    fn p1_in_one_step() {
        let trace = run_sqp(&p1(), &dvector![0.0], &dvector![0.0], &SqpConfig::default()).unwrap();
        assert_eq!(trace.len(), 2);
        assert!(trace[1].residual <= 1e-10);
        assert!((trace[1].x[0] - 1.0).abs() < 1e-12);
        assert_eq!(trace[1].dm_full, 0.0);
        assert_eq!(trace[1].dm_d, 0.0);
    }

    #[test]
    fn start_at_solution_takes_no_step() {
        let trace = run_sqp(&p1(), &dvector![1.0], &dvector![1.0], &SqpConfig::default()).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].piece_index, -1);
    }

    #[test]
    fn bfgs_examples() {
        let h = DMatrix::identity(2, 2);
        let s = dvector![1.0, 0.0];
        let same = bfgs_update(&h, &s, &s, 0.2).unwrap();
        assert!((same - &h).amax() < 1e-15);
        let up = bfgs_update(&h, &s, &dvector![2.0, 0.0], 0.2).unwrap();
        assert!((up - DMatrix::from_diagonal(&dvector![2.0, 1.0])).amax() < 1e-15);
        let damped = bfgs_update(&h, &dvector![1.0, 1.0], &dvector![-1.0, 0.5], 0.2).unwrap();
        assert!(crate::linalg::min_eigenvalue(&damped) > 0.0);
        assert!(matches!(
            bfgs_update(&h, &dvector![0.0, 0.0], &s, 0.2),
            Err(Error::DegenerateStep(_))
        ));
    }

    #[test]
    fn classification_rules() {
        assert_eq!(classify(&[0.5, 0.2, 0.04, 0.004]), RateClass::Superlinear);
        assert_eq!(classify(&[0.5, 0.5, 0.5]), RateClass::Linear);
        assert_eq!(classify(&[0.99, 0.99, 0.99]), RateClass::Sublinear);
        let rec = IterateRecord {
            k: 0,
            x: dvector![1.0],
            lambda: dvector![0.0],
            residual: 1.0,
            step_norm: 0.0,
            dm_d: 0.0,
            dm_dplus: 0.0,
            dm_full: 0.0,
            piece_index: 0,
        };
        let trace = vec![rec.clone(); 5];
        assert_eq!(rate_report(&trace, None).unwrap().classification, RateClass::Stalled);
        assert!(matches!(rate_report(&trace[..3], None), Err(Error::TooShortTrace(3))));
    }

    #[test]
    fn dennis_more_against_identity() {
        // φ = ½x², g ≡ 0: ∇²L = 1, H = 0 gives dm_full = 1
        let problem = CompositeProblem::new(
            Poly2::new(0.0, dvector![0.0], DMatrix::identity(1, 1)).unwrap(),
            Poly2Map::affine(&DMatrix::identity(1, 1), &dvector![0.0]).unwrap(),
            PlqFunction::quadratic(DMatrix::zeros(1, 1), dvector![0.0], 0.0).unwrap(),
            Polyhedron::whole(1),
        )
        .unwrap();
        let d = ConeFamily::Union(vec![crate::polyhedral::PolyCone::origin(1)]);
        let dp = ConeFamily::subspace(&DMatrix::identity(1, 1));
        let (dd, ddp, df) =
            dennis_more_values(&problem, &dvector![0.0], &DMatrix::zeros(1, 1), &dvector![1.0], &dvector![0.5], &d, &dp)
                .unwrap();
        assert_eq!(dd, 0.0);
        assert!((ddp - 1.0).abs() < 1e-15 && (df - 1.0).abs() < 1e-15);
    }
}
