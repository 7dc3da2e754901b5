use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use plqsqp::diagnostics::{
    check_noncritical, check_sosc, check_unique_multiplier, estimate_calmness, CalmnessMode, Verdict,
};
use plqsqp::generate::GenParams;
use plqsqp::io::{load_problem, problem_to_string, ProblemMeta};
use plqsqp::kkt::{CompositeProblem, PrimalDual};
use plqsqp::polyhedral::project;
use plqsqp::sqp::{rate_report, run_sqp, trace_to_csv, HessianMode, IterateRecord, SqpConfig};
use plqsqp::{Error, Result};

use crate::{CalculusArgs, DiagnoseArgs, GenerateArgs, SolveArgs, SolverArgs, SweepArgs};

pub const EXIT_SOLVER: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DimensionMismatch { .. }
        | Error::EmptyPolyhedron
        | Error::PointNotInSet
        | Error::NotANormalVector(_)
        | Error::PointOutsideDomain
        | Error::NotASubgradient(_)
        | Error::NoPiece
        | Error::PointNotInTheta
        | Error::NotAKktPoint(_)
        | Error::Parse { .. }
        | Error::Validation(_)
        | Error::BadParams(_)
        | Error::Io(_) => EXIT_VALIDATION,
        _ => EXIT_SOLVER,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::EmptyPolyhedron => "empty_polyhedron",
        Error::PointNotInSet => "point_not_in_set",
        Error::NotANormalVector(_) => "not_a_normal_vector",
        Error::TooManyRows { .. } => "too_many_rows",
        Error::DimensionCap { .. } => "dimension_cap",
        Error::PointOutsideDomain => "point_outside_domain",
        Error::NotASubgradient(_) => "not_a_subgradient",
        Error::NoPiece => "no_piece",
        Error::PointNotInTheta => "point_not_in_theta",
        Error::NotAKktPoint(_) => "not_a_kkt_point",
        Error::Infeasible => "infeasible",
        Error::Unbounded => "unbounded",
        Error::NoFeasiblePiece => "no_feasible_piece",
        Error::AllCandidatesOutsideDelta { .. } => "all_candidates_outside_delta",
        Error::SubproblemFailure { .. } => "subproblem_failure",
        Error::MaxIterReached { .. } => "max_iter_reached",
        Error::DegenerateStep(_) => "degenerate_step",
        Error::ZeroStep => "zero_step",
        Error::TooShortTrace(_) => "too_short_trace",
        Error::TooManyFaces { .. } => "too_many_faces",
        Error::Parse { .. } => "parse",
        Error::Validation(_) => "validation",
        Error::BadParams(_) => "bad_params",
        Error::Numerical(_) => "numerical",
        Error::Io(_) => "io",
    }
}

pub fn error_record(e: &Error, code: u8) -> Value {
    let mut rec = json!({
        "error": error_kind(e),
        "message": e.to_string(),
        "exit_code": code,
    });
    if let Error::SubproblemFailure { trace, .. } | Error::MaxIterReached { trace } = e {
        rec["iterations"] = json!(trace.len().saturating_sub(1));
    }
    rec
}

fn load(path: &Path) -> Result<(CompositeProblem, ProblemMeta)> {
    if !path.is_file() {
        return Err(Error::Validation(format!("problem file {} not found", path.display())));
    }
    load_problem(path)
}

fn parse_vec(text: &str, what: &str) -> Result<DVector<f64>> {
    let vals: std::result::Result<Vec<f64>, _> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect();
    vals.map(DVector::from_vec)
        .map_err(|e| Error::Validation(format!("{what}: {e}")))
}

fn check_len(v: DVector<f64>, len: usize, what: &'static str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::DimensionMismatch {
            what,
            expected: len,
            got: v.len(),
        });
    }
    Ok(v)
}

/// Reads `x;lambda` or a flat list of `n + m` numbers.
pub fn parse_point(text: &str, n: usize, m: usize) -> Result<PrimalDual> {
    let (x, l) = match text.split_once(';') {
        Some((a, b)) => (parse_vec(a, "reference x")?, parse_vec(b, "reference lambda")?),
        None => {
            let all = check_len(parse_vec(text, "reference")?, n + m, "reference")?;
            (all.rows(0, n).into_owned(), all.rows(n, m).into_owned())
        }
    };
    Ok(PrimalDual::new(check_len(x, n, "reference x")?, check_len(l, m, "reference lambda")?))
}

fn reference_point(problem: &CompositeProblem, meta: &ProblemMeta, text: Option<&str>) -> Result<Option<PrimalDual>> {
    match text {
        Some(t) => parse_point(t, problem.n(), problem.m()).map(Some),
        None => Ok(meta.reference()),
    }
}

fn start_point(problem: &CompositeProblem, args: &SolverArgs) -> Result<(DVector<f64>, DVector<f64>)> {
    let x0 = match &args.x0 {
        Some(t) => check_len(parse_vec(t, "x0")?, problem.n(), "x0")?,
        None => project(&problem.theta, &DVector::zeros(problem.n()))?,
    };
    let l0 = match &args.lambda0 {
        Some(t) => check_len(parse_vec(t, "lambda0")?, problem.m(), "lambda0")?,
        None => DVector::zeros(problem.m()),
    };
    Ok((x0, l0))
}

fn config(args: &SolverArgs, mode: HessianMode, reference: Option<PrimalDual>) -> Result<SqpConfig> {
    let config = SqpConfig {
        tol: args.tol,
        max_iter: args.max_iter,
        reference,
        ..SqpConfig::with_mode(mode)
    };
    config.validate()?;
    Ok(config)
}

fn out_dir(out: Option<&Path>) -> Result<Option<&Path>> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    Ok(out)
}

/// Runs SQP and keeps the partial trace on solver failure.
fn traced_run(
    problem: &CompositeProblem,
    x0: &DVector<f64>,
    l0: &DVector<f64>,
    config: &SqpConfig,
) -> (Vec<IterateRecord>, Option<Error>) {
    match run_sqp(problem, x0, l0, config) {
        Ok(trace) => (trace, None),
        Err(Error::MaxIterReached { trace }) => (trace.clone(), Some(Error::MaxIterReached { trace })),
        Err(Error::SubproblemFailure { cause, trace }) => (trace.clone(), Some(Error::SubproblemFailure { cause, trace })),
        Err(e) => (Vec::new(), Some(e)),
    }
}

fn rate_json(trace: &[IterateRecord], reference: Option<&PrimalDual>) -> Value {
    match rate_report(trace, reference) {
        Ok(r) => json!({
            "ratios_primal": r.ratios_primal,
            "ratios_pd": r.ratios_pd,
            "classification": r.classification.to_string(),
            "classification_primal": r.classification_primal.to_string(),
            "reference_x": r.reference_point.x.as_slice(),
            "reference_lambda": r.reference_point.lambda.as_slice(),
        }),
        Err(_) => Value::Null,
    }
}

fn classification(rate: &Value) -> String {
    rate.get("classification")
        .and_then(Value::as_str)
        .unwrap_or("n/a")
        .to_string()
}

pub fn solve(args: &SolveArgs) -> Result<u8> {
    let (problem, meta) = load(&args.common.problem)?;
    let reference = reference_point(&problem, &meta, args.solver.reference.as_deref())?;
    let (x0, l0) = start_point(&problem, &args.solver)?;
    let config = config(&args.solver, args.solver.mode, reference.clone())?;
    let out = out_dir(args.common.out.as_deref())?;

    let (trace, err) = traced_run(&problem, &x0, &l0, &config);
    let rate = rate_json(&trace, reference.as_ref());
    let last = trace.last();
    let report = json!({
        "mode": args.solver.mode.to_string(),
        "status": err.as_ref().map(error_kind).unwrap_or("converged"),
        "iterations": trace.len().saturating_sub(1),
        "final_residual": last.map(|r| r.residual),
        "x": last.map(|r| r.x.as_slice().to_vec()),
        "lambda": last.map(|r| r.lambda.as_slice().to_vec()),
        "rate": rate,
    });
    if let Some(dir) = out {
        if !trace.is_empty() {
            fs::write(dir.join("trace.csv"), trace_to_csv(&trace))?;
        }
        fs::write(dir.join("report.json"), format!("{report:#}\n"))?;
    }
    if let Some(last) = last {
        println!(
            "{} after {} iterations, residual {:e}, rate {}",
            report["status"].as_str().unwrap_or(""),
            last.k,
            last.residual,
            classification(&report["rate"])
        );
    }
    match err {
        Some(e) => Err(e),
        None => Ok(0),
    }
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<u8> {
    let (problem, meta) = load(&args.common.problem)?;
    let point = reference_point(&problem, &meta, args.reference.as_deref())?
        .ok_or_else(|| Error::Validation("no point to diagnose: pass --reference or add xbar/lambdabar metadata".into()))?;
    let (x, l) = (&point.x, &point.lambda);
    problem.require_kkt(x, l)?;
    let out = out_dir(args.common.out.as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.common.seed);

    let mut verdicts: Vec<Verdict> = vec![
        check_noncritical(&problem, x, l)?,
        check_unique_multiplier(&problem, x, l)?,
        check_sosc(&problem, x, l, args.samples, &mut rng)?,
    ];
    for mode in [CalmnessMode::Full, CalmnessMode::PrimalD, CalmnessMode::PrimalDplus] {
        verdicts.push(estimate_calmness(&problem, x, l, &args.radii, args.samples, mode, &mut rng)?);
    }
    let mut csv = format!("{}\n", Verdict::csv_header());
    for v in &verdicts {
        println!("{v}");
        csv.push_str(&v.csv_row());
        csv.push('\n');
    }
    if let Some(dir) = out {
        fs::write(dir.join("verdicts.csv"), csv)?;
    }
    Ok(0)
}

fn perturbed_start(
    problem: &CompositeProblem,
    center: &PrimalDual,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (problem.n(), problem.m());
    let d = loop {
        let d = DVector::from_fn(n + m, |_, _| rng.random_range(-1.0..1.0));
        if d.norm() > 0.0 {
            break d;
        }
    };
    let len = radius * rng.random_range(0.0f64..1.0).powf(1.0 / (n + m) as f64);
    let d = d.normalize() * len;
    let x = project(&problem.theta, &(&center.x + d.rows(0, n)))?;
    Ok((x, &center.lambda + d.rows(n, m)))
}

pub fn sweep(args: &SweepArgs) -> Result<u8> {
    let (problem, meta) = load(&args.common.problem)?;
    let reference = reference_point(&problem, &meta, args.solver.reference.as_deref())?;
    let center = match &reference {
        Some(r) => r.clone(),
        None => {
            let (x, l) = start_point(&problem, &args.solver)?;
            PrimalDual::new(x, l)
        }
    };
    let modes = if args.modes.is_empty() {
        vec![args.solver.mode]
    } else {
        args.modes.clone()
    };
    let out = out_dir(args.common.out.as_deref())?
        .ok_or_else(|| Error::Validation("sweep needs --out".into()))?;
    for &mode in &modes {
        config(&args.solver, mode, None)?;
    }

    let jobs: Vec<(usize, HessianMode, usize)> = modes
        .iter()
        .enumerate()
        .flat_map(|(mi, &mode)| (0..args.starts).map(move |s| (mi * args.starts + s, mode, s)))
        .collect();
    let rows: Vec<Result<String>> = jobs
        .par_iter()
        .map(|&(id, mode, start)| {
            // one stream per start: the same start in every mode
            let mut rng = ChaCha8Rng::seed_from_u64(args.common.seed);
            rng.set_stream(start as u64);
            let (x0, l0) = perturbed_start(&problem, &center, args.radius, &mut rng)?;
            let cfg = config(&args.solver, mode, reference.clone())?;
            let (trace, err) = traced_run(&problem, &x0, &l0, &cfg);
            if !trace.is_empty() {
                fs::write(out.join(format!("trace_{id:03}.csv")), trace_to_csv(&trace))?;
            }
            let rate = rate_json(&trace, reference.as_ref());
            let residual = trace.last().map(|r| format!("{:e}", r.residual)).unwrap_or_default();
            Ok(format!(
                "{id},{mode},{start},{},{},{residual},{}",
                err.as_ref().map(error_kind).unwrap_or("converged"),
                trace.len().saturating_sub(1),
                classification(&rate)
            ))
        })
        .collect();
    let mut summary = String::from("run,mode,start,status,iterations,final_residual,classification\n");
    let mut failed = 0;
    for row in rows {
        let row = row?;
        if !row.contains(",converged,") {
            failed += 1;
        }
        summary.push_str(&row);
        summary.push('\n');
    }
    fs::write(out.join("summary.csv"), &summary)?;
    println!("{} runs, {failed} did not converge", jobs.len());
    Ok(0)
}

pub fn check_calculus(args: &CalculusArgs) -> Result<u8> {
    let (problem, _) = load(&args.common.problem)?;
    let out = out_dir(args.common.out.as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.common.seed);
    let results = crate::calculus::run_suite(&problem, args.samples, &mut rng)?;
    let mut failures = 0;
    let mut rows = Vec::new();
    for r in &results {
        println!("{:<24} {:>5} cases {:>5} failures", r.property, r.cases, r.failures);
        failures += r.failures;
        rows.push(json!({"property": r.property, "cases": r.cases, "failures": r.failures}));
    }
    if let Some(dir) = out {
        fs::write(dir.join("calculus.json"), format!("{:#}\n", Value::Array(rows)))?;
    }
    Ok(if failures == 0 { 0 } else { EXIT_SOLVER })
}

pub fn generate(args: &GenerateArgs) -> Result<u8> {
    let params = GenParams {
        n: args.n,
        m: args.m,
        s: args.s,
        hess_scale: args.hess_scale,
        curvature: args.curvature,
        b_diag: args.b_diag,
    };
    let (problem, meta) = plqsqp::generate::generate(args.kind, &params, args.seed)?;
    let text = problem_to_string(&problem, Some(&meta))?;
    match &args.out {
        Some(path) => fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(0)
}
