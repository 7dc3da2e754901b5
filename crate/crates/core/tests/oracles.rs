//! Hand-computed values checked against independent brute-force or
//! closed-form evaluations.

mod common;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plqsqp::diagnostics::{
    calmness_samples, check_noncritical, check_sosc, check_unique_multiplier, verify_reduction_lemma, CalmnessMode,
    Certificate, Outcome,
};
use plqsqp::kkt::{CompositeProblem, Poly2, Poly2Map};
use plqsqp::plq::{DualLq, PlqFunction};
use plqsqp::polyhedral::{critical_cone, enumerate_faces, project, ConeFamily, PolyCone, Polyhedron};
use plqsqp::sqp::{bfgs_update, rate_report, run_sqp, HessianMode, RateClass, SqpConfig};
use plqsqp::subqp::{solve_subproblem, SubproblemSpec};

use common::*;

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol
}

#[test]
fn projection_matches_grid_search() {
    let p = Polyhedron::from_inequalities(dmatrix![1.0, 1.0; -1.0, 0.0; 0.0, -1.0], dvector![1.0, 0.0, 0.0]).unwrap();
    let z = dvector![1.0, 1.0];
    let got = project(&p, &z).unwrap();
    assert!(close(&got, &dvector![0.5, 0.5], 1e-10));
    let mut best = (f64::INFINITY, DVector::zeros(2));
    let steps = 400;
    for i in 0..=steps {
        for j in 0..=steps - i {
            let y = dvector![i as f64 / steps as f64, j as f64 / steps as f64];
            let d = (&y - &z).norm();
            if d < best.0 {
                best = (d, y);
            }
        }
    }
    assert!(close(&got, &best.1, 2.0 / steps as f64));
    assert!((got - &z).norm() <= best.0 + 1e-12);
}

#[test]
fn critical_cone_of_orthant() {
    let cone = critical_cone(&Polyhedron::nonneg_orthant(2), &dvector![0.0, 1.0], &dvector![-1.0, 0.0]).unwrap();
    for t in [-3.0, 0.0, 2.5] {
        assert!(cone.contains(&dvector![0.0, t], 1e-12).unwrap());
        assert!(!cone.contains(&dvector![0.1, t], 1e-12).unwrap());
        assert!(!cone.contains(&dvector![-0.1, t], 1e-12).unwrap());
    }
}

#[test]
fn duplicate_face_rows_collapse() {
    let c = PolyCone::new(dmatrix![1.0, 0.0; -1.0, 0.0], DMatrix::zeros(0, 2)).unwrap();
    let faces = enumerate_faces(&c, 100).unwrap();
    assert_eq!(faces.len(), 1);
    let face = faces[0].cone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let w = dvector![rng.random_range(-2.0f64..2.0), rng.random_range(-2.0..2.0)];
        let on_line = w[0].abs() < 1e-12;
        assert_eq!(face.contains(&w, 1e-12).unwrap(), on_line);
        assert!(face.contains(&dvector![0.0, w[1]], 1e-12).unwrap());
    }
}

#[test]
fn union_projection_picks_nearest_member() {
    let x_axis = PolyCone::new(dmatrix![-1.0, 0.0], dmatrix![0.0, 1.0]).unwrap();
    let y_axis = PolyCone::new(dmatrix![0.0, -1.0], dmatrix![1.0, 0.0]).unwrap();
    let fam = ConeFamily::Union(vec![x_axis.clone(), y_axis.clone()]);
    let v = dvector![1.0, 2.0];
    let got = fam.project(&v).unwrap();
    assert!(close(&got, &dvector![0.0, 2.0], 1e-10));
    let a = x_axis.project(&v).unwrap();
    let b = y_axis.project(&v).unwrap();
    assert!((&got - &v).norm() <= (&a - &v).norm().min((&b - &v).norm()) + 1e-12);
}

#[test]
fn abs_calculus_values() {
    let g = PlqFunction::abs();
    let z0 = dvector![0.0];
    let sub = g.subdifferential(&z0).unwrap();
    for (v, inside) in [(-1.0, true), (0.3, true), (1.0, true), (1.01, false), (-1.2, false)] {
        assert_eq!(sub.contains(&dvector![v], 1e-12).unwrap(), inside);
    }
    let k = g.critical_cone(&z0, &dvector![1.0]).unwrap();
    assert!(k.contains(&dvector![2.0], 1e-12).unwrap());
    assert!(k.contains(&dvector![0.0], 1e-12).unwrap());
    assert!(!k.contains(&dvector![-0.5], 1e-12).unwrap());
    let k = g.critical_cone(&z0, &dvector![0.5]).unwrap();
    assert!(k.is_trivial().unwrap());
    assert_eq!(g.second_subderivative(&z0, &dvector![1.0], &dvector![2.0]).unwrap(), 0.0);
    for u in [-3.0, -0.1, 0.0] {
        assert!(g.proto_derivative_contains(&z0, &dvector![1.0], &dvector![0.0], &dvector![u], 1e-10).unwrap());
    }
    assert!(!g.proto_derivative_contains(&z0, &dvector![1.0], &dvector![0.0], &dvector![0.2], 1e-10).unwrap());
}

#[test]
fn indicator_second_subderivative() {
    let g = nonpos_indicator();
    let (z, v) = (dvector![0.0], dvector![1.0]);
    assert_eq!(g.second_subderivative(&z, &v, &dvector![0.0]).unwrap(), 0.0);
    assert_eq!(g.second_subderivative(&z, &v, &dvector![1.0]).unwrap(), f64::INFINITY);
    assert_eq!(g.second_subderivative(&z, &v, &dvector![-1.0]).unwrap(), f64::INFINITY);
}

#[test]
fn dual_lq_on_unit_interval() {
    let f = DualLq::new(Polyhedron::boxed(&dvector![0.0], &dvector![1.0]).unwrap(), dmatrix![0.0]).unwrap();
    let (value, prox) = f.eval_prox(&dvector![2.0]).unwrap();
    assert!((value - 2.0).abs() < 1e-10);
    assert!((prox[0] - 1.0).abs() < 1e-10);
    // max(z, 0) and its prox, evaluated by brute force over a grid
    let plq = f.to_plq().unwrap();
    for z in [-1.5, -0.2, 0.0, 0.4, 2.0, 3.5] {
        let zv = dvector![z];
        assert!((plq.eval(&zv).unwrap() - z.max(0.0)).abs() < 1e-10);
        let (best, _) = (0..=20000)
            .map(|i| -5.0 + i as f64 * 5e-4)
            .map(|y| (y, y.max(0.0) + 0.5 * (y - z) * (y - z)))
            .fold((0.0, f64::INFINITY), |acc, (y, val)| if val < acc.1 { (y, val) } else { acc });
        assert!((f.eval_prox(&zv).unwrap().1[0] - best).abs() < 1e-3);
    }
}

#[test]
fn p1_kkt_quantities() {
    let p = p1();
    let (value, grad, hess) = p.lagrangian(&dvector![1.0], &dvector![1.0]).unwrap();
    assert!((value - 0.5).abs() < 1e-14);
    assert!(grad[0].abs() < 1e-14);
    assert!((hess[(0, 0)] - 1.0).abs() < 1e-14);
    assert!(p.kkt_residual(&dvector![1.0], &dvector![1.0]).unwrap() < 1e-14);
    assert!((p.kkt_residual(&dvector![1.1], &dvector![1.0]).unwrap() - 0.2).abs() < 1e-12);

    let lam = p.multiplier_set(&dvector![1.0]).unwrap();
    assert!(lam.contains(&dvector![1.0], 1e-10).unwrap());
    assert!(!lam.contains(&dvector![0.9], 1e-10).unwrap());
    assert!(p.cone_d(&dvector![1.0], &dvector![1.0]).unwrap().is_trivial().unwrap());
    assert!(p.subspace_dplus(&dvector![1.0], &dvector![1.0]).unwrap().is_trivial().unwrap());

    let shifted = p.perturbed_problem(&dvector![0.0], &dvector![0.1]).unwrap();
    let trace = run_sqp(&shifted, &dvector![0.0], &dvector![0.0], &SqpConfig::default()).unwrap();
    let last = trace.last().unwrap();
    assert!((last.x[0] - 0.9).abs() < 1e-10);
}

#[test]
fn p2_multipliers_and_cone() {
    let p = p2();
    let lam = p.multiplier_set(&dvector![0.0]).unwrap();
    for l in [-50.0, -1.0, 0.0, 7.0] {
        assert!(lam.contains(&dvector![l], 1e-10).unwrap());
    }
    let d = p.cone_d(&dvector![0.0], &dvector![0.0]).unwrap();
    for w in [-2.0, 0.0, 3.0] {
        assert!(d.contains(&dvector![w], 1e-12).unwrap());
    }
}

#[test]
fn p1_subproblem_and_single_step() {
    let p = p1();
    let spec = SubproblemSpec {
        xk: dvector![0.0],
        lambdak: dvector![0.0],
        h: dmatrix![1.0],
        delta: f64::INFINITY,
    };
    let sols = solve_subproblem(&p, &spec).unwrap();
    assert!((sols[0].x_next[0] - 1.0).abs() < 1e-12);
    assert!((sols[0].lambda_next[0] - 1.0).abs() < 1e-12);

    let trace = run_sqp(&p, &dvector![0.0], &dvector![0.0], &SqpConfig::default()).unwrap();
    assert_eq!(trace.len(), 2);
    assert!(trace[1].residual <= 1e-10);
    assert!(close(&trace[1].x, &dvector![1.0], 1e-12));
}

/// Newton's method on the smooth KKT system `2x + 2λx = 0`, `x² = 0`.
fn newton_p2(mut x: f64, mut l: f64, steps: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(x, l)];
    for _ in 0..steps {
        let f = [2.0 * x + 2.0 * l * x, x * x];
        let j = [[2.0 + 2.0 * l, 2.0 * x], [2.0 * x, 0.0]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 {
            break;
        }
        let dx = (j[1][1] * f[0] - j[0][1] * f[1]) / det;
        let dl = (-j[1][0] * f[0] + j[0][0] * f[1]) / det;
        x -= dx;
        l -= dl;
        out.push((x, l));
    }
    out
}

#[test]
fn p2_sqp_tracks_newton_and_is_slow() {
    let p = p2();
    let config = SqpConfig {
        max_iter: 30,
        ..SqpConfig::with_mode(HessianMode::Exact)
    };
    let trace = match run_sqp(&p, &dvector![0.1], &dvector![-1.0], &config) {
        Ok(t) => t,
        Err(plqsqp::Error::MaxIterReached { trace }) => trace,
        Err(e) => panic!("{e}"),
    };
    let newton = newton_p2(0.1, -1.0, trace.len() - 1);
    for (rec, (x, l)) in trace.iter().zip(newton.iter()).take(8) {
        assert!((rec.x[0] - x).abs() <= 1e-9 * (1.0 + x.abs()), "{} vs {x}", rec.x[0]);
        assert!((rec.lambda[0] - l).abs() <= 1e-7 * (1.0 + l.abs()), "{} vs {l}", rec.lambda[0]);
    }
    // x halves each step: linear, never superlinear
    let rep = rate_report(&trace, None).unwrap();
    assert_ne!(rep.classification_primal, RateClass::Superlinear);
    for w in trace.windows(2).take(6) {
        assert!((w[1].x[0] / w[0].x[0] - 0.5).abs() < 1e-9);
    }
}

#[test]
fn bfgs_rank_two_update() {
    let h = bfgs_update(&DMatrix::identity(2, 2), &dvector![1.0, 0.0], &dvector![2.0, 0.0], 0.2).unwrap();
    assert!((h - dmatrix![2.0, 0.0; 0.0, 1.0]).amax() < 1e-14);
}

#[test]
fn diagnostics_hand_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = p2();
    let v = check_noncritical(&p, &dvector![0.0], &dvector![-1.0]).unwrap();
    assert_eq!(v.result, Outcome::Fails);
    assert!(matches!(v.certificate, Some(Certificate::Vector(ref w)) if (w[0].abs() - 1.0).abs() < 1e-12));
    assert_eq!(check_noncritical(&p, &dvector![0.0], &dvector![0.0]).unwrap().result, Outcome::Holds);

    let pinned = CompositeProblem::new(
        Poly2::new(0.0, dvector![0.0], scalar(1.0)).unwrap(),
        Poly2Map::affine(&scalar(1.0), &dvector![0.0]).unwrap(),
        PlqFunction::indicator(Polyhedron::origin(1)).unwrap(),
        Polyhedron::whole(1),
    )
    .unwrap();
    assert_eq!(check_noncritical(&pinned, &dvector![0.0], &dvector![0.0]).unwrap().result, Outcome::Holds);

    assert_eq!(check_unique_multiplier(&p1(), &dvector![1.0], &dvector![1.0]).unwrap().result, Outcome::Holds);
    assert_eq!(check_unique_multiplier(&p, &dvector![0.0], &dvector![3.0]).unwrap().result, Outcome::Fails);

    let s = check_sosc(&p1(), &dvector![1.0], &dvector![1.0], 20, &mut rng).unwrap();
    assert_eq!(s.result, Outcome::HeuristicHolds);
    assert!(s.detail.contains("D trivial"));
    let s = check_sosc(&p, &dvector![0.0], &dvector![-1.0], 20, &mut rng).unwrap();
    assert_eq!(s.result, Outcome::HeuristicFails);
    assert!(matches!(s.certificate, Some(Certificate::Vector(ref w)) if w[0].abs() > 0.0));
}

#[test]
fn reduction_lemma_bisection_finds_locality_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = PlqFunction::abs();
    let ok = verify_reduction_lemma(&g, &dvector![0.0], &dvector![1.0], 1e-2, 300, &mut rng).unwrap();
    assert_eq!(ok.result, Outcome::Holds);
    // around z = 0.5 the graph changes shape at distance 0.5
    let v = verify_reduction_lemma(&g, &dvector![0.5], &dvector![1.0], 2.0, 300, &mut rng).unwrap();
    assert_eq!(v.result, Outcome::Fails);
    let Some(Certificate::Scalar(r)) = v.certificate else { panic!("{v}") };
    assert!(r > 0.2 && r < 1.0, "{r}");
}

#[test]
fn p1_calmness_matches_closed_form() {
    // S(v, p) = (min(2 + v, 1 − p), max(0, 2 + v − x)); the ratio never exceeds 2
    let p = p1();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (v, q) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        let pert = p.perturbed_problem(&dvector![v], &dvector![q]).unwrap();
        let trace = run_sqp(&pert, &dvector![1.0], &dvector![1.0], &SqpConfig::default()).unwrap();
        let last = trace.last().unwrap();
        let x: f64 = (2.0 + v).min(1.0 - q);
        assert!((last.x[0] - x).abs() < 1e-10);
        assert!((last.lambda[0] - (2.0 + v - x).max(0.0)).abs() < 1e-10);
    }
    let est = calmness_samples(&p, &dvector![1.0], &dvector![1.0], &[1e-2, 1e-3], 20, CalmnessMode::Full, &mut rng).unwrap();
    for k in est.kappa {
        assert!(k > 0.0 && k <= 2.0 + 1e-9, "{k}");
    }
}
