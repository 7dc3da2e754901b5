mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use plqsqp::generate::{generate, GenParams, Kind};
use plqsqp::io::{parse_problem, problem_to_string};
use plqsqp::plq::PlqFunction;
use plqsqp::polyhedral::{normal_cone_dist, project, ConeFamily, Polyhedron};
use plqsqp::sqp::{bfgs_update, classify, dennis_more_values, RateClass};

fn vec_strategy(n: usize, r: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-r..r, n).prop_map(DVector::from_vec)
}

/// A box in ℝ³ cut by one half-space through the box center.
fn set_strategy() -> impl Strategy<Value = Polyhedron> {
    (vec_strategy(3, 1.0), vec_strategy(3, 1.0), 0.2..2.0f64).prop_map(|(lo, normal, width)| {
        let hi = lo.add_scalar(width);
        let center = lo.add_scalar(width / 2.0);
        let b = normal.dot(&center);
        Polyhedron::boxed(&lo, &hi)
            .unwrap()
            .with_inequalities(&DMatrix::from_row_slice(1, 3, normal.as_slice()), &DVector::from_element(1, b))
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_a_nonexpansive_retraction(p in set_strategy(), y1 in vec_strategy(3, 4.0), y2 in vec_strategy(3, 4.0)) {
        let a = project(&p, &y1).unwrap();
        let b = project(&p, &y2).unwrap();
        prop_assert!(p.contains_scaled(&a, 1e-9).unwrap());
        prop_assert!((project(&p, &a).unwrap() - &a).norm() <= 1e-9);
        prop_assert!((&a - &b).norm() <= (&y1 - &y2).norm() + 1e-9);
        prop_assert!(normal_cone_dist(&p, &a, &(&y1 - &a)).unwrap() <= 1e-8 * (1.0 + y1.norm()));
    }

    #[test]
    fn abs_prox_is_firmly_nonexpansive(x in -5.0..5.0f64, y in -5.0..5.0f64) {
        let g = PlqFunction::abs();
        let (x, y) = (DVector::from_element(1, x), DVector::from_element(1, y));
        let (px, py) = (g.prox(&x).unwrap(), g.prox(&y).unwrap());
        prop_assert!(g.subgradient_gap(&px, &(&x - &px)).unwrap() <= 1e-9);
        prop_assert!((&px - &py).norm_squared() <= (&px - &py).dot(&(&x - &y)) + 1e-10);
    }

    #[test]
    fn max_coordinate_subderivative_dominates_subgradients(z in vec_strategy(3, 1.0), w in vec_strategy(3, 1.0), pick in 0usize..3) {
        let g = PlqFunction::max_coordinate(3).unwrap();
        // snap one coordinate onto the max to create ties
        let mut z = z;
        z[pick] = z.max();
        let dg = g.subderivative(&z, &w).unwrap();
        let top = z.max();
        let active: Vec<usize> = (0..3).filter(|&i| z[i] == top).collect();
        let expected = active.iter().map(|&i| w[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((dg - expected).abs() <= 1e-9);
    }

    #[test]
    fn exact_hessian_has_zero_dennis_more(seed in 0u64..500, step in vec_strategy(3, 1.0)) {
        prop_assume!(step.norm() > 1e-3);
        let (problem, meta) = generate(Kind::Nlp, &GenParams { n: 3, m: 2, s: 1, ..Default::default() }, seed).unwrap();
        let r = meta.reference().unwrap();
        let h = problem.hess_lagrangian(&r.lambda);
        let whole = ConeFamily::subspace(&DMatrix::identity(3, 3));
        let (d, dp, full) = dennis_more_values(&problem, &r.lambda, &h, &r.x, &(&r.x + &step), &whole, &whole).unwrap();
        prop_assert!(d.abs() < 1e-14 && dp.abs() < 1e-14 && full.abs() < 1e-14);
    }

    #[test]
    fn bfgs_satisfies_secant_equation(s in vec_strategy(3, 1.0), y in vec_strategy(3, 1.0)) {
        let h = DMatrix::identity(3, 3);
        let sy = s.dot(&y);
        // undamped branch: sᵀy ≥ 0.2 sᵀHs
        prop_assume!(s.norm() > 1e-2 && sy >= 0.2 * s.norm_squared());
        let h1 = bfgs_update(&h, &s, &y, 0.2).unwrap();
        prop_assert!((&h1 * &s - &y).norm() <= 1e-9 * (1.0 + y.norm()));
        prop_assert!((&h1 - h1.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn geometric_ratios_classify_linear(r in 0.15..0.9f64, len in 3usize..7) {
        prop_assert_eq!(classify(&vec![r; len]), RateClass::Linear);
    }

    #[test]
    fn shrinking_ratios_classify_superlinear(start in 0.2..0.9f64, len in 3usize..7) {
        let ratios: Vec<f64> = (0..len).map(|k| start.powi(k as i32 + 1) * 0.09 / start).collect();
        prop_assert_eq!(classify(&ratios), RateClass::Superlinear);
    }

    #[test]
    fn problem_json_round_trips(seed in 0u64..200, kind_ix in 0usize..4) {
        let kind = [Kind::Nlp, Kind::Minmax, Kind::Elqp, Kind::CriticalShowcase][kind_ix];
        let params = GenParams { n: 3, m: 2, s: 1, ..Default::default() };
        let (problem, meta) = generate(kind, &params, seed).unwrap();
        let text = problem_to_string(&problem, Some(&meta)).unwrap();
        let (back, meta_back) = parse_problem(&text).unwrap();
        prop_assert_eq!(&meta_back, &meta);
        prop_assert_eq!(problem_to_string(&back, Some(&meta_back)).unwrap(), text.clone());
        let r = meta.reference().unwrap();
        let a = problem.kkt_residual(&r.x, &r.lambda).unwrap();
        let b = back.kkt_residual(&r.x, &r.lambda).unwrap();
        prop_assert!((a - b).abs() <= 1e-14);
        // same seed, same instance
        let (again, _) = generate(kind, &params, seed).unwrap();
        prop_assert_eq!(problem_to_string(&again, Some(&meta)).unwrap(), text);
    }
}
