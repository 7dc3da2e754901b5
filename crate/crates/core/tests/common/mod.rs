#![allow(dead_code)]

use nalgebra::{dvector, DMatrix, DVector};
use plqsqp::kkt::{CompositeProblem, Poly2, Poly2Map};
use plqsqp::plq::{Piece, PlqFunction};
use plqsqp::polyhedral::Polyhedron;

pub fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// φ = ½(x − 2)², Φ = x − 1, g = δ_{ℝ₋}; KKT point (1, 1).
pub fn p1() -> CompositeProblem {
    CompositeProblem::new(
        Poly2::new(2.0, dvector![-2.0], scalar(1.0)).unwrap(),
        Poly2Map::affine(&scalar(1.0), &dvector![-1.0]).unwrap(),
        PlqFunction::indicator(Polyhedron::nonpos_orthant(1)).unwrap(),
        Polyhedron::whole(1),
    )
    .unwrap()
}

/// φ = x², Φ = x², g = δ_{0}; every λ is a multiplier at 0.
pub fn p2() -> CompositeProblem {
    CompositeProblem::new(
        Poly2::new(0.0, dvector![0.0], scalar(2.0)).unwrap(),
        Poly2Map::new(1, vec![Poly2::new(0.0, dvector![0.0], scalar(2.0)).unwrap()]).unwrap(),
        PlqFunction::indicator(Polyhedron::origin(1)).unwrap(),
        Polyhedron::whole(1),
    )
    .unwrap()
}

/// φ = ½x², Φ = x, g = δ_{ℝ₋}; at (0, 0) the cone 𝒟 is ℝ₋ and 𝒟₊ is ℝ.
pub fn half_line() -> CompositeProblem {
    CompositeProblem::new(
        Poly2::new(0.0, dvector![0.0], scalar(1.0)).unwrap(),
        Poly2Map::affine(&scalar(1.0), &dvector![0.0]).unwrap(),
        PlqFunction::indicator(Polyhedron::nonpos_orthant(1)).unwrap(),
        Polyhedron::whole(1),
    )
    .unwrap()
}

/// φ = ½(x − 1)², Φ(x) = (x, x), g = δ_{ℝ₋²}; at x̄ = 0 the multipliers form
/// the segment λ₁ + λ₂ = 1, λ ≥ 0.
pub fn doubled_constraint() -> CompositeProblem {
    CompositeProblem::new(
        Poly2::new(0.5, dvector![-1.0], scalar(1.0)).unwrap(),
        Poly2Map::affine(&DMatrix::from_element(2, 1, 1.0), &dvector![0.0, 0.0]).unwrap(),
        PlqFunction::indicator(Polyhedron::nonpos_orthant(2)).unwrap(),
        Polyhedron::whole(1),
    )
    .unwrap()
}

/// φ = ½‖x − a‖², Φ = x₁, g ≡ 0 (one piece, zero data).
pub fn smooth_unconstrained(a: DVector<f64>) -> CompositeProblem {
    let n = a.len();
    let mut row = DMatrix::zeros(1, n);
    row[(0, 0)] = 1.0;
    CompositeProblem::new(
        Poly2::new(0.5 * a.norm_squared(), -&a, DMatrix::identity(n, n)).unwrap(),
        Poly2Map::affine(&row, &dvector![0.0]).unwrap(),
        PlqFunction::quadratic(scalar(0.0), dvector![0.0], 0.0).unwrap(),
        Polyhedron::whole(n),
    )
    .unwrap()
}

pub fn half_square() -> PlqFunction {
    PlqFunction::quadratic(scalar(1.0), dvector![0.0], 0.0).unwrap()
}

pub fn nonpos_indicator() -> PlqFunction {
    PlqFunction::indicator(Polyhedron::nonpos_orthant(1)).unwrap()
}

/// g(z) = max(z₁, 0) + ½z₂² as two pieces split by z₁ = 0.
pub fn two_piece_2d() -> PlqFunction {
    let quad = DMatrix::from_diagonal(&dvector![0.0, 1.0]);
    let left = Polyhedron::from_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), dvector![0.0]).unwrap();
    let right = Polyhedron::from_inequalities(DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]), dvector![0.0]).unwrap();
    PlqFunction::new(
        2,
        vec![
            Piece::new(left, quad.clone(), dvector![0.0, 0.0], 0.0).unwrap(),
            Piece::new(right, quad, dvector![1.0, 0.0], 0.0).unwrap(),
        ],
    )
    .unwrap()
}

/// The calculus fixture functions with a name each.
pub fn calculus_fixtures() -> Vec<(&'static str, PlqFunction)> {
    vec![
        ("abs", PlqFunction::abs()),
        ("nonpos_indicator", nonpos_indicator()),
        ("half_square", half_square()),
        ("two_piece_2d", two_piece_2d()),
    ]
}

/// Base points `(z̄, v̄)` with `v̄ ∈ ∂g(z̄)` for each calculus fixture.
pub fn graph_points(name: &str) -> Vec<(DVector<f64>, DVector<f64>)> {
    match name {
        "abs" => vec![
            (dvector![0.0], dvector![1.0]),
            (dvector![0.0], dvector![0.0]),
            (dvector![0.0], dvector![-0.3]),
            (dvector![0.7], dvector![1.0]),
        ],
        "nonpos_indicator" => vec![
            (dvector![0.0], dvector![2.0]),
            (dvector![0.0], dvector![0.0]),
            (dvector![-1.0], dvector![0.0]),
        ],
        "half_square" => vec![(dvector![0.5], dvector![0.5]), (dvector![-2.0], dvector![-2.0])],
        "two_piece_2d" => vec![
            (dvector![0.0, 0.3], dvector![0.5, 0.3]),
            (dvector![0.0, 0.0], dvector![0.0, 0.0]),
            (dvector![0.0, -1.0], dvector![1.0, -1.0]),
            (dvector![0.4, 0.2], dvector![1.0, 0.2]),
        ],
        _ => Vec::new(),
    }
}
