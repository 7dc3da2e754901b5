//! JSON problem files.
//!
//! A polyhedron is `{"dim", "A", "b", "E", "d"}` with matrices stored as
//! arrays of rows. `g` is either an explicit PLQ function
//! `{"m", "pieces": [{"C", "A", "a", "alpha"}]}` or a dual representation
//! `{"Omega", "B"}`. A problem is `{"phi", "Phi", "g", "Theta", "meta"}`,
//! where `phi` and every entry of `Phi` are `{"c", "l", "Q"}`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{CompositeProblem, Poly2, Poly2Map, PrimalDual};
use crate::plq::{DualLq, Piece, PlqFunction};
use crate::polyhedral::Polyhedron;

/// Samples used by the certificates that run on load.
pub const LOAD_CERTIFICATE_SAMPLES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyhedronJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(rename = "E", default)]
    pub e: Vec<Vec<f64>>,
    #[serde(default)]
    pub d: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceJson {
    #[serde(rename = "C")]
    pub c: PolyhedronJson,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "a", default)]
    pub lin: Vec<f64>,
    #[serde(default)]
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlqJson {
    pub m: usize,
    pub pieces: Vec<PieceJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualLqJson {
    #[serde(rename = "Omega")]
    pub omega: PolyhedronJson,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GJson {
    Plq(PlqJson),
    DualLq(DualLqJson),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly2Json {
    #[serde(default)]
    pub c: f64,
    pub l: Vec<f64>,
    #[serde(rename = "Q", default)]
    pub q: Vec<Vec<f64>>,
}

/// Sidecar data recorded by the generators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xbar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdabar: Option<Vec<f64>>,
    /// Whether `xbar` is known to be a local minimizer. This is an input
    /// assumption, never computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_min: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl ProblemMeta {
    pub fn reference(&self) -> Option<PrimalDual> {
        match (&self.xbar, &self.lambdabar) {
            (Some(x), Some(l)) => Some(PrimalDual::new(DVector::from_vec(x.clone()), DVector::from_vec(l.clone()))),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemJson {
    pub phi: Poly2Json,
    #[serde(rename = "Phi")]
    pub big_phi: Vec<Poly2Json>,
    pub g: GJson,
    #[serde(rename = "Theta", default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<PolyhedronJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ProblemMeta>,
}

fn matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Validation(format!(
                "{what}: row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn square(rows: &[Vec<f64>], n: usize, what: &'static str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(n, n));
    }
    if rows.len() != n {
        return Err(Error::dim(what, n, rows.len()));
    }
    matrix(rows, n, what)
}

impl PolyhedronJson {
    pub fn from_polyhedron(p: &Polyhedron) -> Self {
        PolyhedronJson {
            dim: Some(p.dim()),
            a: rows_of(p.a()),
            b: p.b().iter().cloned().collect(),
            e: rows_of(p.e()),
            d: p.d().iter().cloned().collect(),
        }
    }

    pub fn to_polyhedron(&self, dim: usize) -> Result<Polyhedron> {
        if let Some(d) = self.dim {
            if d != dim {
                return Err(Error::dim("polyhedron dimension", dim, d));
            }
        }
        let a = matrix(&self.a, dim, "A")?;
        let e = matrix(&self.e, dim, "E")?;
        Polyhedron::new(a, DVector::from_vec(self.b.clone()), e, DVector::from_vec(self.d.clone()))
    }
}

impl Poly2Json {
    pub fn from_poly2(p: &Poly2) -> Self {
        Poly2Json {
            c: p.c,
            l: p.l.iter().cloned().collect(),
            q: rows_of(&p.q),
        }
    }

    pub fn to_poly2(&self) -> Result<Poly2> {
        let n = self.l.len();
        Poly2::new(self.c, DVector::from_vec(self.l.clone()), square(&self.q, n, "Q")?)
    }
}

impl PlqJson {
    pub fn from_plq(g: &PlqFunction) -> Self {
        PlqJson {
            m: g.dim(),
            pieces: g
                .pieces()
                .iter()
                .map(|p| PieceJson {
                    c: PolyhedronJson::from_polyhedron(&p.c),
                    a: rows_of(&p.a),
                    lin: p.lin.iter().cloned().collect(),
                    alpha: p.alpha,
                })
                .collect(),
        }
    }

    pub fn to_plq(&self) -> Result<PlqFunction> {
        let m = self.m;
        let mut pieces = Vec::new();
        for (i, p) in self.pieces.iter().enumerate() {
            let c = p.c.to_polyhedron(m)?;
            let lin = if p.lin.is_empty() { vec![0.0; m] } else { p.lin.clone() };
            if lin.len() != m {
                return Err(Error::Validation(format!("piece {i}: a has {} entries, expected {m}", lin.len())));
            }
            let piece = Piece::new(c, square(&p.a, m, "A")?, DVector::from_vec(lin), p.alpha).map_err(|e| match e {
                Error::Validation(msg) => Error::Validation(format!("{msg} (piece {i})")),
                other => other,
            })?;
            pieces.push(piece);
        }
        PlqFunction::new(m, pieces)
    }
}

impl ProblemJson {
    pub fn from_problem(problem: &CompositeProblem, meta: Option<&ProblemMeta>) -> Self {
        let g = match &problem.g_dual {
            Some(h) => GJson::DualLq(DualLqJson {
                omega: PolyhedronJson::from_polyhedron(&h.omega),
                b: rows_of(&h.b),
            }),
            None => GJson::Plq(PlqJson::from_plq(&problem.g)),
        };
        ProblemJson {
            phi: Poly2Json::from_poly2(&problem.phi),
            big_phi: problem.big_phi.components().iter().map(Poly2Json::from_poly2).collect(),
            g,
            theta: Some(PolyhedronJson::from_polyhedron(&problem.theta)),
            meta: meta.cloned(),
        }
    }

    /// Builds and validates the problem, including the PLQ certificates.
    pub fn to_problem(&self) -> Result<CompositeProblem> {
        let phi = self.phi.to_poly2()?;
        let n = phi.dim();
        let comps = self.big_phi.iter().map(|c| c.to_poly2()).collect::<Result<Vec<_>>>()?;
        let big_phi = Poly2Map::new(n, comps)?;
        let theta = match &self.theta {
            Some(t) => t.to_polyhedron(n)?,
            None => Polyhedron::whole(n),
        };
        let problem = match &self.g {
            GJson::Plq(g) => CompositeProblem::new(phi, big_phi, g.to_plq()?, theta)?,
            GJson::DualLq(h) => {
                let m = h.omega.dim.unwrap_or(h.b.len());
                let omega = h.omega.to_polyhedron(m)?;
                let dual = DualLq::new(omega, square(&h.b, m, "B")?)?;
                CompositeProblem::with_dual_lq(phi, big_phi, dual, theta)?
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        problem.g.validate(&mut rng, LOAD_CERTIFICATE_SAMPLES)?;
        Ok(problem)
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

pub fn parse_problem(text: &str) -> Result<(CompositeProblem, ProblemMeta)> {
    let file: ProblemJson = serde_json::from_str(text).map_err(parse_error)?;
    let problem = file.to_problem()?;
    Ok((problem, file.meta.unwrap_or_default()))
}

pub fn load_problem(path: &Path) -> Result<(CompositeProblem, ProblemMeta)> {
    parse_problem(&std::fs::read_to_string(path)?)
}

pub fn problem_to_string(problem: &CompositeProblem, meta: Option<&ProblemMeta>) -> Result<String> {
    serde_json::to_string_pretty(&ProblemJson::from_problem(problem, meta))
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))
}

pub fn save_problem(path: &Path, problem: &CompositeProblem, meta: Option<&ProblemMeta>) -> Result<()> {
    std::fs::write(path, problem_to_string(problem, meta)? + "\n")?;
    Ok(())
}
