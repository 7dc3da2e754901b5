use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use plqsqp::diagnostics::{check_noncritical, check_sosc, check_unique_multiplier, estimate_calmness, CalmnessMode};
use plqsqp::generate::{GenParams, Kind};
use plqsqp::io::{parse_problem, problem_to_string, ProblemMeta};
use plqsqp::kkt::CompositeProblem;
use plqsqp::sqp::{rate_report, run_sqp, HessianMode, SqpConfig};
use plqsqp::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::BadParams(_)
        | Error::DimensionMismatch { .. }
        | Error::PointNotInTheta
        | Error::NotAKktPoint(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vec(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

/// A composite problem min φ(x) + g(Φ(x)) over x ∈ Θ with optional known solution.
#[pyclass(frozen)]
struct Problem {
    inner: CompositeProblem,
    meta: ProblemMeta,
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (inner, meta) = parse_problem(text).map_err(to_py)?;
        Ok(Problem { inner, meta })
    }

    fn to_json(&self) -> PyResult<String> {
        problem_to_string(&self.inner, Some(&self.meta)).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    /// The `(xbar, lambdabar)` recorded with the problem, if any.
    #[getter]
    fn reference(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.meta
            .reference()
            .map(|r| (r.x.as_slice().to_vec(), r.lambda.as_slice().to_vec()))
    }

    fn kkt_residual(&self, x: Vec<f64>, lam: Vec<f64>) -> PyResult<f64> {
        self.inner.kkt_residual(&vec(x), &vec(lam)).map_err(to_py)
    }

    /// Runs SQP; returns a dict with the final point, the residual history and
    /// the rate classification (None when the run is too short to rate).
    #[pyo3(signature = (x0, lam0, mode = "exact", tol = 1e-10, max_iter = 100))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        x0: Vec<f64>,
        lam0: Vec<f64>,
        mode: &str,
        tol: f64,
        max_iter: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mode: HessianMode = mode.parse().map_err(to_py)?;
        let reference = self.meta.reference();
        let config = SqpConfig {
            tol,
            max_iter,
            reference: reference.clone(),
            ..SqpConfig::with_mode(mode)
        };
        let trace = py
            .detach(|| run_sqp(&self.inner, &vec(x0), &vec(lam0), &config))
            .map_err(to_py)?;
        let last = trace.last().expect("nonempty trace");
        let out = PyDict::new(py);
        out.set_item("x", last.x.as_slice().to_vec())?;
        out.set_item("lambda", last.lambda.as_slice().to_vec())?;
        out.set_item("iterations", last.k)?;
        out.set_item("residuals", trace.iter().map(|r| r.residual).collect::<Vec<_>>())?;
        let class = rate_report(&trace, reference.as_ref())
            .ok()
            .map(|r| r.classification.to_string());
        out.set_item("classification", class)?;
        Ok(out)
    }

    /// Verdicts at `(x, lam)` as `(condition, result, detail)` triples.
    #[pyo3(signature = (x, lam, samples = 30, seed = 0))]
    fn diagnose(&self, py: Python<'_>, x: Vec<f64>, lam: Vec<f64>, samples: usize, seed: u64) -> PyResult<Vec<(String, String, String)>> {
        let (x, l) = (vec(x), vec(lam));
        let p = &self.inner;
        let verdicts = py
            .detach(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let radii = [1e-2, 1e-3, 1e-4];
                Ok::<_, Error>(vec![
                    check_noncritical(p, &x, &l)?,
                    check_unique_multiplier(p, &x, &l)?,
                    check_sosc(p, &x, &l, samples, &mut rng)?,
                    estimate_calmness(p, &x, &l, &radii, samples, CalmnessMode::Full, &mut rng)?,
                ])
            })
            .map_err(to_py)?;
        Ok(verdicts
            .into_iter()
            .map(|v| (v.condition.to_string(), v.result.to_string(), v.detail))
            .collect())
    }
}

/// Generates a test instance with a known KKT point.
#[pyfunction]
#[pyo3(signature = (kind, n = 2, m = 1, s = 0, seed = 0))]
fn generate(kind: &str, n: usize, m: usize, s: usize, seed: u64) -> PyResult<Problem> {
    let kind: Kind = kind.parse().map_err(to_py)?;
    let params = GenParams {
        n,
        m,
        s,
        ..Default::default()
    };
    let (inner, meta) = plqsqp::generate::generate(kind, &params, seed).map_err(to_py)?;
    Ok(Problem { inner, meta })
}

#[pymodule]
fn plqsqp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
