//! Dense two-phase simplex for the small linear programs that appear in
//! feasibility checks, redundancy removal and the LP certificates of the
//! diagnostics. Bland's rule is used throughout, so termination is finite
//! even on the highly degenerate cone systems the diagnostics produce.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::polyhedral::Polyhedron;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Runs Bland-rule simplex iterations on the current cost row over the
    /// admissible columns. Returns false if unbounded.
    fn run(&mut self, admissible: usize) -> Result<bool> {
        for _ in 0..MAX_PIVOTS {
            let entering = (0..admissible).find(|&j| self.cost[j] < -COST_TOL);
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match best {
                        None => true,
                        Some((br, _, bb)) => {
                            ratio < br - 1e-14 || (ratio <= br + 1e-14 && self.basis[i] < bb)
                        }
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            match best {
                None => return Ok(false),
                Some((_, r, _)) => self.pivot(r, c),
            }
        }
        Err(Error::Numerical("simplex pivot limit reached".into()))
    }
}

/// Minimizes `c^T x` over the polyhedron.
pub fn minimize(c: &DVector<f64>, poly: &Polyhedron) -> Result<LpOutcome> {
    let n = poly.dim();
    if c.len() != n {
        return Err(Error::dim("LP objective", n, c.len()));
    }
    solve(Some(c), poly)
}

/// Maximizes `c^T x` over the polyhedron.
pub fn maximize(c: &DVector<f64>, poly: &Polyhedron) -> Result<LpOutcome> {
    Ok(match minimize(&(-c), poly)? {
        LpOutcome::Optimal { x, value } => LpOutcome::Optimal { x, value: -value },
        other => other,
    })
}

/// Returns some point of the polyhedron, or `None` if it is empty.
pub fn find_feasible(poly: &Polyhedron) -> Result<Option<DVector<f64>>> {
    Ok(match solve(None, poly)? {
        LpOutcome::Optimal { x, .. } => Some(x),
        _ => None,
    })
}

fn solve(c: Option<&DVector<f64>>, poly: &Polyhedron) -> Result<LpOutcome> {
    let n = poly.dim();
    let (a, b, e, d) = (poly.a(), poly.b(), poly.e(), poly.d());
    let p = a.nrows();
    let q = e.nrows();
    let m = p + q;
    // columns: x+ (n), x- (n), slack (p), artificial (m), rhs
    let nstruct = 2 * n + p;
    let ncols = nstruct + m;
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = vec![0.0; ncols + 1];
        let (coef, rhs) = if i < p {
            (a.row(i).clone_owned(), b[i])
        } else {
            (e.row(i - p).clone_owned(), d[i - p])
        };
        let scale = coef.amax().max(rhs.abs()).max(1e-300);
        let scale = if coef.amax() == 0.0 { 1.0 } else { scale };
        for j in 0..n {
            row[j] = coef[j] / scale;
            row[n + j] = -coef[j] / scale;
        }
        if i < p {
            row[2 * n + i] = 1.0 / scale;
        }
        row[ncols] = rhs / scale;
        if row[ncols] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        row[nstruct + i] = 1.0;
        rows.push(row);
    }
    let mut cost = vec![0.0; ncols + 1];
    for row in &rows {
        for j in 0..nstruct {
            cost[j] -= row[j];
        }
        cost[ncols] -= row[ncols];
    }
    let mut tab = Tableau {
        rows,
        cost,
        basis: (nstruct..nstruct + m).collect(),
        ncols,
    };
    if !tab.run(nstruct)? {
        return Err(Error::Numerical("phase-1 LP reported unbounded".into()));
    }
    if -tab.cost[ncols] > FEAS_TOL * (1.0 + b.amax().max(d.amax())) {
        return Ok(LpOutcome::Infeasible);
    }
    // drive artificials out of the basis
    let mut r = 0;
    while r < tab.rows.len() {
        if tab.basis[r] >= nstruct {
            let col = (0..nstruct).find(|&j| tab.rows[r][j].abs() > 1e-9);
            match col {
                Some(j) => {
                    tab.pivot(r, j);
                    r += 1;
                }
                None => {
                    tab.rows.remove(r);
                    tab.basis.remove(r);
                }
            }
        } else {
            r += 1;
        }
    }
    for row in tab.rows.iter_mut() {
        for j in nstruct..ncols {
            row[j] = 0.0;
        }
    }
    let extract = |tab: &Tableau| {
        let mut x = DVector::zeros(n);
        for (i, &bj) in tab.basis.iter().enumerate() {
            if bj < n {
                x[bj] += tab.rhs(i);
            } else if bj < 2 * n {
                x[bj - n] -= tab.rhs(i);
            }
        }
        x
    };
    let Some(c) = c else {
        return Ok(LpOutcome::Optimal {
            x: extract(&tab),
            value: 0.0,
        });
    };
    let mut cost = vec![0.0; ncols + 1];
    for j in 0..n {
        cost[j] = c[j];
        cost[n + j] = -c[j];
    }
    for (i, &bj) in tab.basis.iter().enumerate() {
        let f = cost[bj];
        if f != 0.0 {
            for (v, rv) in cost.iter_mut().zip(tab.rows[i].iter()) {
                *v -= f * rv;
            }
        }
    }
    tab.cost = cost;
    if !tab.run(nstruct)? {
        return Ok(LpOutcome::Unbounded);
    }
    let x = extract(&tab);
    let value = c.dot(&x);
    Ok(LpOutcome::Optimal { x, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DMatrix};

    fn simplex_2d() -> Polyhedron {
        // x1 + x2 <= 1, x >= 0
        Polyhedron::from_inequalities(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            dvector![1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn maximizes_over_triangle() {
        let out = maximize(&dvector![1.0, 2.0], &simplex_2d()).unwrap();
        assert!((out.value().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_unbounded_and_infeasible() {
        let half = Polyhedron::from_inequalities(DMatrix::from_row_slice(1, 1, &[1.0]), dvector![0.0])
            .unwrap();
        assert_eq!(minimize(&dvector![1.0], &half).unwrap(), LpOutcome::Unbounded);
        let empty = Polyhedron::from_inequalities(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            dvector![-1.0, 0.0],
        )
        .unwrap();
        assert_eq!(minimize(&dvector![1.0], &empty).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn handles_equalities_and_free_variables() {
        let p = Polyhedron::new(
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            dvector![-3.0],
        )
        .unwrap();
        let x = find_feasible(&p).unwrap().unwrap();
        assert!((x[0] - x[1] + 3.0).abs() < 1e-12);
    }
}
