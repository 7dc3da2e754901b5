//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Singular values and right singular vectors of `m`, padded so that `V` is square.
fn full_right_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.ncols();
    let padded = if m.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        v.set_column(col, &vt.row(i).transpose());
    }
    (sv, v)
}

fn cutoff(sv: &[f64]) -> f64 {
    RANK_TOL * sv.first().copied().unwrap_or(0.0).max(1.0)
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 || n == 0 {
        return DMatrix::identity(n, n);
    }
    let (sv, v) = full_right_svd(m);
    let tol = cutoff(&sv);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    v.columns(rank, n - rank).into_owned()
}

pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = RANK_TOL * max.max(1.0);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Orthonormal basis of the column space of `b`.
pub fn orth(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    if b.ncols() == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = b.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = RANK_TOL * max.max(1.0);
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Minimum-norm least-squares solution of `m x = rhs`.
pub fn lstsq(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(m.ncols());
    }
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = RANK_TOL * max.max(1.0);
    svd.solve(rhs, eps)
        .unwrap_or_else(|_| DVector::zeros(m.ncols()))
}

/// Indices of a maximal linearly independent subset of rows, scanned in order.
pub fn independent_rows(m: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..m.nrows() {
        let mut trial = kept.clone();
        trial.push(i);
        if rank(&m.select_rows(trial.iter())) == trial.len() {
            kept.push(i);
        }
    }
    kept
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Orthogonal projector onto the column span of an orthonormal basis.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

pub fn stack_rows(blocks: &[&DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, ncols);
    let mut r = 0;
    for b in blocks {
        if b.nrows() > 0 {
            out.rows_mut(r, b.nrows()).copy_from(b);
            r += b.nrows();
        }
    }
    out
}

pub fn from_rows_vec(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let z = null_space(&m);
        assert_eq!(z.ncols(), 2);
        assert!((&m * &z).amax() < 1e-12);
        assert!((z.transpose() * &z - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn null_space_of_tall_full_rank_is_empty() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(null_space(&m).ncols(), 0);
        assert_eq!(rank(&m), 2);
    }

    #[test]
    fn independent_rows_skips_duplicates() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
        assert_eq!(independent_rows(&m), vec![0, 2]);
    }
}
