//! Dense rank-revealing helpers on top of nalgebra's SVD.
//!
//! Singular values at or below `tol * max(1, sigma_max)` are treated as zero.

use nalgebra::{DMatrix, DVector};

pub const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: DVector<f64>,
    /// Euclidean norm of `A x - b`.
    pub residual: f64,
    pub rank: usize,
}

fn threshold(sv: &DVector<f64>, tol: f64) -> f64 {
    tol * sv.iter().fold(1.0_f64, |m, s| m.max(*s))
}

/// Minimum-norm least-squares solution of `A x = b`.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> LeastSquares {
    assert_eq!(a.nrows(), b.len(), "row count mismatch");
    if a.nrows() == 0 || a.ncols() == 0 {
        return LeastSquares {
            x: DVector::zeros(a.ncols()),
            residual: b.norm(),
            rank: 0,
        };
    }
    let svd = a.clone().svd(true, true);
    let thr = threshold(&svd.singular_values, tol);
    let rank = svd.singular_values.iter().filter(|s| **s > thr).count();
    let x = svd.solve(b, thr).expect("SVD computed with both factors");
    let residual = (a * &x - b).norm();
    LeastSquares { x, residual, rank }
}

pub fn rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let thr = threshold(&sv, tol);
    sv.iter().filter(|s| **s > thr).count()
}

/// Orthonormal basis of `{x : A x = 0}` as the columns of the result.
pub fn nullspace(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Thin SVD of a wide matrix drops part of V; zero rows restore it.
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("V requested");
    let thr = threshold(&svd.singular_values, tol);
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= thr)
        .map(|(j, _)| v_t.row(j).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of `{y : yᵀ A = 0}`.
pub fn left_nullspace(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    nullspace(&a.transpose(), tol)
}

pub fn det(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().lu().determinant()
}

pub fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_norm_of_single_equation() {
        // x1 + x2 = -2 has minimum-norm solution (-1, -1)
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-2.0]);
        let ls = min_norm_solve(&a, &b, PIVOT_TOL);
        assert!((ls.x - DVector::from_vec(vec![-1.0, 0.0, -1.0])).norm() < 1e-14);
        assert!(ls.residual < 1e-14);
        assert_eq!(ls.rank, 1);
    }

    #[test]
    fn inconsistent_system_reports_residual() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![0.0, 2.0]);
        let ls = min_norm_solve(&a, &b, PIVOT_TOL);
        assert!((ls.x[0] - 1.0).abs() < 1e-14);
        assert!((ls.residual - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn nullspace_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let ns = nullspace(&a, PIVOT_TOL);
        assert_eq!(ns.ncols(), 2);
        assert!((&a * &ns).norm() < 1e-14);
        assert!((ns.transpose() * &ns - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert_eq!(nullspace(&DMatrix::identity(3, 3), PIVOT_TOL).ncols(), 0);
    }

    #[test]
    fn rank_and_det() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&a, PIVOT_TOL), 1);
        assert!(det(&a).abs() < 1e-15);
        assert_eq!(rank(&DMatrix::zeros(3, 2), PIVOT_TOL), 0);
        let ln = left_nullspace(&a, PIVOT_TOL);
        assert_eq!(ln.ncols(), 1);
        assert!((ln.transpose() * &a).norm() < 1e-14);
    }
}
