use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// The `k` smallest eigenpairs of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

/// Smallest `k` eigenpairs of the symmetric matrix `a` via cyclic Jacobi.
pub fn sym_eigen(a: &Matrix, k: usize) -> Result<SymEigen> {
    sym_eigen_labeled(a, k, &format!("{}x{} symmetric matrix", a.rows(), a.cols()))
}

/// As [`sym_eigen`], naming the matrix in convergence errors.
pub fn sym_eigen_labeled(a: &Matrix, k: usize, label: &str) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::validation(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::validation(format!("{label} is not symmetric")));
    }
    let n = a.rows();
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "requested {k} eigenpairs from a {n}x{n} matrix"
        )));
    }

    let (values, vectors) = jacobi(a, label)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let order = &order[..k];
    Ok(SymEigen {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: vectors.select_columns(order),
    })
}

/// Full cyclic Jacobi sweep to machine precision. Returns unsorted
/// eigenvalues and the accumulated rotation matrix.
fn jacobi(input: &Matrix, label: &str) -> Result<(Vec<f64>, Matrix)> {
    let n = input.rows();
    // symmetrize exactly so rotations act on a truly symmetric matrix
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (input[(i, j)] + input[(j, i)]));
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    if scale == 0.0 || n == 1 {
        return Ok(((0..n).map(|i| a[(i, i)]).collect(), v));
    }
    let target = 1e-15 * scale;

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            return Ok(((0..n).map(|i| a[(i, i)]).collect(), v));
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    if off_diagonal_norm(&a) <= target * 10.0 {
        return Ok(((0..n).map(|i| a[(i, i)]).collect(), v));
    }
    Err(Error::Convergence {
        matrix: label.to_string(),
        sweeps: MAX_SWEEPS,
    })
}

fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    // columns p, q
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    // rows p, q
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eigen(&Matrix::identity(3), 3).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let vtv = e.vectors.transpose().matmul(&e.vectors).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn diagonal_returns_axis_vectors() {
        let e = sym_eigen(&Matrix::diag(&[3.0, 1.0, 2.0]), 2).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0]);
        assert_eq!(e.vectors.column(0).iter().map(|v| v.abs()).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert_eq!(e.vectors.column(1).iter().map(|v| v.abs()).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigen(&a, 2).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(sym_eigen(&rect, 1), Err(Error::Validation(_))));
        let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&asym, 1), Err(Error::Validation(_))));
        assert!(sym_eigen(&Matrix::identity(2), 0).is_err());
        assert!(sym_eigen(&Matrix::identity(2), 3).is_err());
    }
}
