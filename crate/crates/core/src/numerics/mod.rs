//! Dense linear algebra and combinatorial building blocks: symmetric
//! eigendecomposition, k-means, linear assignment, column cosine similarity
//! and the seeded generator.
//!
//! Everything here computes in `f64` and is deterministic given its inputs
//! (and, for k-means, the generator state).

mod assignment;
mod eigen;
mod kmeans;
mod matrix;
mod rng;

pub use assignment::{linear_assignment_max, Assignment};
pub use eigen::{sym_eigen, sym_eigen_labeled, SymEigen};
pub use kmeans::{kmeans, KMeans, DEFAULT_MAX_ITERS};
pub use matrix::{dot, norm, Matrix};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Pairwise cosine similarity of the columns of `h`.
///
/// The result is symmetric with an exact unit diagonal and entries clamped
/// to `[-1, 1]`. A zero-norm column yields [`Error::DegenerateColumn`].
pub fn cosine_columns(h: &Matrix) -> Result<Matrix> {
    if h.rows() == 0 {
        return Err(Error::validation("cosine similarity needs at least one row"));
    }
    let z = h.cols();
    let mut gram = Matrix::zeros(z, z);
    for r in 0..h.rows() {
        let row = h.row(r);
        for i in 0..z {
            let hi = row[i];
            if hi == 0.0 {
                continue;
            }
            for j in i..z {
                gram[(i, j)] += hi * row[j];
            }
        }
    }
    let norms: Vec<f64> = (0..z).map(|i| gram[(i, i)].sqrt()).collect();
    if let Some(expert) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateColumn {
            layer: None,
            expert,
        });
    }
    let mut s = Matrix::identity(z);
    for i in 0..z {
        for j in (i + 1)..z {
            let c = (gram[(i, j)] / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            s[(i, j)] = c;
            s[(j, i)] = c;
        }
    }
    Ok(s)
}
