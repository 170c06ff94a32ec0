use crate::error::{Error, Result};
use crate::numerics::{cosine_columns, norm, sym_eigen_labeled, Matrix};
use crate::trace::RouterTrace;

/// Expert similarity `S = (1 + cos) / 2` over the router-logit columns of
/// one traced layer. Fails on an all-zero logit column.
pub fn similarity(trace: &RouterTrace, layer: usize) -> Result<Matrix> {
    let h = &trace.layer(layer)?.logits;
    cosine_to_similarity(&cosine_columns(h).map_err(|e| e.with_layer(layer))?)
}

fn cosine_to_similarity(cos: &Matrix) -> Result<Matrix> {
    let n = cos.rows();
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (1.0 + cos[(i, j)]) / 2.0
        }
    }))
}

/// Similarity restricted to experts with a nonzero logit column.
/// Returns the similarity over the `active` experts and the list of
/// degenerate ones.
pub(crate) fn similarity_masked(logits: &Matrix) -> Result<(Matrix, Vec<usize>, Vec<usize>)> {
    let z = logits.cols();
    let (active, degenerate): (Vec<usize>, Vec<usize>) =
        (0..z).partition(|&e| norm(&logits.column(e)) > 0.0);
    if active.is_empty() {
        return Ok((Matrix::zeros(0, 0), active, degenerate));
    }
    let s = cosine_to_similarity(&cosine_columns(&logits.select_columns(&active))?)?;
    Ok((s, active, degenerate))
}

/// Spectral embedding of a similarity matrix.
#[derive(Clone, Debug)]
pub struct SpectralEmbedding {
    /// One row per expert, unit length unless listed in `zero_rows`.
    pub embedding: Matrix,
    /// The `d` smallest Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub zero_rows: Vec<usize>,
}

/// Embeds experts with the `d` smallest eigenvectors of the symmetric
/// normalized Laplacian of `s`, rows scaled to unit length.
pub fn spectral_embed(s: &Matrix, d: usize) -> Result<SpectralEmbedding> {
    let n = s.rows();
    if !s.is_square() || n == 0 {
        return Err(Error::validation(format!(
            "similarity must be a non-empty square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if d == 0 || d > n {
        return Err(Error::validation(format!(
            "embedding dimension {d} must be in 1..={n}"
        )));
    }
    let degree: Vec<f64> = (0..n).map(|i| s.row(i).iter().sum()).collect();
    if let Some(i) = degree.iter().position(|&g| g.is_nan() || g <= 0.0) {
        return Err(Error::validation(format!(
            "similarity row {i} has non-positive degree"
        )));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|g| 1.0 / g.sqrt()).collect();
    let laplacian = Matrix::from_fn(n, n, |i, j| {
        let a = s[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - a
        } else {
            -a
        }
    });
    let eig = sym_eigen_labeled(&laplacian, d, "normalized Laplacian")?;
    let mut embedding = eig.vectors;
    let mut zero_rows = Vec::new();
    for i in 0..n {
        let row = embedding.row_mut(i);
        let len = norm(row);
        if len > 0.0 {
            row.iter_mut().for_each(|v| *v /= len);
        } else {
            zero_rows.push(i);
        }
    }
    Ok(SpectralEmbedding {
        embedding,
        eigenvalues: eig.values,
        zero_rows,
    })
}
