use crate::error::{Error, Result};
use crate::model::ExpertWeights;
use crate::numerics::{dot, linear_assignment_max, Assignment, Matrix};

/// Score matrix between hidden units: `C[a][b]` is the inner product of
/// unit `a` of `reference` with unit `b` of `other`, summed over the input
/// and output projections.
pub fn alignment_cost(reference: &ExpertWeights, other: &ExpertWeights) -> Result<Matrix> {
    let (d, f) = (reference.d_model(), reference.d_ff());
    other.check_dims(d, f).map_err(|_| {
        Error::validation(format!(
            "cannot align experts of shape {}x{} and {}x{}",
            d,
            f,
            other.d_model(),
            other.d_ff()
        ))
    })?;
    let ref_out = reference.w_out.transpose();
    let other_out = other.w_out.transpose();
    Ok(Matrix::from_fn(f, f, |a, b| {
        dot(reference.w_in.row(a), other.w_in.row(b)) + dot(ref_out.row(a), other_out.row(b))
    }))
}

/// Permutes the hidden units of `other` to best match `reference`.
/// Returns the permutation (aligned unit `a` is original unit `perm[a]`)
/// and the permuted expert.
pub fn align_experts(
    reference: &ExpertWeights,
    other: &ExpertWeights,
) -> Result<(Assignment, ExpertWeights)> {
    let cost = alignment_cost(reference, other)?;
    let perm = linear_assignment_max(&cost)?;
    let aligned = other.permute_hidden(&perm)?;
    Ok((perm, aligned))
}

/// Normalized inner product of two experts' flattened weights, used to
/// place experts that never received a routing signal.
pub(crate) fn weight_similarity(a: &ExpertWeights, b: &ExpertWeights) -> f64 {
    let num = dot(a.w_in.as_slice(), b.w_in.as_slice()) + dot(a.w_out.as_slice(), b.w_out.as_slice());
    let na = dot(a.w_in.as_slice(), a.w_in.as_slice()) + dot(a.w_out.as_slice(), a.w_out.as_slice());
    let nb = dot(b.w_in.as_slice(), b.w_in.as_slice()) + dot(b.w_out.as_slice(), b.w_out.as_slice());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        num / (na * nb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_expert;
    use crate::numerics::Rng;

    #[test]
    fn recovers_a_planted_permutation() {
        let mut rng = Rng::new(3);
        let base = random_expert(8, 16, &mut rng);
        let hidden = Assignment::new(rng.permutation(16)).unwrap();
        let shuffled = base.permute_hidden(&hidden).unwrap();
        let (perm, aligned) = align_experts(&base, &shuffled).unwrap();
        assert_eq!(aligned, base);
        assert_eq!(perm, hidden.inverse());
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = Rng::new(4);
        let e = random_expert(4, 8, &mut rng);
        let (perm, _) = align_experts(&e, &e).unwrap();
        assert!(perm.is_identity());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = ExpertWeights::zeros(4, 8);
        let b = ExpertWeights::zeros(4, 6);
        assert!(align_experts(&a, &b).is_err());
    }
}
