use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A bijection `row -> permutation[row]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Assignment {
    permutation: Vec<usize>,
}

impl Assignment {
    pub fn new(permutation: Vec<usize>) -> Result<Self> {
        let n = permutation.len();
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || seen[p] {
                return Err(Error::validation(format!(
                    "{permutation:?} is not a permutation of 0..{n}"
                )));
            }
            seen[p] = true;
        }
        Ok(Self { permutation })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            permutation: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.permutation
    }

    #[inline]
    pub fn get(&self, row: usize) -> usize {
        self.permutation[row]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &p) in self.permutation.iter().enumerate() {
            inv[p] = i;
        }
        Self { permutation: inv }
    }

    /// `Σ_i cost[i, π(i)]`.
    pub fn value(&self, cost: &Matrix) -> f64 {
        self.permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| cost[(i, j)])
            .sum()
    }
}

impl TryFrom<Vec<usize>> for Assignment {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Assignment> for Vec<usize> {
    fn from(a: Assignment) -> Self {
        a.permutation
    }
}

/// Exact maximum-weight perfect matching on a square matrix (Hungarian
/// algorithm with potentials, O(n³)).
pub fn linear_assignment_max(cost: &Matrix) -> Result<Assignment> {
    if !cost.is_square() {
        return Err(Error::validation(format!(
            "assignment needs a square cost matrix, got {}x{}",
            cost.rows(),
            cost.cols()
        )));
    }
    if cost.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("assignment cost has non-finite entries"));
    }
    let n = cost.rows();
    if n == 0 {
        return Ok(Assignment::identity(0));
    }

    // minimize the negated weights; 1-based bookkeeping, column 0 is a sentinel
    let a = |i: usize, j: usize| -cost[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Assignment::new(perm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_anti_diagonal() {
        let c = Matrix::from_rows(&[vec![0.0, 1.0], vec![10.0, 0.0]]).unwrap();
        let a = linear_assignment_max(&c).unwrap();
        assert_eq!(a.as_slice(), &[1, 0]);
        assert_eq!(a.value(&c), 11.0);
    }

    #[test]
    fn diagonal_dominant_is_identity() {
        let c = Matrix::diag(&[5.0, 5.0, 5.0]);
        let a = linear_assignment_max(&c).unwrap();
        assert!(a.is_identity());
        assert_eq!(a.value(&c), 15.0);
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            linear_assignment_max(&Matrix::zeros(2, 3)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn assignment_validation_and_inverse() {
        assert!(Assignment::new(vec![0, 0]).is_err());
        assert!(Assignment::new(vec![0, 2]).is_err());
        let a = Assignment::new(vec![2, 0, 1]).unwrap();
        let inv = a.inverse();
        for i in 0..3 {
            assert_eq!(inv.get(a.get(i)), i);
        }
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "[2,0,1]");
        assert!(serde_json::from_str::<Assignment>("[1,1]").is_err());
    }
}
