use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Assignment;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Uncurl,
    FreqPrune,
    FreqMerge,
    GlobalMerge,
    /// Layer left untouched (e.g. a skipped first MoE layer).
    Identity,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uncurl" => Ok(Method::Uncurl),
            "freq-prune" => Ok(Method::FreqPrune),
            "freq-merge" => Ok(Method::FreqMerge),
            "global-merge" => Ok(Method::GlobalMerge),
            "identity" => Ok(Method::Identity),
            other => Err(Error::validation(format!("unknown reduction method {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Uncurl => "uncurl",
            Method::FreqPrune => "freq-prune",
            Method::FreqMerge => "freq-merge",
            Method::GlobalMerge => "global-merge",
            Method::Identity => "identity",
        }
    }
}

/// What happens to the router of a reduced layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouterDisposition {
    /// Fresh Gaussian(0, 0.02) router with one column per cluster.
    Reinitialize,
    /// Keep the router columns of each cluster's reference expert.
    KeepColumns,
}

/// How one MoE layer is reduced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: usize,
    pub method: Method,
    pub n_clusters: usize,
    /// Cluster of every original expert; `None` for discarded experts.
    pub labels: Vec<Option<usize>>,
    /// Reference expert of every cluster.
    pub references: Vec<usize>,
    /// Hidden-unit permutation aligning each expert to its reference
    /// (identity for references, `None` for discarded experts).
    pub permutations: Vec<Option<Assignment>>,
    /// Averaging weight of every expert; sums to one within each cluster.
    pub weights: Vec<f64>,
    pub router: RouterDisposition,
}

/// One cluster under construction: its reference, members (reference
/// included) and their weights and permutations.
pub(crate) struct Cluster {
    pub reference: usize,
    pub members: Vec<usize>,
    pub weights: Vec<f64>,
    pub permutations: Vec<Assignment>,
}

impl LayerPlan {
    pub fn n_experts(&self) -> usize {
        self.labels.len()
    }

    /// Members of cluster `c` in expert order.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.n_experts())
            .filter(|&e| self.labels[e] == Some(c))
            .collect()
    }

    /// Dense labels with discarded experts mapped to `None` removed.
    pub fn cluster_labels(&self) -> Vec<usize> {
        self.labels.iter().flatten().copied().collect()
    }

    /// Assembles a plan from clusters, ordering clusters by their smallest
    /// member so the result does not depend on how clusters were found.
    pub(crate) fn from_clusters(
        layer: usize,
        method: Method,
        n_experts: usize,
        mut clusters: Vec<Cluster>,
        router: RouterDisposition,
    ) -> Self {
        clusters.sort_by_key(|c| c.members.iter().copied().min());
        let mut labels = vec![None; n_experts];
        let mut permutations = vec![None; n_experts];
        let mut weights = vec![0.0; n_experts];
        let mut references = Vec::with_capacity(clusters.len());
        for (c, cluster) in clusters.into_iter().enumerate() {
            references.push(cluster.reference);
            for ((e, w), p) in cluster
                .members
                .into_iter()
                .zip(cluster.weights)
                .zip(cluster.permutations)
            {
                labels[e] = Some(c);
                weights[e] = w;
                permutations[e] = Some(p);
            }
        }
        LayerPlan {
            layer,
            method,
            n_clusters: references.len(),
            labels,
            references,
            permutations,
            weights,
            router,
        }
    }

    /// Keeps every expert as its own cluster.
    pub fn identity(layer: usize, n_experts: usize, d_ff: usize) -> Self {
        LayerPlan {
            layer,
            method: Method::Identity,
            n_clusters: n_experts,
            labels: (0..n_experts).map(Some).collect(),
            references: (0..n_experts).collect(),
            permutations: vec![Some(Assignment::identity(d_ff)); n_experts],
            weights: vec![1.0; n_experts],
            router: RouterDisposition::KeepColumns,
        }
    }

    pub fn validate(&self, n_experts: usize, d_ff: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("plan for layer {}: {m}", self.layer)));
        if self.labels.len() != n_experts
            || self.permutations.len() != n_experts
            || self.weights.len() != n_experts
        {
            return bad(format!("expects {} experts, layer has {n_experts}", self.labels.len()));
        }
        if self.references.len() != self.n_clusters || self.n_clusters == 0 {
            return bad("reference count does not match cluster count".into());
        }
        for c in 0..self.n_clusters {
            let members = self.members(c);
            if members.is_empty() {
                return bad(format!("cluster {c} is empty"));
            }
            let r = self.references[c];
            if self.labels.get(r).copied().flatten() != Some(c) {
                return bad(format!("reference {r} is not in cluster {c}"));
            }
            if !self.permutations[r].as_ref().is_some_and(Assignment::is_identity) {
                return bad(format!("reference {r} must have the identity permutation"));
            }
            let sum: f64 = members.iter().map(|&e| self.weights[e]).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("weights of cluster {c} sum to {sum}"));
            }
        }
        for e in 0..n_experts {
            match (self.labels[e], &self.permutations[e]) {
                (Some(c), Some(p)) => {
                    if c >= self.n_clusters {
                        return bad(format!("expert {e} has label {c} out of range"));
                    }
                    if p.len() != d_ff {
                        return bad(format!("expert {e} permutation has length {}", p.len()));
                    }
                }
                (None, None) => {}
                _ => return bad(format!("expert {e} label and permutation disagree")),
            }
            if self.weights[e].is_nan() || self.weights[e] < 0.0 {
                return bad(format!("expert {e} has negative weight"));
            }
        }
        Ok(())
    }
}

/// A full reduction recipe, replayable through [`super::apply_plan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergePlan {
    pub method: Method,
    pub target: usize,
    pub layers: Vec<LayerPlan>,
}

impl MergePlan {
    pub fn layer(&self, layer: usize) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.layer == layer)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Merge weights proportional to selection counts; zero-count clusters get
/// uniform weights over their eligible members. Ineligible members always
/// get weight zero.
pub(crate) fn frequency_weights(counts: &[u64], members: &[usize], eligible: &[bool]) -> Vec<f64> {
    let total: u64 = members
        .iter()
        .filter(|&&e| eligible[e])
        .map(|&e| counts[e])
        .sum();
    if total > 0 {
        return members
            .iter()
            .map(|&e| if eligible[e] { counts[e] as f64 / total as f64 } else { 0.0 })
            .collect();
    }
    let n = members.iter().filter(|&&e| eligible[e]).count();
    if n == 0 {
        return vec![1.0 / members.len() as f64; members.len()];
    }
    members
        .iter()
        .map(|&e| if eligible[e] { 1.0 / n as f64 } else { 0.0 })
        .collect()
}

/// Index with the largest count among `candidates`, lowest index on ties.
pub(crate) fn most_frequent(counts: &[u64], candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for e in candidates {
        if best.is_none_or(|b| counts[e] > counts[b] || (counts[e] == counts[b] && e < b)) {
            best = Some(e);
        }
    }
    best
}

/// Expert indices ordered by count descending, index ascending.
pub(crate) fn rank_by_count(counts: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len() as f64;
    let comb2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&v| comb2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| comb2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| comb2(v)).sum();
    let expected = sum_a * sum_b / comb2(n);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_is_label_permutation_invariant() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[2, 0, 1]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
        // sklearn: adjusted_rand_score([0,0,1,2],[0,0,1,1]) = 0.5714285714
        let v = adjusted_rand_index(&[0, 0, 1, 2], &[0, 0, 1, 1]);
        assert!((v - 0.571_428_571_428_571_4).abs() < 1e-12);
    }

    #[test]
    fn ranking_ties_prefer_low_index() {
        assert_eq!(rank_by_count(&[5, 4, 3, 2, 1, 0, 0, 0])[..4], [0, 1, 2, 3]);
        assert_eq!(rank_by_count(&[2, 2, 2])[..2], [0, 1]);
        assert_eq!(most_frequent(&[1, 3, 3], [2, 1, 0]), Some(1));
    }

    #[test]
    fn weights_fall_back_to_uniform() {
        let w = frequency_weights(&[0, 0, 0], &[0, 2], &[true, true, true]);
        assert_eq!(w, vec![0.5, 0.5]);
        let w = frequency_weights(&[3, 0, 1], &[0, 2], &[true, true, true]);
        assert_eq!(w, vec![0.75, 0.25]);
        let w = frequency_weights(&[0, 0, 0], &[0, 1], &[true, false, true]);
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn identity_plan_validates_and_serializes() {
        let p = LayerPlan::identity(2, 4, 8);
        p.validate(4, 8).unwrap();
        let plan = MergePlan {
            method: Method::Identity,
            target: 4,
            layers: vec![p],
        };
        let back: MergePlan = serde_json::from_str(&plan.to_json()).unwrap();
        assert_eq!(back, plan);
        assert!(plan.to_json().contains("\"keep-columns\""));
    }
}
