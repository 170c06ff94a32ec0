use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct KMeans {
    /// Cluster id per input row, each in `0..k`.
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    /// Sum of squared distances after every assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's k-means with k-means++ seeding.
///
/// Every cluster ends non-empty: an empty cluster takes over the point that
/// is farthest from its own centroid (lowest row index on ties). Stops when
/// the labels stop changing or after `max_iters` update steps.
pub fn kmeans(points: &Matrix, k: usize, rng: &mut Rng, max_iters: usize) -> Result<KMeans> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "k-means asked for {k} clusters over {n} points"
        )));
    }
    if max_iters == 0 {
        return Err(Error::validation("k-means needs max_iters >= 1"));
    }

    let mut centroids = seed_plus_plus(points, k, rng);
    let mut labels = assign(points, &centroids);
    repair_empty(points, &mut labels, &mut centroids);
    let mut objective = vec![inertia(points, &labels, &centroids)];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        centroids = means(points, &labels, &centroids);
        let mut next = assign(points, &centroids);
        repair_empty(points, &mut next, &mut centroids);
        objective.push(inertia(points, &next, &centroids));
        if next == labels {
            break;
        }
        labels = next;
    }
    let centroids = means(points, &labels, &centroids);
    Ok(KMeans {
        labels,
        centroids,
        objective,
        iterations,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_plus_plus(points: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                acc += w;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix) -> Vec<usize> {
    (0..points.rows())
        .map(|i| nearest(points.row(i), centroids).0)
        .collect()
}

fn repair_empty(points: &Matrix, labels: &mut [usize], centroids: &mut Matrix) {
    let k = centroids.rows();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let d = sq_dist(points.row(i), centroids.row(l));
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { break };
        sizes[labels[i]] -= 1;
        sizes[empty] += 1;
        labels[i] = empty;
        centroids.row_mut(empty).copy_from_slice(points.row(i));
    }
}

fn means(points: &Matrix, labels: &[usize], previous: &Matrix) -> Matrix {
    let k = previous.rows();
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
        } else {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|v| *v *= inv);
        }
    }
    sums
}

fn inertia(points: &Matrix, labels: &[usize], centroids: &Matrix) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), centroids.row(l)))
        .sum()
}
