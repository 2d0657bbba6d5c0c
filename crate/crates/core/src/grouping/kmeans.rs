//! Lloyd's k-means with k-means++ seeding and empty-cluster repair.

use crate::error::{BmfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// WCSS after each centroid update.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

pub fn wcss(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(assignment).map(|(p, &c)| sq_dist(p, &centroids[c])).sum()
}

/// k-means++: first centre uniform, the rest proportional to squared
/// distance from the closest chosen centre.
pub fn kmeans_plus_plus<R: rand::Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Moves points into empty clusters: each empty cluster takes the point
/// farthest from its centroid inside the largest cluster.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&c| sizes[c] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let mut far = usize::MAX;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if assignment[i] == largest {
                let d = sq_dist(p, &centroids[largest]);
                if d > far_d {
                    far = i;
                    far_d = d;
                }
            }
        }
        assignment[far] = empty;
        centroids[empty] = points[far].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            centroids[c] = sums[c].iter().map(|s| s / n).collect();
        }
    }
}

/// Clusters `points` into `k` groups. `init` seeds the centroids (e.g. the
/// previous assignment's); otherwise k-means++ draws them from `rng`.
pub fn kmeans_assign<R: rand::Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    init: Option<&[Vec<f64>]>,
    rng: &mut R,
) -> Result<KMeans> {
    if k < 1 {
        return Err(BmfError::Clustering("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(BmfError::Clustering(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if let Some(i) = points.iter().position(|p| p.len() != dim) {
        return Err(BmfError::dims("representation", dim, points[i].len()));
    }
    if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(BmfError::NonFinite {
            what: "representation",
            index: i,
        });
    }
    let mut centroids = match init {
        Some(c) if c.len() == k && c.iter().all(|v| v.len() == dim) => c.to_vec(),
        _ => kmeans_plus_plus(points, k, rng),
    };
    let mut assignment: Vec<usize> = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        repair_empty(points, &mut next, &mut centroids);
        let same = next == assignment;
        assignment = next;
        update_centroids(points, &assignment, &mut centroids);
        history.push(wcss(points, &assignment, &centroids));
        if same {
            converged = true;
            break;
        }
    }
    Ok(KMeans {
        assignment,
        centroids,
        wcss_history: history,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn one_cluster_per_point() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 3.0, (i * i) as f64]).collect();
        let mut rng = stream(1, Stream::Grouping);
        let r = kmeans_assign(&pts, 6, 50, None, &mut rng).unwrap();
        let mut seen = r.assignment.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn identical_points_repaired_deterministically() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let a = kmeans_assign(&pts, 3, 20, None, &mut stream(2, Stream::Grouping)).unwrap();
        let b = kmeans_assign(&pts, 3, 20, None, &mut stream(2, Stream::Grouping)).unwrap();
        assert_eq!(a, b);
        let mut sizes = [0; 3];
        a.assignment.iter().for_each(|&c| sizes[c] += 1);
        assert!(sizes.iter().all(|&s| s >= 1));
        assert!(a.centroids.iter().all(|c| c == &vec![1.0, 1.0]));
        assert_eq!(*a.wcss_history.last().unwrap(), 0.0);
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut rng = stream(3, Stream::Theory);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let blob = i % 2;
            let cx = if blob == 0 { 0.0 } else { 10.0 };
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            pts.push(vec![cx + nx, ny]);
            labels.push(blob);
        }
        let r = kmeans_assign(&pts, 2, 100, None, &mut stream(3, Stream::Grouping)).unwrap();
        let flip = r.assignment[0] != labels[0];
        for (a, l) in r.assignment.iter().zip(&labels) {
            assert_eq!(if flip { 1 - a } else { *a }, *l);
        }
        assert!(r.converged);
    }

    #[test]
    fn errors() {
        let mut rng = stream(0, Stream::Grouping);
        assert!(kmeans_assign(&[vec![0.0]], 0, 5, None, &mut rng).is_err());
        assert!(kmeans_assign(&[vec![0.0]], 2, 5, None, &mut rng).is_err());
        assert!(kmeans_assign(&[vec![0.0], vec![f64::NAN]], 1, 5, None, &mut rng).is_err());
    }

    #[test]
    fn seeded_from_previous_is_stable() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 4) as f64, (i / 4) as f64 * 0.1]).collect();
        let first = kmeans_assign(&pts, 3, 100, None, &mut stream(9, Stream::Grouping)).unwrap();
        let again = kmeans_assign(&pts, 3, 100, Some(&first.centroids), &mut stream(10, Stream::Grouping)).unwrap();
        assert_eq!(first.assignment, again.assignment);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn wcss_non_increasing_and_partition(
            raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4..40),
            k in 1usize..5,
            seed in 0u64..1000,
        ) {
            prop_assume!(raw.len() >= k);
            let r = kmeans_assign(&raw, k, 100, None, &mut stream(seed, Stream::Grouping)).unwrap();
            for w in r.wcss_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
            prop_assert_eq!(r.assignment.len(), raw.len());
            let mut sizes = vec![0usize; k];
            r.assignment.iter().for_each(|&c| sizes[c] += 1);
            prop_assert!(sizes.iter().all(|&s| s >= 1));
            prop_assert_eq!(sizes.iter().sum::<usize>(), raw.len());
        }
    }
}
