//! Lloyd's k-means with k-means++ seeding.

use std::io::Write;
use std::path::Path;

use log::warn;
use rand::Rng;

use crate::data_io::EmbeddingSet;
use crate::rng::seeded;
use crate::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 300;

/// Cluster membership over a set of dataset indices.
///
/// For a full partition `indices` is `0..N`; after
/// [`truncate_to_balanced`](super::truncate_to_balanced) it holds only the
/// surviving points and clusters are renumbered densely.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub indices: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    /// Squared distance of each point to its centroid, aligned with `indices`.
    pub sq_dists: Vec<f64>,
    /// k x D, row-major.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

impl ClusterAssignment {
    /// Assignment over `0..labels.len()` with given labels and no geometry
    /// (no centroids, zero distances). For externally supplied partitions.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("empty label vector".into()));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        Ok(Self {
            indices: (0..labels.len()).collect(),
            sq_dists: vec![0.0; labels.len()],
            pseudo_labels: labels,
            centroids: Vec::new(),
            dim: 0,
            sizes,
            inertia: 0.0,
            inertia_trace: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Dataset indices of each cluster, ascending.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k()];
        for (&i, &c) in self.indices.iter().zip(&self.pseudo_labels) {
            groups[c].push(i);
        }
        groups
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        if self.centroids.is_empty() {
            return &[];
        }
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// CSV with header `index,pseudo_label`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("index,pseudo_label\n");
        for (i, c) in self.indices.iter().zip(&self.pseudo_labels) {
            out.push_str(&format!("{i},{c}\n"));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len();
    let dim = points[0].len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = points[first].clone();
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a centroid: take an unused index
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.extend_from_slice(&points[next]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[f64], dim: usize) -> (Vec<usize>, Vec<f64>) {
    crate::par::map_slice(points, |p| nearest(p, centroids, dim)).into_iter().unzip()
}

/// Means of each cluster. An empty cluster takes the point farthest from its
/// current centroid among clusters that can spare one, and that point moves.
fn update(points: &[Vec<f64>], labels: &mut [usize], dists: &[f64], k: usize, dim: usize) -> Vec<f64> {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    let mut taken = vec![false; points.len()];
    let mut donors: Vec<usize> = (0..points.len()).collect();
    donors.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let donor = donors
            .iter()
            .copied()
            .find(|&i| !taken[i] && sizes[labels[i]] > 1)
            .expect("k <= N guarantees a donor");
        sizes[labels[donor]] -= 1;
        labels[donor] = c;
        sizes[c] = 1;
        taken[donor] = true;
    }
    let mut centroids = vec![0.0; k * dim];
    for (p, &l) in points.iter().zip(labels.iter()) {
        for (acc, v) in centroids[l * dim..(l + 1) * dim].iter_mut().zip(p) {
            *acc += v;
        }
    }
    for c in 0..k {
        let inv = 1.0 / sizes[c] as f64;
        for v in &mut centroids[c * dim..(c + 1) * dim] {
            *v *= inv;
        }
    }
    centroids
}

/// Partitions the embedding rows into `k` clusters.
///
/// Deterministic given `seed`. Stops when an assignment step changes no
/// label or after `max_iters` assignment steps. The recorded inertia
/// sequence is non-increasing.
pub fn kmeans_partition(embeddings: &EmbeddingSet, k: usize, seed: u64, max_iters: usize) -> Result<ClusterAssignment> {
    let n = embeddings.rows();
    let dim = embeddings.dim();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must be in 1..={n}")));
    }
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be >= 1".into()));
    }
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| embeddings.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    let mut rng = seeded(seed);
    let mut centroids = plus_plus_init(&points, k, &mut rng);

    let (mut labels, mut dists) = assign(&points, &centroids, dim);
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut converged = false;
    for _ in 1..max_iters {
        centroids = update(&points, &mut labels, &dists, k, dim);
        let (new_labels, new_dists) = assign(&points, &centroids, dim);
        trace.push(new_dists.iter().sum());
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        if !changed {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("k-means stopped after {max_iters} iterations without converging");
    }
    // final centroids are the means of the final assignment
    centroids = update(&points, &mut labels, &dists, k, dim);
    let sq_dists: Vec<f64> = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l * dim..(l + 1) * dim]))
        .collect();
    let inertia = sq_dists.iter().sum();
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    Ok(ClusterAssignment {
        indices: (0..n).collect(),
        pseudo_labels: labels,
        sq_dists,
        centroids,
        dim,
        sizes,
        inertia,
        inertia_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn set(rows: &[[f32; 2]]) -> EmbeddingSet {
        EmbeddingSet::new(rows.len(), 2, rows.iter().flatten().copied().collect(), "t").unwrap()
    }

    #[test]
    fn separable_pairs() {
        let e = set(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]);
        let a = kmeans_partition(&e, 2, 0, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(a.pseudo_labels[0], a.pseudo_labels[1]);
        assert_eq!(a.pseudo_labels[2], a.pseudo_labels[3]);
        assert_ne!(a.pseudo_labels[0], a.pseudo_labels[2]);
        assert_eq!(a.sizes, vec![2, 2]);
        assert!((a.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let e = set(&[[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [5.0, 5.0], [1.0, 1.0]]);
        let a = kmeans_partition(&e, 5, 3, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(a.sizes, vec![1; 5]);
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn k_equals_n_with_duplicates() {
        let e = set(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        let a = kmeans_partition(&e, 3, 0, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(a.sizes, vec![1, 1, 1]);
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn k_larger_than_n_is_config_error() {
        let e = set(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(kmeans_partition(&e, 3, 0, 10), Err(Error::Config(_))));
        assert!(matches!(kmeans_partition(&e, 1, 0, 0), Err(Error::Config(_))));
    }

    fn blobs(n: usize, seed: u64) -> EmbeddingSet {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 1.5).unwrap();
        let mut data = Vec::new();
        for i in 0..n {
            let centre = (i % 5) as f32 * 3.0;
            data.push(centre + noise.sample(&mut rng));
            data.push(-centre + noise.sample(&mut rng));
        }
        EmbeddingSet::new(n, 2, data, "blobs").unwrap()
    }

    #[test]
    fn inertia_trace_is_monotone() {
        let e = blobs(200, 1);
        let a = kmeans_partition(&e, 5, 42, DEFAULT_MAX_ITERS).unwrap();
        assert!(a.inertia_trace.len() >= 2);
        for w in a.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "trace increased: {:?}", w);
        }
        assert!(a.inertia <= *a.inertia_trace.last().unwrap() + 1e-9);
        assert_eq!(a.sizes.iter().sum::<usize>(), 200);
    }

    #[test]
    fn final_assignment_is_fixed_point() {
        let e = blobs(150, 2);
        let a = kmeans_partition(&e, 6, 7, DEFAULT_MAX_ITERS).unwrap();
        for i in 0..e.rows() {
            let p: Vec<f64> = e.row(i).iter().map(|&v| v as f64).collect();
            assert_eq!(nearest(&p, &a.centroids, a.dim).0, a.pseudo_labels[i]);
        }
    }

    #[test]
    fn deterministic_and_parallel_invariant() {
        let e = blobs(120, 3);
        let a = kmeans_partition(&e, 4, 9, DEFAULT_MAX_ITERS).unwrap();
        let b = crate::par::sequential(|| kmeans_partition(&e, 4, 9, DEFAULT_MAX_ITERS).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let e = set(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0]]);
        let a = kmeans_partition(&e, 2, 0, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        a.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,pseudo_label");
        assert_eq!(lines.len(), 4);
    }
}
