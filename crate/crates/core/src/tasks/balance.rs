use std::io::Write;
use std::path::Path;

use log::warn;

use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-cluster loss weights derived from cluster sizes: small clusters get
/// weight 1, the largest gets 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancingVector {
    /// Raw weights before min-max normalisation.
    pub gamma: Vec<f64>,
    pub gamma_norm: Vec<f64>,
    pub epsilon: f64,
    pub c_max: usize,
    pub c_min: usize,
}

impl BalancingVector {
    pub fn weight(&self, cluster_id: usize) -> Result<f64> {
        self.gamma_norm
            .get(cluster_id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("no balancing weight for cluster {cluster_id}")))
    }

    /// CSV with header `cluster_id,gamma_norm`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("cluster_id,gamma_norm\n");
        for (c, g) in self.gamma_norm.iter().enumerate() {
            out.push_str(&format!("{c},{g}\n"));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// `gamma_c = (C_max - C_min) / (C_c - C_min + eps)`, min-max normalised.
/// When every cluster has the same size the normalisation is undefined and
/// all weights are 1.
pub fn compute_balancing_vector(sizes: &[usize], epsilon: f64) -> Result<BalancingVector> {
    if sizes.is_empty() {
        return Err(Error::Validation("no clusters to balance".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Validation(format!("epsilon must be > 0, got {epsilon}")));
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Validation(format!("cluster {c} has size 0")));
    }
    let c_max = *sizes.iter().max().expect("non-empty");
    let c_min = *sizes.iter().min().expect("non-empty");
    let gamma: Vec<f64> = sizes
        .iter()
        .map(|&s| (c_max - c_min) as f64 / ((s - c_min) as f64 + epsilon))
        .collect();
    let g_max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let g_min = gamma.iter().copied().fold(f64::INFINITY, f64::min);
    let gamma_norm: Vec<f64> = if g_max == g_min {
        vec![1.0; sizes.len()]
    } else {
        gamma.iter().map(|g| (g - g_min) / (g_max - g_min)).collect()
    };
    let silenced = gamma_norm.iter().filter(|&&w| w == 0.0).count();
    if silenced > 0 {
        warn!("loss balancing assigns weight 0 to {silenced} cluster(s) of size {c_max}; their tasks contribute no outer gradient");
    }
    Ok(BalancingVector {
        gamma,
        gamma_norm,
        epsilon,
        c_max,
        c_min,
    })
}

pub fn apply_loss_balancing(loss: f64, balancing: &BalancingVector, cluster_id: usize) -> Result<f64> {
    Ok(balancing.weight(cluster_id)? * loss)
}

/// Linear map of `cluster_size` from `[min_size, max_size]` onto
/// `[min_n, max_n]`, rounded to the nearest integer. A degenerate size range
/// returns `min_n`.
pub fn proportional_sample_size(
    cluster_size: usize,
    min_n: usize,
    max_n: usize,
    min_size: usize,
    max_size: usize,
) -> Result<usize> {
    if min_n > max_n {
        return Err(Error::Config(format!("min_n {min_n} > max_n {max_n}")));
    }
    if !(min_size..=max_size).contains(&cluster_size) {
        return Err(Error::Config(format!(
            "cluster size {cluster_size} outside [{min_size}, {max_size}]"
        )));
    }
    if min_size == max_size {
        return Ok(min_n);
    }
    let t = (cluster_size - min_size) as f64 / (max_size - min_size) as f64;
    Ok((min_n as f64 + t * (max_n - min_n) as f64).round() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_cluster_reference_values() {
        // hand evaluation: gamma = 20/(0+e), 20/(10+e), 20/(20+e)
        let b = compute_balancing_vector(&[10, 20, 30], 1e-8).unwrap();
        let e = 1e-8;
        let g = [20.0 / e, 20.0 / (10.0 + e), 20.0 / (20.0 + e)];
        for (x, y) in b.gamma.iter().zip(g) {
            assert!((x - y).abs() <= 1e-12 * y.abs());
        }
        let expect = [1.0, (g[1] - g[2]) / (g[0] - g[2]), 0.0];
        for (x, y) in b.gamma_norm.iter().zip(expect) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((b.gamma_norm[1] - 5e-10).abs() < 1e-12);
        assert_eq!((b.c_min, b.c_max), (10, 30));
    }

    #[test]
    fn two_clusters_extremes() {
        let b = compute_balancing_vector(&[5, 15], 1e-8).unwrap();
        assert_eq!(b.gamma_norm, vec![1.0, 0.0]);
    }

    #[test]
    fn equal_sizes_give_ones() {
        let b = compute_balancing_vector(&[7, 7, 7], 1e-8).unwrap();
        assert_eq!(b.gamma_norm, vec![1.0; 3]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(compute_balancing_vector(&[3, 0], 1e-8), Err(Error::Validation(_))));
        assert!(matches!(compute_balancing_vector(&[], 1e-8), Err(Error::Validation(_))));
        assert!(matches!(compute_balancing_vector(&[3], 0.0), Err(Error::Validation(_))));
    }

    #[test]
    fn loss_scaling() {
        let b = BalancingVector {
            gamma: vec![],
            gamma_norm: vec![1.0, 0.0, 0.5],
            epsilon: 1e-8,
            c_max: 0,
            c_min: 0,
        };
        assert_eq!(apply_loss_balancing(3.0, &b, 0).unwrap(), 3.0);
        assert_eq!(apply_loss_balancing(3.0, &b, 1).unwrap(), 0.0);
        assert_eq!(apply_loss_balancing(2.0, &b, 2).unwrap(), 1.0);
        assert!(apply_loss_balancing(2.0, &b, 3).is_err());
    }

    #[test]
    fn proportional_sizes() {
        assert_eq!(proportional_sample_size(600, 10, 30, 10, 600).unwrap(), 30);
        assert_eq!(proportional_sample_size(10, 10, 30, 10, 600).unwrap(), 10);
        assert_eq!(proportional_sample_size(305, 10, 30, 10, 600).unwrap(), 20);
        assert_eq!(proportional_sample_size(5, 10, 30, 5, 5).unwrap(), 10);
        assert!(proportional_sample_size(700, 10, 30, 10, 600).is_err());
    }

    #[test]
    fn csv_layout() {
        let b = compute_balancing_vector(&[5, 15], 1e-8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        b.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "cluster_id,gamma_norm\n0,1\n1,0\n");
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval_and_order_invariant(
            sizes in proptest::collection::vec(1usize..500, 1..20),
            rot in 0usize..20,
        ) {
            let b = compute_balancing_vector(&sizes, DEFAULT_EPSILON).unwrap();
            prop_assert!(b.gamma_norm.iter().all(|w| (0.0..=1.0).contains(w)));
            let r = rot % sizes.len();
            let mut rotated = sizes.clone();
            rotated.rotate_left(r);
            let br = compute_balancing_vector(&rotated, DEFAULT_EPSILON).unwrap();
            let mut expect = b.gamma_norm.clone();
            expect.rotate_left(r);
            prop_assert_eq!(br.gamma_norm, expect);
        }
    }
}
