use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, EmbeddingSet};
use crate::rng::seeded;
use crate::{Error, Result};

/// Label-free embedding baseline: a fixed Gaussian random projection of the
/// flattened pixels followed by per-dimension standardisation (zero mean,
/// unit population variance; constant columns map to zero).
///
/// Only `dataset.images()` is read.
pub fn embed_dataset_baseline(dataset: &Dataset, dim: usize, seed: u64) -> Result<EmbeddingSet> {
    if dim < 2 {
        return Err(Error::Config(format!("embedding dim {dim} < 2")));
    }
    project_images(dataset.images(), dataset.image_len(), dim, seed)
}

fn project_images(images: &[std::sync::Arc<[f64]>], pixels: usize, dim: usize, seed: u64) -> Result<EmbeddingSet> {
    let mut rng = seeded(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    // pixels x dim, row-major
    let proj: Vec<f64> = (0..pixels * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();

    let rows: Vec<Vec<f64>> = crate::par::map_slice(images, |img| {
        let mut out = vec![0.0; dim];
        for (p, &v) in img.iter().enumerate() {
            if v != 0.0 {
                let row = &proj[p * dim..(p + 1) * dim];
                for (o, r) in out.iter_mut().zip(row) {
                    *o += v * r;
                }
            }
        }
        out
    });

    let n = rows.len() as f64;
    let mut data = vec![0f32; rows.len() * dim];
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for (i, r) in rows.iter().enumerate() {
            data[i * dim + j] = if sd > 0.0 { ((r[j] - mean) / sd) as f32 } else { 0.0 };
        }
    }
    EmbeddingSet::new(rows.len(), dim, data, format!("random-projection(dim={dim},seed={seed})"))
}
