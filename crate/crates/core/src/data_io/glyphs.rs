//! Procedural stand-in for a handwritten-character corpus: every class is a
//! random set of curved strokes, every sample a jittered rendering of it.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::rng::{derive, seeded};
use crate::{Error, Result};

const PIXEL_NOISE: f64 = 0.05;
const SEGMENTS_PER_STROKE: usize = 8;

type Segment = ([f64; 2], [f64; 2]);

fn class_strokes(seed: u64, class: usize) -> Vec<Segment> {
    let mut rng = seeded(derive(seed, class as u64));
    let n_strokes = rng.random_range(2..=4);
    let mut segs = Vec::with_capacity(n_strokes * SEGMENTS_PER_STROKE);
    for _ in 0..n_strokes {
        let mut pt = || [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)];
        let (p0, p1, p2) = (pt(), pt(), pt());
        let bez = |t: f64| {
            let a = (1.0 - t) * (1.0 - t);
            let b = 2.0 * (1.0 - t) * t;
            let c = t * t;
            [
                a * p0[0] + b * p1[0] + c * p2[0],
                a * p0[1] + b * p1[1] + c * p2[1],
            ]
        };
        for s in 0..SEGMENTS_PER_STROKE {
            let t0 = s as f64 / SEGMENTS_PER_STROKE as f64;
            let t1 = (s + 1) as f64 / SEGMENTS_PER_STROKE as f64;
            segs.push((bez(t0), bez(t1)));
        }
    }
    segs
}

fn dist_to_segment(p: [f64; 2], (a, b): &Segment) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn render(segs: &[Segment], size: usize, rng: &mut impl Rng) -> Vec<f64> {
    let s = size as f64;
    let angle: f64 = rng.random_range(-0.2..0.2);
    let scale: f64 = rng.random_range(0.9..1.1);
    let shift = 1.5 * s / 28.0;
    let ty: f64 = rng.random_range(-shift..shift);
    let tx: f64 = rng.random_range(-shift..shift);
    let half_width = 0.04 * s * rng.random_range(0.85..1.15);
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("valid sigma");
    let (sin, cos) = angle.sin_cos();
    let c = (s - 1.0) / 2.0;

    let mut img = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let dy = i as f64 - c - ty;
            let dx = j as f64 - c - tx;
            let gy = ((cos * dy - sin * dx) / scale + c) / s;
            let gx = ((sin * dy + cos * dx) / scale + c) / s;
            let d = segs
                .iter()
                .map(|seg| dist_to_segment([gy, gx], seg))
                .fold(f64::INFINITY, f64::min)
                * s;
            let ink = (half_width + 0.5 - d).clamp(0.0, 1.0);
            img.push((ink + noise.sample(rng)).clamp(0.0, 1.0));
        }
    }
    img
}

/// Renders `num_classes * samples_per_class` single-channel glyph images,
/// class-major. A pure function of its arguments.
pub fn generate_synthetic_glyphs(
    num_classes: usize,
    samples_per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<Dataset> {
    if image_size < 8 {
        return Err(Error::Config(format!("image_size {image_size} < 8")));
    }
    if num_classes < 2 || samples_per_class < 2 {
        return Err(Error::Config(format!(
            "need >= 2 classes and >= 2 samples per class, got {num_classes} x {samples_per_class}"
        )));
    }
    let per_class: Vec<Vec<Vec<f64>>> = crate::par::map_range(num_classes, |class| {
        let segs = class_strokes(seed, class);
        (0..samples_per_class)
            .map(|s| {
                let stream = (1u64 << 40) + (class * samples_per_class + s) as u64;
                let mut rng = seeded(derive(seed, stream));
                render(&segs, image_size, &mut rng)
            })
            .collect()
    });
    let mut images: Vec<Arc<[f64]>> = Vec::with_capacity(num_classes * samples_per_class);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for (class, imgs) in per_class.into_iter().enumerate() {
        for img in imgs {
            images.push(Arc::from(img));
            labels.push(class);
        }
    }
    Dataset::new(images, labels, 1, image_size, image_size, Split::MetaTrain)
}
