use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data_io::imageops::{affine, color_jitter, flip_horizontal, flip_vertical, resize_region};
use crate::data_io::{ImageShape, LabeledExample};
use crate::rng::seeded;
use crate::{Error, Result};

const CROP_FRACTIONS: [f64; 4] = [0.75, 0.80, 0.85, 0.90];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    HFlip,
    VFlip,
    Affine,
    Crop,
    Jitter,
}

const OPS: [Op; 5] = [Op::HFlip, Op::VFlip, Op::Affine, Op::Crop, Op::Jitter];

fn augment_one(img: &[f64], shape: ImageShape, rng: &mut impl Rng) -> Vec<f64> {
    let ImageShape { channels, height: h, width: w } = shape;
    let mut ops: Vec<Op> = OPS.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    if ops.is_empty() {
        ops.push(*OPS.choose(rng).expect("non-empty"));
    }
    let mut out = img.to_vec();
    for op in ops {
        out = match op {
            Op::HFlip => flip_horizontal(&out, channels, h, w),
            Op::VFlip => flip_vertical(&out, channels, h, w),
            Op::Affine => {
                let angle = rng.random_range(-15f64..15.0).to_radians();
                let scale = rng.random_range(0.9..1.1);
                let ty = rng.random_range(-0.1..0.1) * h as f64;
                let tx = rng.random_range(-0.1..0.1) * w as f64;
                affine(&out, channels, h, w, angle, scale, (ty, tx), 0.0)
            }
            Op::Crop => {
                let f = *CROP_FRACTIONS.choose(rng).expect("non-empty");
                let ch = f * h as f64;
                let cw = f * w as f64;
                let top = rng.random_range(0.0..=(h as f64 - ch));
                let left = rng.random_range(0.0..=(w as f64 - cw));
                resize_region(&out, channels, (h, w), (top, left, ch, cw), (h, w))
            }
            Op::Jitter => color_jitter(
                &out,
                channels,
                rng.random_range(0.8..=1.2),
                rng.random_range(0.8..=1.2),
                rng.random_range(0.8..=1.2),
                rng.random_range(-0.02..=0.02),
            ),
        };
    }
    out.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    out
}

/// Brings a cluster to exactly `target` examples.
///
/// Larger clusters are subsampled without replacement. Smaller ones keep all
/// originals first, then receive augmented copies of randomly chosen
/// originals: a random non-empty combination of horizontal flip, vertical
/// flip, affine warp, crop-and-resize and colour jitter. Labels never change.
pub fn augment_to_size(
    cluster: &[LabeledExample],
    target: usize,
    shape: ImageShape,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if target < 1 {
        return Err(Error::Config("augmentation target must be >= 1".into()));
    }
    if cluster.is_empty() {
        return Err(Error::Config("cannot augment an empty cluster".into()));
    }
    let mut rng = seeded(seed);
    if cluster.len() >= target {
        let mut picked = cluster.to_vec();
        picked.shuffle(&mut rng);
        picked.truncate(target);
        return Ok(picked);
    }
    let mut out = cluster.to_vec();
    while out.len() < target {
        let src = &cluster[rng.random_range(0..cluster.len())];
        out.push(LabeledExample {
            x: Arc::from(augment_one(&src.x, shape, &mut rng)),
            y: src.y,
            origin: None,
        });
    }
    Ok(out)
}
