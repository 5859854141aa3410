use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::imageops::resize_bilinear;
use super::{Dataset, Split};
use crate::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/<image>.png`. Classes are numbered in sorted
/// directory-name order. Images are converted to `channels` (1 = grey, 3 =
/// RGB) and bilinearly resized to `image_size` when given, otherwise all
/// images must share the first image's size.
pub fn load_image_folder(
    root: impl AsRef<Path>,
    channels: usize,
    image_size: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    let root = root.as_ref();
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!("unsupported channel count {channels}")));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Validation(format!("{} has no class subdirectories", root.display())));
    }
    let mut images: Vec<Arc<[f64]>> = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<(usize, usize)> = image_size.map(|s| (s, s));
    for (class, dir) in class_dirs.iter().enumerate() {
        for file in sorted_entries(dir)? {
            let is_png = file
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if !is_png {
                continue;
            }
            let img = image::open(&file)
                .map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let pixels: Vec<f64> = if channels == 1 {
                img.to_luma8().into_raw().into_iter().map(|p| p as f64 / 255.0).collect()
            } else {
                let raw = img.to_rgb8().into_raw();
                let n = w * h;
                let mut planar = vec![0.0; 3 * n];
                for p in 0..n {
                    for c in 0..3 {
                        planar[c * n + p] = raw[p * 3 + c] as f64 / 255.0;
                    }
                }
                planar
            };
            let target = *shape.get_or_insert((h, w));
            let pixels = if (h, w) != target {
                if image_size.is_none() {
                    return Err(Error::Shape(format!(
                        "{} is {h}x{w}, expected {}x{}",
                        file.display(),
                        target.0,
                        target.1
                    )));
                }
                resize_bilinear(&pixels, channels, (h, w), target)
            } else {
                pixels
            };
            images.push(Arc::from(pixels));
            labels.push(class);
        }
    }
    let (h, w) = shape.ok_or_else(|| Error::Validation(format!("no PNG images under {}", root.display())))?;
    Dataset::new(images, labels, channels, h, w, split)
}
