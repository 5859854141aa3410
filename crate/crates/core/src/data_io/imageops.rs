//! Small channels-first image transforms shared by augmentation and
//! out-of-distribution input adaptation.

/// Bilinear sample of channel `c` at continuous pixel-centre coordinates;
/// out-of-bounds reads clamp to the border.
fn sample(img: &[f64], h: usize, w: usize, c: usize, y: f64, x: f64) -> f64 {
    let plane = &img[c * h * w..(c + 1) * h * w];
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = yc - y0 as f64;
    let fx = xc - x0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear resize of the window `[top, top+ch) x [left, left+cw)` to `oh x ow`.
pub fn resize_region(
    img: &[f64],
    channels: usize,
    (h, w): (usize, usize),
    (top, left, ch, cw): (f64, f64, f64, f64),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; channels * oh * ow];
    let sy = ch / oh as f64;
    let sx = cw / ow as f64;
    for c in 0..channels {
        for i in 0..oh {
            let y = top + (i as f64 + 0.5) * sy - 0.5;
            for j in 0..ow {
                let x = left + (j as f64 + 0.5) * sx - 0.5;
                out[(c * oh + i) * ow + j] = sample(img, h, w, c, y, x);
            }
        }
    }
    out
}

pub fn resize_bilinear(img: &[f64], channels: usize, from: (usize, usize), to: (usize, usize)) -> Vec<f64> {
    if from == to {
        return img.to_vec();
    }
    resize_region(img, channels, from, (0.0, 0.0, from.0 as f64, from.1 as f64), to)
}

/// Averages channels into one grey plane.
pub fn to_gray(img: &[f64], channels: usize) -> Vec<f64> {
    let n = img.len() / channels;
    (0..n)
        .map(|p| (0..channels).map(|c| img[c * n + p]).sum::<f64>() / channels as f64)
        .collect()
}

/// Replicates a single plane `channels` times.
pub fn replicate_gray(img: &[f64], channels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.len() * channels);
    for _ in 0..channels {
        out.extend_from_slice(img);
    }
    out
}

pub fn flip_horizontal(img: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for i in 0..h {
            for j in 0..w {
                out[(c * h + i) * w + j] = img[(c * h + i) * w + (w - 1 - j)];
            }
        }
    }
    out
}

pub fn flip_vertical(img: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for i in 0..h {
            let src = (c * h + (h - 1 - i)) * w;
            out[(c * h + i) * w..(c * h + i + 1) * w].copy_from_slice(&img[src..src + w]);
        }
    }
    out
}

/// Rotation by `angle` radians and isotropic `scale` about the image centre,
/// followed by a translation in pixels. Uncovered pixels are filled with `fill`.
pub fn affine(
    img: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    angle: f64,
    scale: f64,
    (ty, tx): (f64, f64),
    fill: f64,
) -> Vec<f64> {
    let (sin, cos) = angle.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![fill; img.len()];
    for i in 0..h {
        for j in 0..w {
            // inverse map: output pixel -> source pixel
            let dy = i as f64 - cy - ty;
            let dx = j as f64 - cx - tx;
            let sy = (cos * dy - sin * dx) / scale + cy;
            let sx = (sin * dy + cos * dx) / scale + cx;
            if sy < -0.5 || sx < -0.5 || sy > h as f64 - 0.5 || sx > w as f64 - 0.5 {
                continue;
            }
            for c in 0..channels {
                out[(c * h + i) * w + j] = sample(img, h, w, c, sy, sx);
            }
        }
    }
    out
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Colour jitter with torchvision semantics: brightness and contrast blend
/// towards black and the mean grey level, saturation towards the per-pixel
/// grey value, hue rotates in HSV space. Saturation and hue only act on
/// three-channel images. Output is clamped to `[0, 1]`.
pub fn color_jitter(
    img: &[f64],
    channels: usize,
    brightness: f64,
    contrast: f64,
    saturation: f64,
    hue: f64,
) -> Vec<f64> {
    let mut out: Vec<f64> = img.iter().map(|p| (p * brightness).clamp(0.0, 1.0)).collect();
    let gray = to_gray(&out, channels);
    let mean = gray.iter().sum::<f64>() / gray.len() as f64;
    for p in out.iter_mut() {
        *p = (mean + contrast * (*p - mean)).clamp(0.0, 1.0);
    }
    if channels == 3 {
        let n = out.len() / 3;
        for p in 0..n {
            let (r, g, b) = (out[p], out[n + p], out[2 * n + p]);
            let l = (r + g + b) / 3.0;
            let (r, g, b) = (
                (l + saturation * (r - l)).clamp(0.0, 1.0),
                (l + saturation * (g - l)).clamp(0.0, 1.0),
                (l + saturation * (b - l)).clamp(0.0, 1.0),
            );
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r, g, b) = hsv_to_rgb(h + hue, s, v);
            out[p] = r;
            out[n + p] = g;
            out[2 * n + p] = b;
        }
    }
    out
}
