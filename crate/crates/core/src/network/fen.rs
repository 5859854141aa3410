//! Feature extraction network: six convolutions and a two-layer trunk.

use super::conv::{conv_backward, conv_forward, gemm};
use super::film::{apply_film, FilmLayer};
use super::head::FeatureBatch;
use super::params::{ConvSpec, ParameterBundle, FILM_LAYERS, NUM_CONV};
use crate::{par, Error, Result};

/// Examples per work unit. Fixed so that gradient sums are reduced in the
/// same order whether or not the batch runs in parallel.
const CHUNK: usize = 4;

/// Activations kept from the forward pass of one example.
#[derive(Debug, Clone)]
struct ExampleCache {
    /// `acts[l]` is the input of conv `l`; `acts[6]` the flattened conv output.
    acts: Vec<Vec<f64>>,
    /// Conv outputs before FiLM, for the FiLM layers only.
    pre_film: Vec<Vec<f64>>,
    hidden: Vec<f64>,
}

/// Everything the backward pass needs; opaque to callers.
#[derive(Debug, Clone)]
pub struct FenCache {
    examples: Vec<ExampleCache>,
    film: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl FenCache {
    pub fn len(&self) -> usize {
        self.examples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

fn film_coefficients(params: &ParameterBundle) -> Result<Option<Vec<(Vec<f64>, Vec<f64>)>>> {
    let Some(ctx) = params.layout.offsets.context else {
        return Ok(None);
    };
    let z = &params.values[ctx..ctx + params.arch.context_dim];
    let mut out = Vec::with_capacity(2);
    for j in 0..2 {
        let layer = FilmLayer::from_params(params, j).expect("film enabled");
        out.push(layer.coefficients(z)?);
    }
    Ok(Some(out))
}

fn check_inputs<X: AsRef<[f64]>>(params: &ParameterBundle, images: &[X]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::EmptySet("feature extraction needs a non-empty batch".into()));
    }
    let want = params.arch.input_len();
    for (i, x) in images.iter().enumerate() {
        let x = x.as_ref();
        if x.len() != want {
            return Err(Error::Shape(format!("image {i} has {} values, expected {want}", x.len())));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation(format!("image {i} contains NaN")));
        }
    }
    Ok(())
}

fn forward_one(
    params: &ParameterBundle,
    specs: &[ConvSpec],
    film: Option<&Vec<(Vec<f64>, Vec<f64>)>>,
    x: &[f64],
) -> (Vec<f64>, ExampleCache) {
    let o = &params.layout.offsets;
    let v = &params.values;
    let mut acts = Vec::with_capacity(NUM_CONV + 1);
    let mut pre_film = Vec::new();
    acts.push(x.to_vec());
    for (l, s) in specs.iter().enumerate() {
        let w = &v[o.conv_w[l]..o.conv_w[l] + s.c_out * s.patch_len()];
        let b = &v[o.conv_b[l]..o.conv_b[l] + s.c_out];
        let mut out = conv_forward(s, w, b, &acts[l]);
        if let Some(coeffs) = film {
            if let Some(j) = FILM_LAYERS.iter().position(|&f| f == l) {
                pre_film.push(out.clone());
                let (g, bt) = &coeffs[j];
                apply_film(&mut out, g, bt).expect("channel count fixed by layout");
            }
        }
        out.iter_mut().for_each(|a| *a = a.max(0.0));
        acts.push(out);
    }
    let arch = &params.arch;
    let flat = &acts[NUM_CONV];
    let mut hidden = v[o.fc1_b..o.fc1_b + arch.trunk_hidden].to_vec();
    gemm(arch.trunk_hidden, flat.len(), 1, &v[o.fc1_w..], false, flat, false, 1.0, &mut hidden);
    hidden.iter_mut().for_each(|a| *a = a.max(0.0));
    let mut r = v[o.fc2_b..o.fc2_b + arch.feature_dim].to_vec();
    gemm(arch.feature_dim, arch.trunk_hidden, 1, &v[o.fc2_w..], false, &hidden, false, 1.0, &mut r);
    (r, ExampleCache { acts, pre_film, hidden })
}

/// Features and cached activations for a batch of images.
pub fn fen_forward_cached<X: AsRef<[f64]> + Sync>(params: &ParameterBundle, images: &[X]) -> Result<(FeatureBatch, FenCache)> {
    check_inputs(params, images)?;
    let specs = params.arch.conv_specs();
    let film = film_coefficients(params)?;
    let outs = par::map_range(images.len(), |i| forward_one(params, &specs, film.as_ref(), images[i].as_ref()));
    let dim = params.arch.feature_dim;
    let mut data = Vec::with_capacity(images.len() * dim);
    let mut examples = Vec::with_capacity(images.len());
    for (r, c) in outs {
        data.extend(r);
        examples.push(c);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("feature extractor produced a non-finite value".into()));
    }
    Ok((
        FeatureBatch {
            rows: images.len(),
            dim,
            data,
        },
        FenCache { examples, film },
    ))
}

/// Per-example feature vectors `R = f_θ(X)`.
pub fn fen_forward<X: AsRef<[f64]> + Sync>(params: &ParameterBundle, images: &[X]) -> Result<FeatureBatch> {
    check_inputs(params, images)?;
    let specs = params.arch.conv_specs();
    let film = film_coefficients(params)?;
    let rows = par::map_range(images.len(), |i| forward_one(params, &specs, film.as_ref(), images[i].as_ref()).0);
    FeatureBatch::new(images.len(), params.arch.feature_dim, rows.concat())
}

struct Partial {
    grad: Vec<f64>,
    /// Per FiLM layer: gradients of γ and β.
    film: Vec<(Vec<f64>, Vec<f64>)>,
}

fn backward_one(params: &ParameterBundle, specs: &[ConvSpec], cache: &FenCache, i: usize, dr: &[f64], acc: &mut Partial) {
    let o = &params.layout.offsets;
    let v = &params.values;
    let arch = &params.arch;
    let ex = &cache.examples[i];
    let g = &mut acc.grad;
    let flat = &ex.acts[NUM_CONV];
    // fc2
    gemm(arch.feature_dim, 1, arch.trunk_hidden, dr, false, &ex.hidden, false, 1.0, &mut g[o.fc2_w..]);
    for (a, d) in g[o.fc2_b..o.fc2_b + arch.feature_dim].iter_mut().zip(dr) {
        *a += d;
    }
    let mut dh = vec![0.0; arch.trunk_hidden];
    gemm(arch.trunk_hidden, arch.feature_dim, 1, &v[o.fc2_w..], true, dr, false, 0.0, &mut dh);
    for (d, h) in dh.iter_mut().zip(&ex.hidden) {
        if *h <= 0.0 {
            *d = 0.0;
        }
    }
    // fc1
    gemm(arch.trunk_hidden, 1, flat.len(), &dh, false, flat, false, 1.0, &mut g[o.fc1_w..]);
    for (a, d) in g[o.fc1_b..o.fc1_b + arch.trunk_hidden].iter_mut().zip(&dh) {
        *a += d;
    }
    let mut dout = vec![0.0; flat.len()];
    gemm(flat.len(), arch.trunk_hidden, 1, &v[o.fc1_w..], true, &dh, false, 0.0, &mut dout);
    for l in (0..NUM_CONV).rev() {
        let s = &specs[l];
        for (d, a) in dout.iter_mut().zip(&ex.acts[l + 1]) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        if let Some(coeffs) = &cache.film {
            if let Some(j) = FILM_LAYERS.iter().position(|&f| f == l) {
                let pre = &ex.pre_film[j];
                let (gamma, _) = &coeffs[j];
                let px = s.out_pixels();
                let (dg, db) = &mut acc.film[j];
                for c in 0..s.c_out {
                    let dplane = &mut dout[c * px..(c + 1) * px];
                    let pplane = &pre[c * px..(c + 1) * px];
                    dg[c] += dplane.iter().zip(pplane).map(|(a, b)| a * b).sum::<f64>();
                    db[c] += dplane.iter().sum::<f64>();
                    dplane.iter_mut().for_each(|d| *d *= gamma[c]);
                }
            }
        }
        let wlen = s.c_out * s.patch_len();
        let w = &v[o.conv_w[l]..o.conv_w[l] + wlen];
        let (gw, rest) = g[o.conv_w[l]..].split_at_mut(wlen);
        let gb = &mut rest[o.conv_b[l] - o.conv_w[l] - wlen..][..s.c_out];
        match conv_backward(s, w, &ex.acts[l], &dout, gw, gb, l > 0) {
            Some(dx) => dout = dx,
            None => break,
        }
    }
}

/// Gradient of `Σ_i ⟨d_features_i, R_i⟩` with respect to every parameter.
///
/// Only trunk entries (FEN, FiLM generators and context) can be non-zero.
pub fn fen_backward(params: &ParameterBundle, cache: &FenCache, d_features: &[f64]) -> Result<Vec<f64>> {
    let n = cache.len();
    let f = params.arch.feature_dim;
    if d_features.len() != n * f {
        return Err(Error::Shape(format!(
            "{} feature gradients for {n} cached examples of dim {f}",
            d_features.len()
        )));
    }
    let specs = params.arch.conv_specs();
    let trunk = params.layout.offsets.head;
    let film_channels: Vec<usize> = FILM_LAYERS.iter().map(|&l| specs[l].c_out).collect();
    let chunks = n.div_ceil(CHUNK);
    let partials = par::map_range(chunks, |c| {
        let mut acc = Partial {
            grad: vec![0.0; trunk],
            film: film_channels.iter().map(|&ch| (vec![0.0; ch], vec![0.0; ch])).collect(),
        };
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let dr = &d_features[i * f..(i + 1) * f];
            if dr.iter().any(|&d| d != 0.0) {
                backward_one(params, &specs, cache, i, dr, &mut acc);
            }
        }
        acc
    });
    let mut grad = vec![0.0; params.len()];
    let mut film: Vec<(Vec<f64>, Vec<f64>)> = film_channels.iter().map(|&ch| (vec![0.0; ch], vec![0.0; ch])).collect();
    for p in partials {
        for (a, b) in grad.iter_mut().zip(&p.grad) {
            *a += b;
        }
        for ((dg, db), (pg, pb)) in film.iter_mut().zip(&p.film) {
            dg.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
            db.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
        }
    }
    if let (Some(offs), Some(ctx)) = (params.layout.offsets.film, params.layout.offsets.context) {
        let zdim = params.arch.context_dim;
        let z = params.values[ctx..ctx + zdim].to_vec();
        for (j, (dg, db)) in film.iter().enumerate() {
            let ch = dg.len();
            // γ = Gγ z + bγ and β = Gβ z + bβ
            for (wo, bo, d) in [(offs[j][0], offs[j][1], dg), (offs[j][2], offs[j][3], db)] {
                for c in 0..ch {
                    grad[bo + c] += d[c];
                    for k in 0..zdim {
                        grad[wo + c * zdim + k] += d[c] * z[k];
                        grad[ctx + k] += d[c] * params.values[wo + c * zdim + k];
                    }
                }
            }
        }
    }
    Ok(grad)
}
