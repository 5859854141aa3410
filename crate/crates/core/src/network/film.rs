//! Feature-wise linear modulation driven by a context vector.

use super::params::ParameterBundle;
use crate::{Error, Result};

/// One FiLM generator: linear maps from the context to per-channel γ and β.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmLayer {
    pub channels: usize,
    pub context_dim: usize,
    pub gamma_w: Vec<f64>,
    pub gamma_b: Vec<f64>,
    pub beta_w: Vec<f64>,
    pub beta_b: Vec<f64>,
}

impl FilmLayer {
    /// Generator `j` (0 or 1) of `params`; `None` when FiLM is disabled.
    pub fn from_params(params: &ParameterBundle, j: usize) -> Option<Self> {
        let offs = params.layout.offsets.film?[j];
        let get = |i: usize| {
            let t = params.layout.tensors.iter().find(|t| t.offset == offs[i]).expect("film tensor");
            params.values[t.range()].to_vec()
        };
        let gamma_b = get(1);
        Some(FilmLayer {
            channels: gamma_b.len(),
            context_dim: params.arch.context_dim,
            gamma_w: get(0),
            gamma_b,
            beta_w: get(2),
            beta_b: get(3),
        })
    }

    /// Identity generator: γ = 1, β = 0 for every context.
    pub fn identity(channels: usize, context_dim: usize) -> Self {
        FilmLayer {
            channels,
            context_dim,
            gamma_w: vec![0.0; channels * context_dim],
            gamma_b: vec![1.0; channels],
            beta_w: vec![0.0; channels * context_dim],
            beta_b: vec![0.0; channels],
        }
    }

    /// `(γ(z), β(z))`.
    pub fn coefficients(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if z.len() != self.context_dim {
            return Err(Error::Shape(format!(
                "context has {} entries, generator expects {}",
                z.len(),
                self.context_dim
            )));
        }
        let lin = |w: &[f64], b: &[f64]| -> Vec<f64> {
            w.chunks_exact(self.context_dim)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(z).map(|(a, c)| a * c).sum::<f64>())
                .collect()
        };
        Ok((lin(&self.gamma_w, &self.gamma_b), lin(&self.beta_w, &self.beta_b)))
    }
}

/// `γ ⊙ x + β` with per-channel coefficients over `channels × pixels` maps.
pub fn apply_film(x: &mut [f64], gamma: &[f64], beta: &[f64]) -> Result<()> {
    let c = gamma.len();
    if c == 0 || beta.len() != c || x.len() % c != 0 {
        return Err(Error::Shape(format!(
            "{} activations cannot be split into {c} channels",
            x.len()
        )));
    }
    let pixels = x.len() / c;
    for ((plane, g), b) in x.chunks_exact_mut(pixels).zip(gamma).zip(beta) {
        plane.iter_mut().for_each(|v| *v = g * *v + b);
    }
    Ok(())
}

/// FiLM-modulated copy of the activation tensor `x` (channel-major).
pub fn film_transform(x: &[f64], context: &[f64], film: &FilmLayer) -> Result<Vec<f64>> {
    let (gamma, beta) = film.coefficients(context)?;
    let mut out = x.to_vec();
    apply_film(&mut out, &gamma, &beta)?;
    Ok(out)
}
