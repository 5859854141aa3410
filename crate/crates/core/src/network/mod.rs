//! Feature extractor, attention pooling, classifier and parameter storage.

mod conv;
mod fen;
mod film;
mod head;
mod params;
mod scalar;

pub use fen::{fen_backward, fen_forward, fen_forward_cached, FenCache};
pub use film::{apply_film, film_transform, FilmLayer};
pub use head::{
    attention_logits, attention_pool, batch_hvp, batch_loss_grad, cln_forward, cross_entropy, mean_pool, pooled_hvp,
    pooled_loss_grad, FeatureBatch, HeadGrad, Hvp, MetaExample, Pool,
};
pub use params::{
    init_params, ArchConfig, ConvSpec, HeadLayout, Layout, Offsets, ParamGroup, ParameterBundle, TensorSpec, FILM_LAYERS,
    NUM_CONV,
};
pub use scalar::{Dual, Scalar};
