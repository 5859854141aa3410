//! Inner (task adaptation) and outer (meta) updates.

use rand::Rng as _;

use super::adam::Adam;
use super::config::{Algorithm, GradientOrder};
use crate::network::{
    batch_hvp, batch_loss_grad, fen_backward, fen_forward_cached, pooled_hvp, pooled_loss_grad, FeatureBatch, FenCache,
    HeadLayout, ParamGroup, ParameterBundle, Pool,
};
use crate::rng::seeded;
use crate::tasks::Task;
use crate::{Error, Result};

/// Head values seen during the inner loop, enough to differentiate through it.
#[derive(Debug, Clone)]
enum Trace {
    Pooled { head0: Vec<f64>, pool: Pool, label: usize },
    /// `heads[i]` is the head before step `i`, taken on support row `rows[i]`.
    Sequential { heads: Vec<Vec<f64>>, rows: Vec<usize>, labels: Vec<usize> },
}

/// Adapted parameters plus what the outer update needs from the inner loop.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub params: ParameterBundle,
    /// Number of gradient steps taken on ψ.
    pub steps: usize,
    pub inner_lr: f64,
    support: FeatureBatch,
    cache: FenCache,
    trace: Trace,
}

fn check_labels(params: &ParameterBundle, task: &Task) -> Result<()> {
    let n = params.arch.num_outputs;
    if let Some(e) = task.support.iter().chain(&task.query).find(|e| e.y >= n) {
        return Err(Error::Config(format!("label {} but the classifier has {n} outputs", e.y)));
    }
    Ok(())
}

fn sgd(head: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
    head.iter().zip(grad).map(|(h, g)| h - lr * g).collect()
}

/// Runs the inner loop of `algorithm` on the task's support set.
///
/// θ is only read; ψ = {W, ρ} of the returned bundle holds the adapted
/// values. `seed` picks the example for [`Algorithm::OmlSingle`].
pub fn inner_update(params: &ParameterBundle, task: &Task, algorithm: Algorithm, inner_lr: f64, seed: u64) -> Result<InnerResult> {
    if task.support.is_empty() {
        return Err(Error::Task(format!("task for cluster {} has empty support", task.cluster_id)));
    }
    check_labels(params, task)?;
    let xs: Vec<&[f64]> = task.support.iter().map(|e| &e.x[..]).collect();
    let (support, cache) = fen_forward_cached(params, &xs)?;
    let hl = params.layout.offsets.head_layout;
    let f = hl.feature_dim;
    let head0 = params.head().to_vec();
    let (head, trace, steps) = match algorithm {
        Algorithm::Meml | Algorithm::MemlMean => {
            let pool = if algorithm == Algorithm::Meml { Pool::Attention } else { Pool::Mean };
            let label = task.support[0].y;
            let g = pooled_loss_grad(&hl, &head0, &support.data, support.rows, label, pool);
            (sgd(&head0, &g.head, inner_lr), Trace::Pooled { head0, pool, label }, 1)
        }
        Algorithm::Oml | Algorithm::OmlSingle => {
            let rows: Vec<usize> = if algorithm == Algorithm::Oml {
                (0..support.rows).collect()
            } else {
                vec![seeded(seed).random_range(0..support.rows)]
            };
            let labels: Vec<usize> = rows.iter().map(|&r| task.support[r].y).collect();
            let mut heads = vec![head0];
            for (&r, &y) in rows.iter().zip(&labels) {
                let cur = heads.last().expect("non-empty");
                let g = batch_loss_grad(&hl, cur, &support.data[r * f..(r + 1) * f], &[y]);
                let next = sgd(cur, &g.head, inner_lr);
                heads.push(next);
            }
            let head = heads.pop().expect("final head");
            let n = rows.len();
            (head, Trace::Sequential { heads, rows, labels }, n)
        }
    };
    let mut fast = params.clone();
    fast.head_mut().copy_from_slice(&head);
    Ok(InnerResult {
        params: fast,
        steps,
        inner_lr,
        support,
        cache,
        trace,
    })
}

pub fn inner_update_meml(params: &ParameterBundle, task: &Task, inner_lr: f64) -> Result<ParameterBundle> {
    Ok(inner_update(params, task, Algorithm::Meml, inner_lr, 0)?.params)
}

pub fn inner_update_meml_mean(params: &ParameterBundle, task: &Task, inner_lr: f64) -> Result<ParameterBundle> {
    Ok(inner_update(params, task, Algorithm::MemlMean, inner_lr, 0)?.params)
}

pub fn inner_update_oml(params: &ParameterBundle, task: &Task, inner_lr: f64) -> Result<ParameterBundle> {
    Ok(inner_update(params, task, Algorithm::Oml, inner_lr, 0)?.params)
}

pub fn inner_update_single(params: &ParameterBundle, task: &Task, inner_lr: f64, seed: u64) -> Result<ParameterBundle> {
    Ok(inner_update(params, task, Algorithm::OmlSingle, inner_lr, seed)?.params)
}

/// Outer loss and its gradient with respect to every parameter of the
/// original (pre-adaptation) bundle.
#[derive(Debug, Clone)]
pub struct MetaGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Pulls the head cotangent `v` (of the adapted head) back through the
/// inner loop. Returns the head gradient and the support-feature cotangents.
fn through_inner(hl: &HeadLayout, inner: &InnerResult, v: Vec<f64>, order: GradientOrder) -> (Vec<f64>, Vec<f64>) {
    let f = hl.feature_dim;
    let lr = inner.inner_lr;
    let mut d_support = vec![0.0; inner.support.rows * f];
    if order == GradientOrder::First {
        return (v, d_support);
    }
    match &inner.trace {
        Trace::Pooled { head0, pool, label } => {
            let h = pooled_hvp(hl, head0, &v, &inner.support.data, inner.support.rows, *label, *pool);
            for (d, hv) in d_support.iter_mut().zip(&h.hv_features) {
                *d = -lr * hv;
            }
            (v.iter().zip(&h.hv_head).map(|(a, b)| a - lr * b).collect(), d_support)
        }
        Trace::Sequential { heads, rows, labels } => {
            let mut v = v;
            for i in (0..rows.len()).rev() {
                let r = rows[i];
                let h = batch_hvp(hl, &heads[i], &v, &inner.support.data[r * f..(r + 1) * f], &[labels[i]]);
                for (d, hv) in d_support[r * f..(r + 1) * f].iter_mut().zip(&h.hv_features) {
                    *d += -lr * hv;
                }
                for (a, b) in v.iter_mut().zip(&h.hv_head) {
                    *a -= lr * b;
                }
            }
            (v, d_support)
        }
    }
}

/// Query cross-entropy of the adapted model and its gradient, scaled by `weight`.
pub fn meta_gradient(params: &ParameterBundle, inner: &InnerResult, task: &Task, order: GradientOrder, weight: f64) -> Result<MetaGradient> {
    if task.query.is_empty() {
        return Err(Error::Task(format!("task for cluster {} has empty query", task.cluster_id)));
    }
    check_labels(params, task)?;
    let hl = params.layout.offsets.head_layout;
    let xs: Vec<&[f64]> = task.query.iter().map(|e| &e.x[..]).collect();
    let labels: Vec<usize> = task.query.iter().map(|e| e.y).collect();
    let (query, qcache) = fen_forward_cached(params, &xs)?;
    let q = batch_loss_grad(&hl, inner.params.head(), &query.data, &labels);
    let (grad_head, d_support) = through_inner(&hl, inner, q.head, order);
    let mut grad = fen_backward(params, &qcache, &q.features)?;
    if d_support.iter().any(|&d| d != 0.0) {
        let gs = fen_backward(params, &inner.cache, &d_support)?;
        for (a, b) in grad.iter_mut().zip(&gs) {
            *a += b;
        }
    }
    let head = params.layout.head_range();
    grad[head].copy_from_slice(&grad_head);
    if weight != 1.0 {
        grad.iter_mut().for_each(|g| *g *= weight);
    }
    Ok(MetaGradient { loss: q.loss * weight, grad })
}

/// Result of one outer step.
#[derive(Debug, Clone)]
pub struct OuterResult {
    pub params: ParameterBundle,
    pub loss: f64,
}

/// One Adam step on φ (FEN, FiLM generators, attention, classifier) along
/// the meta-gradient. The FiLM context is never updated here.
pub fn outer_update(
    params: &ParameterBundle,
    inner: &InnerResult,
    task: &Task,
    order: GradientOrder,
    adam: &mut Adam,
    weight: f64,
) -> Result<OuterResult> {
    let mg = meta_gradient(params, inner, task, order, weight)?;
    if mg.grad.iter().any(|g| !g.is_finite()) || !mg.loss.is_finite() {
        return Err(Error::Validation(format!("non-finite meta-gradient (loss {})", mg.loss)));
    }
    let mut next = params.clone();
    let mask = params.layout.mask(ParamGroup::Phi);
    adam.step(&mut next.values, &mg.grad, &mask);
    Ok(OuterResult { params: next, loss: mg.loss })
}
