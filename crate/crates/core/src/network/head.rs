//! Attention pooling, classifier and cross-entropy, written over [`Scalar`].
//!
//! `head` slices are laid out per [`HeadLayout`]: attention first, then the
//! classifier. Feature matrices are row-major `K×F`.

use super::params::{HeadLayout, ParameterBundle};
use super::scalar::{Dual, Scalar};
use crate::{Error, Result};

/// Per-example feature vectors, row-major `rows × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureBatch {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::EmptySet("feature batch needs at least one row".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::Shape(format!("{} values for {rows}x{dim} features", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `idx` gathered into a new batch.
    pub fn select(&self, idx: &[usize]) -> FeatureBatch {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureBatch {
            rows: idx.len(),
            dim: self.dim,
            data,
        }
    }
}

/// Pooled feature vector and the weights that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaExample {
    pub me: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Attention,
    Mean,
}

/// Loss and gradients with respect to the head slice and the features.
#[derive(Debug, Clone)]
pub struct HeadGrad<S> {
    pub loss: S,
    pub head: Vec<S>,
    pub features: Vec<S>,
}

fn matvec<S: Scalar>(w: &[S], b: &[S], x: &[S], out: &mut [S]) {
    let n = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n).zip(b)) {
        let mut acc = *bias;
        for (wi, xi) in row.iter().zip(x) {
            acc += *wi * *xi;
        }
        *o = acc;
    }
}

/// `out += Wᵀ g` for row-major `W` with `g.len()` rows.
fn matvec_t_acc<S: Scalar>(w: &[S], g: &[S], out: &mut [S]) {
    let n = out.len();
    for (row, gi) in w.chunks_exact(n).zip(g) {
        for (o, wi) in out.iter_mut().zip(row) {
            *o += *wi * *gi;
        }
    }
}

/// `W += g ⊗ x`, `b += g`.
fn outer_acc<S: Scalar>(gw: &mut [S], gb: &mut [S], g: &[S], x: &[S]) {
    let n = x.len();
    for ((row, bias), gi) in gw.chunks_exact_mut(n).zip(gb.iter_mut()).zip(g) {
        *bias += *gi;
        for (w, xi) in row.iter_mut().zip(x) {
            *w += *gi * *xi;
        }
    }
}

fn softmax<S: Scalar>(z: &[S]) -> Vec<S> {
    let m = z.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<S> = z.iter().map(|v| (*v - S::constant(m)).exp()).collect();
    let mut sum = S::zero();
    for v in &e {
        sum += *v;
    }
    e.into_iter().map(|v| v / sum).collect()
}

struct Slices<'a, S> {
    att1_w: &'a [S],
    att1_b: &'a [S],
    att2_w: &'a [S],
    att2_b: &'a [S],
    cln1_w: &'a [S],
    cln1_b: &'a [S],
    cln2_w: &'a [S],
    cln2_b: &'a [S],
}

fn slices<'a, S>(hl: &HeadLayout, head: &'a [S]) -> Slices<'a, S> {
    Slices {
        att1_w: &head[hl.att1_w..hl.att1_b],
        att1_b: &head[hl.att1_b..hl.att2_w],
        att2_w: &head[hl.att2_w..hl.att2_b],
        att2_b: &head[hl.att2_b..hl.cln1_w],
        cln1_w: &head[hl.cln1_w..hl.cln1_b],
        cln1_b: &head[hl.cln1_b..hl.cln2_w],
        cln2_w: &head[hl.cln2_w..hl.cln2_b],
        cln2_b: &head[hl.cln2_b..hl.len],
    }
}

struct AttentionCache<S> {
    tanh: Vec<S>,
    alpha: Vec<S>,
    me: Vec<S>,
}

fn attention_forward<S: Scalar>(hl: &HeadLayout, head: &[S], r: &[S], k: usize, pool: Pool) -> AttentionCache<S> {
    let f = hl.feature_dim;
    let a = hl.att_hidden;
    let p = slices(hl, head);
    let mut tanh = Vec::new();
    let alpha = match pool {
        Pool::Attention => {
            tanh = vec![S::zero(); k * a];
            let mut logits = vec![S::zero(); k];
            for i in 0..k {
                let t = &mut tanh[i * a..(i + 1) * a];
                matvec(p.att1_w, p.att1_b, &r[i * f..(i + 1) * f], t);
                let mut s = p.att2_b[0];
                for (ti, wi) in t.iter_mut().zip(p.att2_w) {
                    *ti = ti.tanh();
                    s += *wi * *ti;
                }
                logits[i] = s;
            }
            softmax(&logits)
        }
        Pool::Mean => vec![S::constant(1.0 / k as f64); k],
    };
    let mut me = vec![S::zero(); f];
    for (i, ai) in alpha.iter().enumerate() {
        for (m, ri) in me.iter_mut().zip(&r[i * f..(i + 1) * f]) {
            *m += *ai * *ri;
        }
    }
    AttentionCache { tanh, alpha, me }
}

/// Adds the classifier's cross-entropy gradient for one input `x` (scaled
/// by `weight`) into `grad`, returns the loss and `∂loss/∂x`.
fn cln_ce_backward<S: Scalar>(hl: &HeadLayout, head: &[S], x: &[S], label: usize, weight: f64, grad: &mut [S]) -> (S, Vec<S>) {
    let p = slices(hl, head);
    let h = hl.cln_hidden;
    let mut pre = vec![S::zero(); h];
    let act: Vec<S> = if h == 0 {
        x.to_vec()
    } else {
        matvec(p.cln1_w, p.cln1_b, x, &mut pre);
        pre.iter().map(|v| v.relu()).collect()
    };
    let mut z = vec![S::zero(); hl.outputs];
    matvec(p.cln2_w, p.cln2_b, &act, &mut z);
    let prob = softmax(&z);
    let loss = -prob[label].ln();
    let mut dz = prob;
    dz[label] -= S::constant(1.0);
    for v in dz.iter_mut() {
        *v = v.scale(weight);
    }
    let (g1, g2) = grad[hl.cln1_w..].split_at_mut(hl.cln2_w - hl.cln1_w);
    let (g1w, g1b) = g1.split_at_mut(hl.cln1_b - hl.cln1_w);
    let (g2w, g2b) = g2.split_at_mut(hl.cln2_b - hl.cln2_w);
    outer_acc(g2w, g2b, &dz, &act);
    let mut da = vec![S::zero(); act.len()];
    matvec_t_acc(p.cln2_w, &dz, &mut da);
    if h == 0 {
        return (loss, da);
    }
    for (d, pv) in da.iter_mut().zip(&pre) {
        if pv.re() <= 0.0 {
            *d = S::zero();
        }
    }
    outer_acc(g1w, g1b, &da, x);
    let mut dx = vec![S::zero(); x.len()];
    matvec_t_acc(p.cln1_w, &da, &mut dx);
    (loss, dx)
}

/// Cross-entropy of the classifier on the pooled meta-example of `r` (`k` rows).
pub fn pooled_loss_grad<S: Scalar>(hl: &HeadLayout, head: &[S], r: &[S], k: usize, label: usize, pool: Pool) -> HeadGrad<S> {
    let f = hl.feature_dim;
    let a = hl.att_hidden;
    let cache = attention_forward(hl, head, r, k, pool);
    let mut grad = vec![S::zero(); hl.len];
    let (loss, dme) = cln_ce_backward(hl, head, &cache.me, label, 1.0, &mut grad);
    let mut features = vec![S::zero(); k * f];
    for i in 0..k {
        for (d, g) in features[i * f..(i + 1) * f].iter_mut().zip(&dme) {
            *d += cache.alpha[i] * *g;
        }
    }
    if pool == Pool::Attention {
        let p = slices(hl, head);
        let mut gm = S::zero();
        for (g, m) in dme.iter().zip(&cache.me) {
            gm += *g * *m;
        }
        for i in 0..k {
            let ri = &r[i * f..(i + 1) * f];
            let mut gr = S::zero();
            for (g, x) in dme.iter().zip(ri) {
                gr += *g * *x;
            }
            let ds = cache.alpha[i] * (gr - gm);
            let t = &cache.tanh[i * a..(i + 1) * a];
            let du: Vec<S> = t
                .iter()
                .zip(p.att2_w)
                .map(|(ti, wi)| ds * *wi * (S::constant(1.0) - *ti * *ti))
                .collect();
            {
                let (g_att1, rest) = grad.split_at_mut(hl.att2_w);
                let (g1w, g1b) = g_att1.split_at_mut(hl.att1_b);
                outer_acc(g1w, g1b, &du, ri);
                let (g2w, g2b) = rest[..hl.cln1_w - hl.att2_w].split_at_mut(a);
                outer_acc(g2w, g2b, &[ds], t);
            }
            matvec_t_acc(p.att1_w, &du, &mut features[i * f..(i + 1) * f]);
        }
    }
    HeadGrad { loss, head: grad, features }
}

/// Mean cross-entropy of the classifier applied to each row of `r` separately.
pub fn batch_loss_grad<S: Scalar>(hl: &HeadLayout, head: &[S], r: &[S], labels: &[usize]) -> HeadGrad<S> {
    let f = hl.feature_dim;
    let n = labels.len();
    let w = 1.0 / n as f64;
    let mut grad = vec![S::zero(); hl.len];
    let mut features = Vec::with_capacity(n * f);
    let mut loss = S::zero();
    for (i, &y) in labels.iter().enumerate() {
        let (l, dx) = cln_ce_backward(hl, head, &r[i * f..(i + 1) * f], y, w, &mut grad);
        loss += l;
        features.extend(dx);
    }
    HeadGrad {
        loss: loss.scale(w),
        head: grad,
        features,
    }
}

/// Gradient of a head loss plus its directional derivative along `v`
/// (tangent on the head parameters, none on the features): `(g, H v)`.
pub struct Hvp {
    pub loss: f64,
    pub grad_head: Vec<f64>,
    pub grad_features: Vec<f64>,
    pub hv_head: Vec<f64>,
    pub hv_features: Vec<f64>,
}

impl Hvp {
    fn from_dual(g: HeadGrad<Dual>) -> Self {
        Hvp {
            loss: g.loss.re,
            grad_head: g.head.iter().map(|d| d.re).collect(),
            hv_head: g.head.iter().map(|d| d.eps).collect(),
            grad_features: g.features.iter().map(|d| d.re).collect(),
            hv_features: g.features.iter().map(|d| d.eps).collect(),
        }
    }
}

fn lift(x: &[f64], t: Option<&[f64]>) -> Vec<Dual> {
    match t {
        Some(t) => x.iter().zip(t).map(|(a, b)| Dual::new(*a, *b)).collect(),
        None => x.iter().map(|a| Dual::new(*a, 0.0)).collect(),
    }
}

pub fn pooled_hvp(hl: &HeadLayout, head: &[f64], v: &[f64], r: &[f64], k: usize, label: usize, pool: Pool) -> Hvp {
    let g = pooled_loss_grad(hl, &lift(head, Some(v)), &lift(r, None), k, label, pool);
    Hvp::from_dual(g)
}

pub fn batch_hvp(hl: &HeadLayout, head: &[f64], v: &[f64], r: &[f64], labels: &[usize]) -> Hvp {
    let g = batch_loss_grad(hl, &lift(head, Some(v)), &lift(r, None), labels);
    Hvp::from_dual(g)
}

fn check_features(params: &ParameterBundle, features: &FeatureBatch) -> Result<()> {
    if features.dim != params.arch.feature_dim {
        return Err(Error::Shape(format!(
            "feature dim {} but the network expects {}",
            features.dim, params.arch.feature_dim
        )));
    }
    if features.rows == 0 {
        return Err(Error::EmptySet("pooling needs at least one feature row".into()));
    }
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite feature value".into()));
    }
    Ok(())
}

/// Softmax-attention pooling of the rows of `features` into one meta-example.
pub fn attention_pool(params: &ParameterBundle, features: &FeatureBatch) -> Result<MetaExample> {
    check_features(params, features)?;
    let hl = &params.layout.offsets.head_layout;
    let c = attention_forward(hl, params.head(), &features.data, features.rows, Pool::Attention);
    Ok(MetaExample { me: c.me, alpha: c.alpha })
}

/// Plain average of the rows.
pub fn mean_pool(features: &FeatureBatch) -> Result<MetaExample> {
    if features.rows == 0 {
        return Err(Error::EmptySet("pooling needs at least one feature row".into()));
    }
    let k = features.rows;
    let alpha = vec![1.0 / k as f64; k];
    let mut me = vec![0.0; features.dim];
    for (i, a) in alpha.iter().enumerate() {
        for (m, r) in me.iter_mut().zip(features.row(i)) {
            *m += a * r;
        }
    }
    Ok(MetaExample { me, alpha })
}

/// Attention logits `f_ρ(R_k)`, one per row.
pub fn attention_logits(params: &ParameterBundle, features: &FeatureBatch) -> Result<Vec<f64>> {
    check_features(params, features)?;
    let hl = &params.layout.offsets.head_layout;
    let p = slices(hl, params.head());
    let mut t = vec![0.0; hl.att_hidden];
    Ok((0..features.rows)
        .map(|i| {
            matvec(p.att1_w, p.att1_b, features.row(i), &mut t);
            p.att2_b[0] + t.iter().zip(p.att2_w).map(|(a, w)| a.tanh() * w).sum::<f64>()
        })
        .collect())
}

pub(crate) fn cln_logits(hl: &HeadLayout, head: &[f64], x: &[f64]) -> Vec<f64> {
    let p = slices(hl, head);
    let mut pre = vec![0.0; hl.cln_hidden];
    if hl.cln_hidden == 0 {
        pre = x.to_vec();
    } else {
        matvec(p.cln1_w, p.cln1_b, x, &mut pre);
        pre.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mut z = vec![0.0; hl.outputs];
    matvec(p.cln2_w, p.cln2_b, &pre, &mut z);
    z
}

/// Classifier logits for one feature vector.
pub fn cln_forward(params: &ParameterBundle, feature: &[f64]) -> Result<Vec<f64>> {
    if feature.len() != params.arch.feature_dim {
        return Err(Error::Shape(format!(
            "feature dim {} but the classifier expects {}",
            feature.len(),
            params.arch.feature_dim
        )));
    }
    Ok(cln_logits(&params.layout.offsets.head_layout, params.head(), feature))
}

/// Numerically stable cross-entropy of `logits` against `label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}
