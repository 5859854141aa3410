//! Class-incremental meta-test with a frozen representation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::argmax;
use crate::data_io::imageops::{replicate_gray, resize_bilinear, to_gray};
use crate::data_io::{Dataset, LabeledExample};
use crate::network::{batch_loss_grad, cln_forward, fen_forward, ParameterBundle};
use crate::replay::{ReservoirBuffer, DEFAULT_CAPACITY};
use crate::rng::{derive, seeded};
use crate::{Error, Result};

fn d_steps() -> usize {
    5
}
fn d_lr() -> f64 {
    0.01
}
fn d_capacity() -> usize {
    DEFAULT_CAPACITY
}

/// How the classifier is fine-tuned on each new class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    /// Gradient steps per class.
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Reservoir size when rehearsal is on.
    #[serde(default = "d_capacity")]
    pub buffer_capacity: usize,
    /// Also re-draw the classifier's hidden layer, not just its output layer.
    #[serde(default)]
    pub reset_hidden: bool,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            steps: d_steps(),
            lr: d_lr(),
            buffer_capacity: d_capacity(),
            reset_hidden: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub num_classes: usize,
    pub accuracy: f64,
    /// Held-out examples the accuracy was measured on.
    pub eval_size: usize,
}

/// Accuracy after each newly learned class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub variant: String,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
    /// Gradient steps applied to the classifier.
    pub w_updates: usize,
}

impl AccuracyCurve {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.points.last().map(|p| p.accuracy)
    }
}

fn uniform(rng: &mut impl rand::Rng, fan_in: usize) -> f64 {
    let b = 1.0 / (fan_in as f64).sqrt();
    rng.random_range(-b..b)
}

/// Class-incremental evaluation.
///
/// Classes are presented in a seeded random order; class number `i` in that
/// order is mapped to classifier output `i`. Per class, the classifier is
/// fine-tuned on `shots` examples for `ft.steps` full-batch SGD steps (with
/// an equally sized reservoir batch appended when `rehearsal` is on), then
/// scored on the remaining examples of every class seen so far. Prediction
/// is the argmax over the outputs of seen classes. The feature extractor
/// and attention head are only read.
pub fn meta_test(
    params: &ParameterBundle,
    dataset: &Dataset,
    classes: &[usize],
    shots: usize,
    ft: &FineTuneConfig,
    rehearsal: bool,
    seed: u64,
) -> Result<AccuracyCurve> {
    if classes.is_empty() {
        return Err(Error::Config("meta-test needs at least one class".into()));
    }
    if shots == 0 {
        return Err(Error::Config("shots must be >= 1".into()));
    }
    if !(ft.lr >= 0.0 && ft.lr.is_finite()) {
        return Err(Error::Config(format!("fine-tune lr {} invalid", ft.lr)));
    }
    if classes.len() > params.arch.num_outputs {
        return Err(Error::Config(format!(
            "{} test classes but the classifier has {} outputs",
            classes.len(),
            params.arch.num_outputs
        )));
    }
    let by_class = dataset.class_indices();
    let mut seen_class = vec![false; by_class.len()];
    for &c in classes {
        let members = by_class
            .get(c)
            .ok_or_else(|| Error::Config(format!("class {c} not in the test set")))?;
        if members.len() < shots + 1 {
            return Err(Error::Config(format!(
                "class {c} has {} samples, {} needed for {shots} shots",
                members.len(),
                shots + 1
            )));
        }
        if std::mem::replace(&mut seen_class[c], true) {
            return Err(Error::Config(format!("class {c} listed twice")));
        }
    }

    let mut rng = seeded(seed);
    let mut order = classes.to_vec();
    order.shuffle(&mut rng);
    // (shots, held-out) dataset indices per position in `order`
    let splits: Vec<(Vec<usize>, Vec<usize>)> = order
        .iter()
        .map(|&c| {
            let mut m = by_class[c].clone();
            m.shuffle(&mut rng);
            let rest = m.split_off(shots);
            (m, rest)
        })
        .collect();

    let mut row_of = vec![usize::MAX; dataset.len()];
    let mut images = Vec::new();
    for (s, h) in &splits {
        for &i in s.iter().chain(h) {
            row_of[i] = images.len();
            images.push(dataset.image(i).clone());
        }
    }
    let features = fen_forward(params, &images)?;
    let f = features.dim;

    let hl = params.layout.offsets.head_layout;
    let mut model = params.clone();
    {
        let n_in = hl.cln_in();
        let head = model.head_mut();
        if ft.reset_hidden && hl.cln_hidden > 0 {
            let fan = hl.feature_dim;
            for v in &mut head[hl.cln1_w..hl.cln2_w] {
                *v = uniform(&mut rng, fan);
            }
        }
        for v in &mut head[hl.cln2_w..hl.len] {
            *v = uniform(&mut rng, n_in);
        }
    }
    let cln = hl.cln_range();
    let mut buffer = if rehearsal {
        Some(ReservoirBuffer::new(ft.buffer_capacity, derive(seed, 7))?)
    } else {
        None
    };

    let mut points = Vec::with_capacity(order.len());
    let mut w_updates = 0;
    for (pos, (shot_idx, _)) in splits.iter().enumerate() {
        let shot_rows: Vec<usize> = shot_idx.iter().map(|&i| row_of[i]).collect();
        for step in 0..ft.steps {
            let mut rows = shot_rows.clone();
            let mut labels = vec![pos; rows.len()];
            if let Some(buf) = &buffer {
                if !buf.is_empty() {
                    for e in buf.batch(shots, derive(seed, (pos * 100_000 + step) as u64 + 1))? {
                        rows.push(row_of[e.origin.expect("test items come from the dataset")]);
                        labels.push(e.y);
                    }
                }
            }
            let mut x = Vec::with_capacity(rows.len() * f);
            for &r in &rows {
                x.extend_from_slice(features.row(r));
            }
            let g = batch_loss_grad(&hl, model.head(), &x, &labels);
            let head = model.head_mut();
            for i in cln.clone() {
                head[i] -= ft.lr * g.head[i];
            }
            w_updates += 1;
        }
        if let Some(buf) = &mut buffer {
            for &i in shot_idx {
                buf.insert(LabeledExample {
                    y: pos,
                    ..dataset.example(i)
                });
            }
        }
        let mut hits = 0;
        let mut total = 0;
        for (label, (_, held)) in splits.iter().enumerate().take(pos + 1) {
            for &i in held {
                let z = cln_forward(&model, features.row(row_of[i]))?;
                hits += usize::from(argmax(&z[..=pos]) == label);
                total += 1;
            }
        }
        points.push(CurvePoint {
            num_classes: pos + 1,
            accuracy: hits as f64 / total as f64,
            eval_size: total,
        });
    }
    Ok(AccuracyCurve {
        variant: String::new(),
        seed,
        points,
        w_updates,
    })
}

/// Brings `dataset` to the channel count and image size the network was trained on.
///
/// RGB becomes grey by channel mean, grey becomes RGB by replication, and
/// sizes are matched by bilinear resampling.
pub fn adapt_dataset(dataset: &Dataset, channels: usize, size: usize) -> Result<Dataset> {
    let c = dataset.channels();
    let convert: fn(&[f64], usize) -> Vec<f64> = match (c, channels) {
        (a, b) if a == b => |x, _| x.to_vec(),
        (3, 1) => |x, c| to_gray(x, c),
        (1, 3) => |x, c| replicate_gray(x, c),
        _ => {
            return Err(Error::Config(format!(
                "no channel adaptation from {c} to {channels} channels"
            )))
        }
    };
    let from = (dataset.height(), dataset.width());
    if c == channels && from == (size, size) {
        return Ok(dataset.clone());
    }
    let arg = if (c, channels) == (1, 3) { 3 } else { c };
    let images = dataset
        .images()
        .iter()
        .map(|x| {
            let y = convert(x, arg);
            let y = resize_bilinear(&y, channels, from, (size, size));
            y.into_iter().map(|p| p.clamp(0.0, 1.0)).collect::<Vec<f64>>().into()
        })
        .collect();
    Dataset::new(images, dataset.labels().to_vec(), channels, size, size, dataset.split)
}

/// The meta-test protocol on a dataset from another distribution.
pub fn ood_evaluate(
    params: &ParameterBundle,
    ood_dataset: &Dataset,
    classes: &[usize],
    shots: usize,
    ft: &FineTuneConfig,
    seed: u64,
) -> Result<AccuracyCurve> {
    let adapted = adapt_dataset(ood_dataset, params.arch.in_channels, params.arch.image_size)?;
    meta_test(params, &adapted, classes, shots, ft, false, seed)
}
