use std::sync::Arc;

use rand::Rng;

use super::*;
use crate::data_io::{generate_synthetic_glyphs, Dataset, LabeledExample};
use crate::network::{cross_entropy, cln_forward, fen_forward, init_params, ArchConfig, ParamGroup, ParameterBundle};
use crate::rng::seeded;
use crate::tasks::{make_unbalanced_task, ClusterAssignment, Task};

fn tiny(outputs: usize) -> ArchConfig {
    ArchConfig {
        image_size: 8,
        conv_width: 2,
        trunk_hidden: 6,
        feature_dim: 4,
        attention_hidden: Some(3),
        cln_hidden: 5,
        num_outputs: outputs,
        ..ArchConfig::default()
    }
}

fn glyphs(classes: usize, per_class: usize) -> Dataset {
    generate_synthetic_glyphs(classes, per_class, 8, 3).unwrap()
}

fn task(ds: &Dataset, cluster: usize, seed: u64) -> Task {
    let a = ClusterAssignment::from_labels(ds.labels().to_vec()).unwrap();
    make_unbalanced_task(&a, ds, cluster, 4, seed).unwrap()
}

/// Params nudged off the zero-bias init so no ReLU sits exactly on its kink.
fn jittered(arch: &ArchConfig, seed: u64) -> ParameterBundle {
    let mut p = init_params(arch, seed).unwrap();
    let mut r = seeded(seed + 100);
    p.values.iter_mut().for_each(|v| *v += r.random_range(-0.05..0.05));
    p
}

#[test]
fn zero_inner_lr_leaves_psi_unchanged() {
    let ds = glyphs(3, 6);
    let p = init_params(&tiny(3), 1).unwrap();
    let t = task(&ds, 1, 0);
    for alg in [Algorithm::Meml, Algorithm::MemlMean, Algorithm::Oml, Algorithm::OmlSingle] {
        let r = inner_update(&p, &t, alg, 0.0, 5).unwrap();
        assert_eq!(r.params.values, p.values, "{alg:?}");
    }
}

#[test]
fn inner_updates_touch_only_psi() {
    let ds = glyphs(3, 6);
    let p = init_params(&tiny(3), 1).unwrap();
    let t = task(&ds, 0, 0);
    for alg in [Algorithm::Meml, Algorithm::Oml] {
        let r = inner_update(&p, &t, alg, 0.1, 0).unwrap();
        assert_eq!(r.params.checksum(ParamGroup::Fen), p.checksum(ParamGroup::Fen));
        assert_ne!(r.params.head(), p.head());
    }
}

/// Constant features: fc2 weights zero, bias = `value`.
fn constant_features(arch: &ArchConfig, value: &[f64]) -> ParameterBundle {
    let mut p = init_params(arch, 0).unwrap();
    p.tensor_mut("fen.fc2.weight").unwrap().iter_mut().for_each(|v| *v = 0.0);
    p.tensor_mut("fen.fc2.bias").unwrap().copy_from_slice(value);
    p
}

fn example(ds: &Dataset, i: usize, y: usize) -> LabeledExample {
    LabeledExample { y, ..ds.example(i) }
}

#[test]
fn hand_computed_linear_step() {
    let arch = ArchConfig {
        feature_dim: 1,
        cln_hidden: 0,
        num_outputs: 2,
        ..tiny(2)
    };
    let mut p = constant_features(&arch, &[1.0]);
    p.tensor_mut("cln.out.weight").unwrap().iter_mut().for_each(|v| *v = 0.0);
    p.tensor_mut("cln.out.bias").unwrap().iter_mut().for_each(|v| *v = 0.0);
    let ds = glyphs(2, 4);
    let t = Task {
        support: vec![example(&ds, 0, 1), example(&ds, 1, 1)],
        query: vec![example(&ds, 2, 1)],
        cluster_id: 1,
    };
    let out = inner_update_meml(&p, &t, 0.1).unwrap();
    let w = out.tensor("cln.out.weight").unwrap();
    assert!((w[0] + 0.05).abs() < 1e-15 && (w[1] - 0.05).abs() < 1e-15, "{w:?}");
}

#[test]
fn oml_matches_unrolled_linear_sgd() {
    let arch = ArchConfig {
        cln_hidden: 0,
        ..tiny(3)
    };
    let ds = glyphs(3, 8);
    let p = jittered(&arch, 4);
    let t = task(&ds, 2, 1);
    let out = inner_update_oml(&p, &t, 0.3).unwrap();
    // plain softmax-regression SGD on the extracted features
    let feats = fen_forward(&p, &t.support.iter().map(|e| e.x.clone()).collect::<Vec<_>>()).unwrap();
    let mut w = p.tensor("cln.out.weight").unwrap().to_vec();
    let mut b = p.tensor("cln.out.bias").unwrap().to_vec();
    let f = arch.feature_dim;
    for (k, e) in t.support.iter().enumerate() {
        let x = feats.row(k);
        let z: Vec<f64> = (0..3).map(|c| b[c] + (0..f).map(|j| w[c * f + j] * x[j]).sum::<f64>()).collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
        for c in 0..3 {
            let g = (z[c] - m).exp() / s - if c == e.y { 1.0 } else { 0.0 };
            b[c] -= 0.3 * g;
            for j in 0..f {
                w[c * f + j] -= 0.3 * g * x[j];
            }
        }
    }
    for (a, c) in out.tensor("cln.out.weight").unwrap().iter().zip(&w) {
        assert!((a - c).abs() < 1e-12);
    }
    for (a, c) in out.tensor("cln.out.bias").unwrap().iter().zip(&b) {
        assert!((a - c).abs() < 1e-12);
    }
}

#[test]
fn singleton_support_agrees_across_variants() {
    let ds = glyphs(3, 6);
    let p = jittered(&tiny(3), 2);
    let mut t = task(&ds, 0, 0);
    t.support.truncate(1);
    let meml = inner_update_meml(&p, &t, 0.2).unwrap();
    let oml = inner_update_oml(&p, &t, 0.2).unwrap();
    let single = inner_update_single(&p, &t, 0.2, 9).unwrap();
    assert_eq!(meml.values, oml.values);
    assert_eq!(oml.values, single.values);
}

#[test]
fn single_update_on_duplicates_ignores_choice() {
    let ds = glyphs(3, 6);
    let p = jittered(&tiny(3), 2);
    let mut t = task(&ds, 0, 0);
    let first = t.support[0].clone();
    t.support.iter_mut().for_each(|e| *e = first.clone());
    let a = inner_update_single(&p, &t, 0.2, 1).unwrap();
    for seed in 2..6 {
        assert_eq!(inner_update_single(&p, &t, 0.2, seed).unwrap().values, a.values);
    }
}

#[test]
fn step_counts_per_algorithm() {
    let ds = glyphs(3, 9);
    let p = init_params(&tiny(3), 1).unwrap();
    let t = task(&ds, 0, 0);
    let k = t.support.len();
    assert_eq!(inner_update(&p, &t, Algorithm::Meml, 0.1, 0).unwrap().steps, 1);
    assert_eq!(inner_update(&p, &t, Algorithm::Oml, 0.1, 0).unwrap().steps, k);
    assert_eq!(inner_update(&p, &t, Algorithm::OmlSingle, 0.1, 0).unwrap().steps, 1);
}

#[test]
fn empty_sets_are_task_errors() {
    let ds = glyphs(3, 6);
    let p = init_params(&tiny(3), 1).unwrap();
    let mut t = task(&ds, 0, 0);
    let full = t.clone();
    t.support.clear();
    assert!(matches!(inner_update_meml(&p, &t, 0.1), Err(crate::Error::Task(_))));
    let inner = inner_update(&p, &full, Algorithm::Meml, 0.1, 0).unwrap();
    let mut q = full.clone();
    q.query.clear();
    assert!(matches!(
        meta_gradient(&p, &inner, &q, GradientOrder::Second, 1.0),
        Err(crate::Error::Task(_))
    ));
}

#[test]
fn zero_outer_lr_leaves_phi_unchanged() {
    let ds = glyphs(3, 6);
    let p = init_params(&tiny(3), 1).unwrap();
    let t = task(&ds, 0, 0);
    let inner = inner_update(&p, &t, Algorithm::Meml, 0.1, 0).unwrap();
    let mut adam = Adam::new(p.len(), 0.0);
    let out = outer_update(&p, &inner, &t, GradientOrder::Second, &mut adam, 1.0).unwrap();
    assert_eq!(out.params.values, p.values);
}

#[test]
fn orders_coincide_without_inner_step() {
    let ds = glyphs(3, 6);
    let p = jittered(&tiny(3), 1);
    let t = task(&ds, 1, 0);
    for alg in [Algorithm::Meml, Algorithm::Oml] {
        let inner = inner_update(&p, &t, alg, 0.0, 0).unwrap();
        let a = meta_gradient(&p, &inner, &t, GradientOrder::First, 1.0).unwrap();
        let b = meta_gradient(&p, &inner, &t, GradientOrder::Second, 1.0).unwrap();
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert!((x - y).abs() <= 1e-8);
        }
    }
}

fn composed_loss(p: &ParameterBundle, t: &Task, alg: Algorithm, lr: f64) -> f64 {
    let adapted = inner_update(p, t, alg, lr, 7).unwrap().params;
    let xs: Vec<Arc<[f64]>> = t.query.iter().map(|e| e.x.clone()).collect();
    let r = fen_forward(&adapted, &xs).unwrap();
    let n = t.query.len() as f64;
    t.query
        .iter()
        .enumerate()
        .map(|(i, e)| cross_entropy(&cln_forward(&adapted, r.row(i)).unwrap(), e.y))
        .sum::<f64>()
        / n
}

fn check_meta_gradient(alg: Algorithm, seed: u64) {
    let ds = glyphs(3, 7);
    let p = jittered(&tiny(3), seed);
    let t = task(&ds, (seed % 3) as usize, seed);
    let lr = 0.5;
    let inner = inner_update(&p, &t, alg, lr, 7).unwrap();
    let g = meta_gradient(&p, &inner, &t, GradientOrder::Second, 1.0).unwrap();
    let fd = |i: usize, h: f64| {
        let mut a = p.clone();
        let mut b = p.clone();
        a.values[i] += h;
        b.values[i] -= h;
        (composed_loss(&a, &t, alg, lr) - composed_loss(&b, &t, alg, lr)) / (2.0 * h)
    };
    let mut checked = 0;
    for i in 0..p.len() {
        let (coarse, fine) = (fd(i, 1e-4), fd(i, 1e-6));
        if (coarse - fine).abs() > 1e-5 * (1.0 + fine.abs()) {
            continue;
        }
        checked += 1;
        // absolute floor: differences of O(1) losses carry ~1e-10 rounding noise
        let scale = fine.abs().max(g.grad[i].abs());
        assert!((fine - g.grad[i]).abs() <= 1e-4 * scale + 1e-8, "{alg:?} param {i}: fd {fine} vs {}", g.grad[i]);
    }
    assert!(checked * 10 >= p.len() * 9);
}

#[test]
fn meml_second_order_gradient_matches_finite_differences() {
    check_meta_gradient(Algorithm::Meml, 1);
}

#[test]
fn oml_second_order_gradient_matches_finite_differences() {
    check_meta_gradient(Algorithm::Oml, 2);
}

fn equal_clusters() -> (Dataset, ClusterAssignment) {
    let ds = glyphs(4, 6);
    let a = ClusterAssignment::from_labels(ds.labels().to_vec()).unwrap();
    (ds, a)
}

fn short_config(alg: Algorithm) -> TrainingConfig {
    TrainingConfig {
        steps: 6,
        algorithm: alg,
        outer_lr: 1e-3,
        inner_lr: 0.1,
        seed: 11,
        ..TrainingConfig::default()
    }
}

#[test]
fn one_step_consumes_one_task() {
    let (ds, a) = equal_clusters();
    let cfg = TrainingConfig { steps: 1, ..short_config(Algorithm::Meml) };
    let (_, log) = meta_train(&ds, TaskSource::Unbalanced { assignment: &a, q_random: 3 }, &tiny(4), &cfg).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log.inner_steps, 1);
}

#[test]
fn training_is_deterministic() {
    let (ds, a) = equal_clusters();
    let src = TaskSource::Unbalanced { assignment: &a, q_random: 3 };
    for alg in [Algorithm::Meml, Algorithm::OmlSingle] {
        let cfg = TrainingConfig {
            rehearsal_train: RehearsalTrain::Coreset { capacity: 10 },
            ..short_config(alg)
        };
        let (p1, l1) = meta_train(&ds, src, &tiny(4), &cfg).unwrap();
        let (p2, l2) = meta_train(&ds, src, &tiny(4), &cfg).unwrap();
        assert_eq!(p1.values, p2.values);
        let losses = |l: &TrainLog| l.entries.iter().map(|e| (e.cluster_id, e.outer_loss)).collect::<Vec<_>>();
        assert_eq!(losses(&l1), losses(&l2));
    }
}

#[test]
fn oml_takes_support_size_steps() {
    let (ds, a) = equal_clusters();
    let (_, log) = meta_train(
        &ds,
        TaskSource::Unbalanced { assignment: &a, q_random: 3 },
        &tiny(4),
        &short_config(Algorithm::Oml),
    )
    .unwrap();
    // 6 members per cluster: support of 4
    assert_eq!(log.inner_steps, 6 * 4);
}

#[test]
fn unit_balancing_weights_change_nothing() {
    let (ds, a) = equal_clusters();
    let src = TaskSource::Unbalanced { assignment: &a, q_random: 3 };
    let plain = short_config(Algorithm::Meml);
    let balanced = TrainingConfig {
        loss_balancing: true,
        ..plain.clone()
    };
    let (p1, l1) = meta_train(&ds, src, &tiny(4), &plain).unwrap();
    let (p2, l2) = meta_train(&ds, src, &tiny(4), &balanced).unwrap();
    assert_eq!(p1.values, p2.values);
    for (a, b) in l1.entries.iter().zip(&l2.entries) {
        assert_eq!((a.cluster_id, a.outer_loss), (b.cluster_id, b.outer_loss));
    }
}

#[test]
fn zero_learning_rates_are_noops_end_to_end() {
    let (ds, a) = equal_clusters();
    let cfg = TrainingConfig {
        inner_lr: 0.0,
        outer_lr: 0.0,
        w_reset: WReset::Keep,
        ..short_config(Algorithm::Meml)
    };
    let start = init_params(&tiny(4), 5).unwrap();
    let (p, _) = meta_train_from(start.clone(), &ds, TaskSource::Unbalanced { assignment: &a, q_random: 3 }, &cfg).unwrap();
    assert_eq!(p.values, start.values);
}

#[test]
fn uniform_attention_reduces_meml_to_mean() {
    let (ds, a) = equal_clusters();
    let mut start = init_params(&tiny(4), 5).unwrap();
    for name in ["attention.fc1.weight", "attention.fc1.bias", "attention.fc2.weight"] {
        start.tensor_mut(name).unwrap().iter_mut().for_each(|v| *v = 0.0);
    }
    let src = TaskSource::Unbalanced { assignment: &a, q_random: 3 };
    let run = |alg| {
        let cfg = TrainingConfig {
            gradient_order: GradientOrder::First,
            ..short_config(alg)
        };
        meta_train_from(start.clone(), &ds, src, &cfg).unwrap()
    };
    let (p1, l1) = run(Algorithm::Meml);
    let (p2, l2) = run(Algorithm::MemlMean);
    for (x, y) in l1.entries.iter().zip(&l2.entries) {
        assert_eq!((x.cluster_id, x.outer_loss), (y.cluster_id, y.outer_loss));
    }
    let att = p1.layout.head_range().start..p1.layout.head_range().start + p1.layout.offsets.head_layout.cln1_w;
    for i in 0..p1.len() {
        if !att.contains(&i) {
            assert_eq!(p1.values[i], p2.values[i], "param {i}");
        }
    }
}

#[test]
fn output_row_reset_restarts_adam_for_that_row() {
    let (ds, a) = equal_clusters();
    let cfg = TrainingConfig { steps: 1, ..short_config(Algorithm::Meml) };
    let start = init_params(&tiny(4), 5).unwrap();
    let (p, log) = meta_train_from(start.clone(), &ds, TaskSource::Unbalanced { assignment: &a, q_random: 3 }, &cfg).unwrap();
    let c = log.entries[0].cluster_id;
    let (w, _) = p.layout.output_row(c);
    assert_ne!(&p.values[w.clone()], &start.values[w]);
}

#[test]
fn too_many_clusters_for_outputs_is_config_error() {
    let (ds, a) = equal_clusters();
    let r = meta_train(&ds, TaskSource::Unbalanced { assignment: &a, q_random: 3 }, &tiny(3), &short_config(Algorithm::Meml));
    assert!(matches!(r, Err(crate::Error::Config(_))));
}

#[test]
fn augmented_and_balanced_sources_train() {
    let (ds, a) = equal_clusters();
    for src in [
        TaskSource::Augmented { assignment: &a, target: 9, q_random: 3 },
        TaskSource::Balanced {
            assignment: &a,
            n_support: 3,
            n_query_same: 2,
            n_query_random: 3,
        },
    ] {
        let (p, log) = meta_train(&ds, src, &tiny(4), &short_config(Algorithm::Meml)).unwrap();
        assert_eq!(log.len(), 6);
        assert!(p.is_finite());
    }
}

#[test]
fn log_csv_has_header_and_rows() {
    let (ds, a) = equal_clusters();
    let cfg = TrainingConfig { steps: 2, ..short_config(Algorithm::Meml) };
    let (_, log) = meta_train(&ds, TaskSource::Unbalanced { assignment: &a, q_random: 3 }, &tiny(4), &cfg).unwrap();
    let csv = log.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,cluster_id,outer_loss,wall_ms");
    assert_eq!(lines.len(), 3);
}
