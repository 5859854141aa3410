//! Fast invariant checks behind `fusion selftest`.

use std::sync::Arc;

use rand::Rng;

use crate::data_io::{generate_synthetic_glyphs, LabeledExample};
use crate::eval::{meta_test, FineTuneConfig};
use crate::meta::{inner_update, meta_gradient, Algorithm, GradientOrder};
use crate::network::{
    attention_pool, cln_forward, cross_entropy, fen_forward, init_params, ArchConfig, FeatureBatch, ParamGroup,
    ParameterBundle,
};
use crate::replay::ReservoirBuffer;
use crate::rng::seeded;
use crate::tasks::{compute_balancing_vector, make_unbalanced_task, ClusterAssignment, Task};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: std::result::Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check { name, passed: true, detail },
        Err(detail) => Check { name, passed: false, detail },
    }
}

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

fn attention() -> std::result::Result<String, String> {
    let arch = tiny(3);
    let mut rng = seeded(1);
    for draw in 0..200u64 {
        let p = init_params(&arch, draw).map_err(|e| e.to_string())?;
        let k = rng.random_range(1..12);
        let data: Vec<f64> = (0..k * 4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let r = FeatureBatch::new(k, 4, data).map_err(|e| e.to_string())?;
        let m = attention_pool(&p, &r).map_err(|e| e.to_string())?;
        let sum: f64 = m.alpha.iter().sum();
        if m.alpha.iter().any(|a| *a < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(format!("draw {draw}: weights sum to {sum}"));
        }
        for j in 0..4 {
            let col = (0..k).map(|i| r.row(i)[j]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            if m.me[j] < lo - 1e-12 || m.me[j] > hi + 1e-12 {
                return Err(format!("draw {draw}: coordinate {j} outside the batch range"));
            }
        }
    }
    Ok("200 draws".into())
}

fn balancing() -> std::result::Result<String, String> {
    let b = compute_balancing_vector(&[10, 20, 30], 1e-8).map_err(|e| e.to_string())?;
    let want = [1.0, 5e-10, 0.0];
    if b.gamma_norm.iter().zip(want).any(|(g, w)| (g - w).abs() > 1e-6) {
        return Err(format!("{:?}", b.gamma_norm));
    }
    let eq = compute_balancing_vector(&[7, 7, 7], 1e-8).map_err(|e| e.to_string())?;
    if eq.gamma_norm.iter().any(|g| *g != 1.0) {
        return Err(format!("equal sizes gave {:?}", eq.gamma_norm));
    }
    Ok(format!("{:?}", b.gamma_norm))
}

/// Chi-square statistic for slot inclusion counts; 63 degrees of freedom
/// has a 1% critical value of 92.01.
fn reservoir() -> std::result::Result<String, String> {
    let trials = 2000;
    let mut counts = [0usize; 64];
    let x: Arc<[f64]> = Arc::from(vec![0.0]);
    for t in 0..trials {
        let mut buf = ReservoirBuffer::new(8, t).map_err(|e| e.to_string())?;
        for i in 0..64 {
            buf.insert(LabeledExample { x: x.clone(), y: i, origin: None });
        }
        for item in buf.items() {
            counts[item.y] += 1;
        }
    }
    let expected = trials as f64 * 8.0 / 64.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    if chi2 > 92.01 {
        return Err(format!("chi-square {chi2:.2} over 63 dof"));
    }
    Ok(format!("chi-square {chi2:.2}"))
}

fn composed_loss(p: &ParameterBundle, t: &Task, lr: f64) -> f64 {
    let adapted = inner_update(p, t, Algorithm::Meml, lr, 0).expect("inner update").params;
    let xs: Vec<Arc<[f64]>> = t.query.iter().map(|e| e.x.clone()).collect();
    let r = fen_forward(&adapted, &xs).expect("forward");
    t.query
        .iter()
        .enumerate()
        .map(|(i, e)| cross_entropy(&cln_forward(&adapted, r.row(i)).expect("classifier"), e.y))
        .sum::<f64>()
        / t.query.len() as f64
}

fn gradient() -> std::result::Result<String, String> {
    let ds = generate_synthetic_glyphs(3, 7, 8, 3).map_err(|e| e.to_string())?;
    let a = ClusterAssignment::from_labels(ds.labels().to_vec()).map_err(|e| e.to_string())?;
    let t = make_unbalanced_task(&a, &ds, 1, 4, 0).map_err(|e| e.to_string())?;
    let mut p = init_params(&tiny(3), 4).map_err(|e| e.to_string())?;
    let mut rng = seeded(104);
    p.values.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    let lr = 0.5;
    let inner = inner_update(&p, &t, Algorithm::Meml, lr, 0).map_err(|e| e.to_string())?;
    let g = meta_gradient(&p, &inner, &t, GradientOrder::Second, 1.0).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in p.layout.head_range().step_by(3) {
        let mut a = p.clone();
        let mut b = p.clone();
        a.values[i] += h;
        b.values[i] -= h;
        let fd = (composed_loss(&a, &t, lr) - composed_loss(&b, &t, lr)) / (2.0 * h);
        let err = (fd - g.grad[i]).abs() / (fd.abs().max(g.grad[i].abs()) + 1e-4);
        worst = worst.max(err);
    }
    if worst > 1e-4 {
        return Err(format!("relative error {worst:.2e}"));
    }
    Ok(format!("worst relative error {worst:.2e}"))
}

fn frozen() -> std::result::Result<String, String> {
    let ds = generate_synthetic_glyphs(4, 8, 8, 9).map_err(|e| e.to_string())?;
    let p = init_params(&tiny(4), 2).map_err(|e| e.to_string())?;
    let before = (p.checksum(ParamGroup::Fen), p.checksum(ParamGroup::Attention));
    for rehearsal in [false, true] {
        meta_test(&p, &ds, &[0, 1, 2, 3], 3, &FineTuneConfig::default(), rehearsal, 0).map_err(|e| e.to_string())?;
    }
    if (p.checksum(ParamGroup::Fen), p.checksum(ParamGroup::Attention)) != before {
        return Err("checksum changed".into());
    }
    Ok(format!("{:016x}", before.0))
}

fn determinism() -> std::result::Result<String, String> {
    let ds = generate_synthetic_glyphs(4, 8, 8, 9).map_err(|e| e.to_string())?;
    let p = init_params(&tiny(4), 2).map_err(|e| e.to_string())?;
    let run = || meta_test(&p, &ds, &[0, 1, 2, 3], 3, &FineTuneConfig::default(), true, 5).map_err(|e| e.to_string());
    if run()? != run()? {
        return Err("curves differ".into());
    }
    Ok("identical curves".into())
}

/// Runs every check; none of them panics on failure.
pub fn run_all() -> Vec<Check> {
    vec![
        check("attention weights", attention()),
        check("balancing vector", balancing()),
        check("reservoir uniformity", reservoir()),
        check("second-order gradient", gradient()),
        check("frozen representation", frozen()),
        check("determinism", determinism()),
    ]
}
