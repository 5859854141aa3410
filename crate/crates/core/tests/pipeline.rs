use fusion_core::data_io::generate_synthetic_glyphs;
use fusion_core::eval::{
    aggregate, emit_report, meta_test, read_results_csv, result_rows, run_experiment, ExperimentConfig, FineTuneConfig,
};
use fusion_core::network::{init_params, ArchConfig};

fn smoke(dir: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(include_str!("../../../configs/smoke.toml")).unwrap();
    c.output.dir = dir.to_path_buf();
    c
}

#[test]
fn two_seeds_give_two_curves_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.variants.truncate(1);
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.runs.len(), 2);
    assert!(r.runs.iter().all(|run| run.curve.is_some() && run.error.is_none()));
    for run in &r.runs {
        let d = dir.path().join(&run.variant).join(format!("seed-{}", run.seed));
        assert!(d.join("train_log.csv").is_file());
        assert!(d.join("curve.json").is_file());
    }
}

#[test]
fn rerun_reproduces_curves() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&smoke(a.path())).unwrap();
    let rb = run_experiment(&smoke(b.path())).unwrap();
    let curves = |r: &fusion_core::eval::ResultsRecord| r.runs.iter().map(|x| x.curve.clone()).collect::<Vec<_>>();
    assert_eq!(curves(&ra), curves(&rb));
}

#[test]
fn failing_seed_is_recorded_and_others_proceed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    // 48 meta-train images cannot fill 40 clusters of >= 2 after one balanced truncation
    cfg.variants[0].tasks = Some(fusion_core::eval::TaskMode::Balanced);
    cfg.clustering.truncate = 40;
    let r = run_experiment(&cfg).unwrap();
    let failed: Vec<_> = r.failures().collect();
    assert_eq!(failed.len(), 2, "{:?}", r.runs.iter().map(|x| &x.error).collect::<Vec<_>>());
    assert!(failed.iter().all(|f| f.variant == "meml"));
    assert!(r.runs.iter().filter(|x| x.variant == "oml").all(|x| x.curve.is_some()));
}

#[test]
fn report_rows_and_reaggregation() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_experiment(&smoke(dir.path())).unwrap();
    let files = emit_report(&r, dir.path()).unwrap();
    let rows = read_results_csv(&files.results_csv).unwrap();
    assert_eq!(rows, result_rows(&r));
    // reloaded rows aggregate to exactly what was plotted
    assert_eq!(aggregate(&rows), aggregate(&result_rows(&r)));
    assert_eq!(aggregate(&rows).len(), 2);
    let svg = std::fs::read_to_string(&files.plot).unwrap();
    assert!(svg.contains("meml") && svg.contains("oml"));
}

#[test]
fn one_curve_of_three_points_gives_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.variants.truncate(1);
    cfg.seeds = vec![4];
    cfg.meta_test.classes = Some(3);
    let r = run_experiment(&cfg).unwrap();
    let files = emit_report(&r, dir.path()).unwrap();
    let text = std::fs::read_to_string(files.results_csv).unwrap();
    assert_eq!(text.lines().count(), 4);
}

/// Untrained models sit at chance: across 20 seeds the mean final accuracy
/// is within three standard errors of 1/C.
#[test]
fn untrained_models_score_at_chance() {
    for c in [2usize, 10] {
        let ds = generate_synthetic_glyphs(c, 12, 12, 99).unwrap();
        let arch = ArchConfig {
            image_size: 12,
            conv_width: 4,
            conv_strides: [2, 1, 2, 1, 1, 1],
            trunk_hidden: 16,
            feature_dim: 8,
            cln_hidden: 16,
            num_outputs: c,
            ..ArchConfig::default()
        };
        let classes: Vec<usize> = (0..c).collect();
        let ft = FineTuneConfig { steps: 0, ..FineTuneConfig::default() };
        let finals: Vec<f64> = (0..20)
            .map(|s| {
                let p = init_params(&arch, 1000 + s).unwrap();
                meta_test(&p, &ds, &classes, 2, &ft, false, s).unwrap().final_accuracy().unwrap()
            })
            .collect();
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let chance = 1.0 / c as f64;
        // per-seed spread of a classifier guessing among c classes on m examples
        let m = (c * 10) as f64;
        let se = (chance * (1.0 - chance) / m / n).sqrt().max(
            (finals.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt(),
        );
        assert!((mean - chance).abs() <= 3.0 * se, "C={c}: mean {mean} vs {chance} (se {se})");
    }
}
