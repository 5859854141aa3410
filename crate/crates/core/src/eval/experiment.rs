//! End-to-end experiment driver.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, EmbeddingSpec, ExperimentConfig, OodKind, ResolvedVariant, TaskMode};
use super::protocol::{meta_test, ood_evaluate, AccuracyCurve};
use crate::data_io::{embed_dataset_baseline, generate_synthetic_glyphs, load_embeddings, load_image_folder, Dataset, Split};
use crate::meta::{meta_train, TaskSource, TrainingConfig};
use crate::network::{ArchConfig, ParameterBundle};
use crate::rng::derive;
use crate::tasks::{compute_balancing_vector, kmeans_partition, truncate_to_balanced, ClusterAssignment};
use crate::{par, Error, Result};

/// Outcome of one (variant, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub k: usize,
    pub seed: u64,
    pub curve: Option<AccuracyCurve>,
    pub ood_curve: Option<AccuracyCurve>,
    pub train_steps: usize,
    pub inner_steps: usize,
    pub step_ms_mean: f64,
    pub final_train_loss: Option<f64>,
    pub train_seconds: f64,
    pub checkpoint: Option<PathBuf>,
    /// Set when any stage failed; the other fields are then partial.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub wall_seconds: f64,
}

impl ResultsRecord {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.error.is_some())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Meta-train and meta-test splits (plus the optional OoD set).
pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
    pub ood: Option<Dataset>,
}

pub fn load_datasets(config: &ExperimentConfig) -> Result<Datasets> {
    let (train, test) = match &config.dataset {
        DatasetSpec::Glyphs {
            train_classes,
            test_classes,
            samples_per_class,
            image_size,
            seed,
        } => {
            let all = generate_synthetic_glyphs(train_classes + test_classes, *samples_per_class, *image_size, *seed)?;
            let tr: Vec<usize> = (0..*train_classes).collect();
            let te: Vec<usize> = (*train_classes..train_classes + test_classes).collect();
            (
                all.select_classes(&tr, Split::MetaTrain)?,
                all.select_classes(&te, Split::MetaTest)?,
            )
        }
        DatasetSpec::Folder {
            train_dir,
            test_dir,
            channels,
            image_size,
        } => (
            load_image_folder(train_dir, *channels, *image_size, Split::MetaTrain)?,
            load_image_folder(test_dir, *channels, *image_size, Split::MetaTest)?,
        ),
    };
    let ood = match &config.ood {
        None => None,
        Some(spec) => Some(match spec.kind {
            OodKind::InvertedTest => test.map_images(|x| x.iter().map(|p| 1.0 - p).collect())?,
            OodKind::Folder => {
                let dir = spec.dir.as_ref().ok_or_else(|| Error::Config("ood folder needs dir".into()))?;
                load_image_folder(dir, spec.channels, None, Split::MetaTest)?
            }
        }),
    };
    Ok(Datasets { train, test, ood })
}

fn assignment_for(config: &ExperimentConfig, train: &Dataset, tasks: TaskMode, seed: u64) -> Result<ClusterAssignment> {
    if tasks == TaskMode::Oracle {
        return ClusterAssignment::from_labels(train.labels().to_vec());
    }
    let emb = match &config.embedding {
        EmbeddingSpec::Baseline { dim } => embed_dataset_baseline(train, *dim, derive(seed, 10))?,
        EmbeddingSpec::File { path } => {
            let e = load_embeddings(path)?;
            if e.rows() != train.len() {
                return Err(Error::Validation(format!(
                    "{} embeddings for {} meta-train images",
                    e.rows(),
                    train.len()
                )));
            }
            e
        }
    };
    let c = &config.clustering;
    let a = kmeans_partition(&emb, c.k, derive(seed, 11), c.max_iters)?;
    if tasks == TaskMode::Balanced {
        truncate_to_balanced(&a, c.truncate, derive(seed, 12))
    } else {
        Ok(a)
    }
}

/// Architecture with enough outputs for the clusters and the test classes.
pub fn resolve_arch(config: &ExperimentConfig, clusters: usize, test_classes: usize) -> ArchConfig {
    let mut arch = config.network.clone();
    arch.num_outputs = arch.num_outputs.max(clusters).max(test_classes);
    arch
}

struct Trained {
    params: ParameterBundle,
    k: usize,
    steps: usize,
    inner_steps: usize,
    step_ms_mean: f64,
    final_loss: Option<f64>,
    seconds: f64,
}

fn run_dir(out: &Path, variant: &str, seed: u64) -> PathBuf {
    out.join(variant).join(format!("seed-{seed}"))
}

fn train_one(
    config: &ExperimentConfig,
    data: &Datasets,
    training: &TrainingConfig,
    tasks: TaskMode,
    seed: u64,
    dir: &Path,
) -> Result<Trained> {
    let started = Instant::now();
    let assignment = assignment_for(config, &data.train, tasks, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    assignment.write_csv(dir.join("clusters.csv"))?;
    let c = &config.clustering;
    let source = match tasks {
        TaskMode::Unbalanced => TaskSource::Unbalanced {
            assignment: &assignment,
            q_random: c.q_random,
        },
        TaskMode::Balanced | TaskMode::Oracle => TaskSource::Balanced {
            assignment: &assignment,
            n_support: c.n_support,
            n_query_same: c.n_query_same,
            n_query_random: c.n_query_random,
        },
        TaskMode::Augmented => TaskSource::Augmented {
            assignment: &assignment,
            target: c.augment_target,
            q_random: c.q_random,
        },
    };
    if training.loss_balancing {
        compute_balancing_vector(&assignment.sizes, training.balancing_epsilon)?.write_csv(dir.join("balancing.csv"))?;
    }
    let arch = resolve_arch(config, assignment.k(), data.test.num_classes());
    let cfg = TrainingConfig {
        seed,
        ..training.clone()
    };
    let (params, log) = meta_train(&data.train, source, &arch, &cfg)?;
    log.write_csv(dir.join("train_log.csv"))?;
    let tail = log.entries.len().min(100);
    let final_loss = (tail > 0).then(|| {
        log.entries[log.entries.len() - tail..]
            .iter()
            .map(|e| e.outer_loss)
            .sum::<f64>()
            / tail as f64
    });
    Ok(Trained {
        params,
        k: assignment.k(),
        steps: log.len(),
        inner_steps: log.inner_steps,
        step_ms_mean: log.mean_step_ms(),
        final_loss,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn evaluate_one(
    config: &ExperimentConfig,
    data: &Datasets,
    variant: &ResolvedVariant,
    trained: &Trained,
    seed: u64,
    dir: &Path,
) -> Result<(AccuracyCurve, Option<AccuracyCurve>, Option<PathBuf>)> {
    let n = config.test_class_count().unwrap_or(data.test.num_classes()).min(data.test.num_classes());
    let classes: Vec<usize> = (0..n).collect();
    let mt = &config.meta_test;
    let mut curve = meta_test(
        &trained.params,
        &data.test,
        &classes,
        mt.shots,
        &mt.fine_tune,
        variant.rehearsal,
        derive(seed, 20),
    )?;
    curve.variant = variant.name.clone();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("curve.json"), &curve)?;
    let ood = match (&data.ood, &config.ood) {
        (Some(ds), Some(spec)) => {
            let m = spec.classes.unwrap_or(ds.num_classes()).min(ds.num_classes());
            let cls: Vec<usize> = (0..m).collect();
            let mut c = ood_evaluate(&trained.params, ds, &cls, mt.shots, &mt.fine_tune, derive(seed, 21))?;
            c.variant = variant.name.clone();
            write_json(&dir.join("ood_curve.json"), &c)?;
            Some(c)
        }
        _ => None,
    };
    let ckpt = if config.output.checkpoints {
        let p = dir.join("checkpoint.ckpt");
        trained.params.save(&p)?;
        Some(p)
    } else {
        None
    };
    Ok((curve, ood, ckpt))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every (variant, seed) pair and persists their artifacts under `output.dir`.
///
/// Variants whose training settings coincide share one meta-training run per
/// seed. Independent trainings run in parallel. A failing pair is recorded
/// with its error and does not stop the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsRecord> {
    config.validate()?;
    let started = Instant::now();
    let out = &config.output.dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let snapshot = out.join("config.toml");
    std::fs::write(&snapshot, config.to_toml()).map_err(|e| Error::io(&snapshot, e))?;
    let data = load_datasets(config)?;
    let variants = config.variants();

    // one training job per distinct (training settings, task mode, seed)
    let mut jobs: Vec<(usize, u64)> = Vec::new();
    let mut job_of = vec![vec![0usize; config.seeds.len()]; variants.len()];
    for (vi, v) in variants.iter().enumerate() {
        for (si, &seed) in config.seeds.iter().enumerate() {
            let same = jobs.iter().position(|&(vj, s)| {
                s == seed && variants[vj].training == v.training && variants[vj].tasks == v.tasks
            });
            job_of[vi][si] = same.unwrap_or_else(|| {
                jobs.push((vi, seed));
                jobs.len() - 1
            });
        }
    }
    info!("{} variant(s), {} seed(s), {} training run(s)", variants.len(), config.seeds.len(), jobs.len());
    let trained: Vec<Result<Trained>> = par::map_slice(&jobs, |&(vi, seed)| {
        let v = &variants[vi];
        let dir = run_dir(out, &v.name, seed);
        let r = train_one(config, &data, &v.training, v.tasks, seed, &dir);
        if let Err(e) = &r {
            warn!("variant {} seed {seed}: training failed: {e}", v.name);
        }
        r
    });

    let mut runs = Vec::new();
    for (vi, v) in variants.iter().enumerate() {
        for (si, &seed) in config.seeds.iter().enumerate() {
            let dir = run_dir(out, &v.name, seed);
            let mut rec = RunRecord {
                variant: v.name.clone(),
                k: config.clustering.k,
                seed,
                curve: None,
                ood_curve: None,
                train_steps: 0,
                inner_steps: 0,
                step_ms_mean: 0.0,
                final_train_loss: None,
                train_seconds: 0.0,
                checkpoint: None,
                error: None,
            };
            match &trained[job_of[vi][si]] {
                Err(e) => rec.error = Some(e.to_string()),
                Ok(t) => {
                    rec.k = t.k;
                    rec.train_steps = t.steps;
                    rec.inner_steps = t.inner_steps;
                    rec.step_ms_mean = t.step_ms_mean;
                    rec.final_train_loss = t.final_loss;
                    rec.train_seconds = t.seconds;
                    match evaluate_one(config, &data, v, t, seed, &dir) {
                        Ok((c, o, ck)) => {
                            rec.curve = Some(c);
                            rec.ood_curve = o;
                            rec.checkpoint = ck;
                        }
                        Err(e) => {
                            warn!("variant {} seed {seed}: evaluation failed: {e}", v.name);
                            rec.error = Some(e.to_string());
                        }
                    }
                }
            }
            runs.push(rec);
        }
    }
    let record = ResultsRecord {
        config: config.clone(),
        runs,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    record.save(out.join("results.json"))?;
    Ok(record)
}
