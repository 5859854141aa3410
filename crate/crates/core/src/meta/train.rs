//! The meta-training loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::{RehearsalTrain, TrainingConfig, WReset};
use super::update::{inner_update, outer_update};
use crate::data_io::{Dataset, LabeledExample};
use crate::network::{init_params, ArchConfig, ParamGroup, ParameterBundle};
use crate::replay::ReservoirBuffer;
use crate::rng::{derive, seeded, Rng};
use crate::tasks::{
    augment_to_size, compute_balancing_vector, make_balanced_task_from_assignment, make_unbalanced_task,
    BalancingVector, ClusterAssignment, Task,
};
use crate::{Error, Result};

/// Where meta-training tasks come from.
#[derive(Debug, Clone, Copy)]
pub enum TaskSource<'a> {
    /// Whole clusters, split two thirds support / one third query.
    Unbalanced { assignment: &'a ClusterAssignment, q_random: usize },
    /// Fixed-size tasks, e.g. over a truncated assignment or true labels.
    Balanced {
        assignment: &'a ClusterAssignment,
        n_support: usize,
        n_query_same: usize,
        n_query_random: usize,
    },
    /// Every cluster brought to `target` examples by augmentation or subsampling.
    Augmented {
        assignment: &'a ClusterAssignment,
        target: usize,
        q_random: usize,
    },
}

impl TaskSource<'_> {
    fn assignment(&self) -> &ClusterAssignment {
        match self {
            TaskSource::Unbalanced { assignment, .. }
            | TaskSource::Balanced { assignment, .. }
            | TaskSource::Augmented { assignment, .. } => assignment,
        }
    }

    fn min_size(&self) -> usize {
        match self {
            TaskSource::Balanced {
                n_support, n_query_same, ..
            } => (n_support + n_query_same).max(2),
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub cluster_id: usize,
    pub outer_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    /// ψ gradient steps taken, summed over tasks.
    pub inner_steps: usize,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean_step_ms(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.wall_ms).sum::<f64>() / self.entries.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,cluster_id,outer_loss,wall_ms\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{:.3}\n", e.step, e.cluster_id, e.outer_loss, e.wall_ms));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

fn task_from_examples(groups: &[Vec<LabeledExample>], cluster: usize, q_random: usize, seed: u64) -> Task {
    let mut rng = seeded(seed);
    let mut members = groups[cluster].clone();
    members.shuffle(&mut rng);
    let n_support = crate::tasks::support_size(members.len());
    let query_same = members.split_off(n_support);
    let mut others: Vec<&LabeledExample> = groups
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != cluster)
        .flat_map(|(_, m)| m.iter())
        .collect();
    let take = q_random.min(others.len());
    let (chosen, _) = others.partial_shuffle(&mut rng, take);
    let mut query = query_same;
    query.extend(chosen.iter().map(|e| (*e).clone()));
    Task {
        support: members,
        query,
        cluster_id: cluster,
    }
}

fn reset_classifier(params: &mut ParameterBundle, adam: &mut Adam, mode: WReset, label: usize, rng: &mut Rng) {
    match mode {
        WReset::Keep => {}
        WReset::OutputRow => {
            params.reset_output_row(label, rng);
            let (w, b) = params.layout.output_row(label);
            adam.reset(w);
            adam.reset(b..b + 1);
        }
        WReset::Full => {
            let fresh = init_params(&params.arch, rng.random()).expect("architecture already validated");
            for t in params.layout.group(ParamGroup::Cln) {
                params.values[t.range()].copy_from_slice(&fresh.values[t.range()]);
                adam.reset(t.range());
            }
        }
    }
}

/// Meta-trains freshly initialised parameters (seeded by `config.seed`).
pub fn meta_train(
    dataset: &Dataset,
    source: TaskSource<'_>,
    arch: &ArchConfig,
    config: &TrainingConfig,
) -> Result<(ParameterBundle, TrainLog)> {
    let params = init_params(arch, derive(config.seed, 0))?;
    meta_train_from(params, dataset, source, config)
}

/// Meta-trains starting from `params`.
///
/// Each step samples a cluster uniformly among those large enough, resets
/// the classifier per `config.w_reset`, runs the inner loop and one Adam
/// step on the query loss. Deterministic given `config.seed`.
pub fn meta_train_from(
    mut params: ParameterBundle,
    dataset: &Dataset,
    source: TaskSource<'_>,
    config: &TrainingConfig,
) -> Result<(ParameterBundle, TrainLog)> {
    config.validate()?;
    let assignment = source.assignment();
    if assignment.indices.iter().any(|&i| i >= dataset.len()) {
        return Err(Error::Validation("assignment refers to examples outside the dataset".into()));
    }
    if assignment.k() > params.arch.num_outputs {
        return Err(Error::Config(format!(
            "{} clusters but the classifier has {} outputs",
            assignment.k(),
            params.arch.num_outputs
        )));
    }
    let usable: Vec<usize> = (0..assignment.k())
        .filter(|&c| assignment.sizes[c] >= source.min_size())
        .collect();
    if usable.is_empty() {
        return Err(Error::Task("no cluster is large enough to build a task".into()));
    }
    if usable.len() < assignment.k() {
        warn!(
            "{} of {} clusters too small for a task, skipped",
            assignment.k() - usable.len(),
            assignment.k()
        );
    }
    let balancing: Option<BalancingVector> = if config.loss_balancing {
        Some(compute_balancing_vector(&assignment.sizes, config.balancing_epsilon)?)
    } else {
        None
    };
    let augmented: Option<Vec<Vec<LabeledExample>>> = match source {
        TaskSource::Augmented { target, .. } => {
            let groups = assignment.groups();
            let mut out = Vec::with_capacity(groups.len());
            for (c, members) in groups.iter().enumerate() {
                let ex: Vec<LabeledExample> = members
                    .iter()
                    .map(|&i| LabeledExample {
                        y: c,
                        ..dataset.example(i)
                    })
                    .collect();
                out.push(if ex.is_empty() {
                    ex
                } else {
                    augment_to_size(&ex, target, dataset.shape(), derive(config.seed, 1000 + c as u64))?
                });
            }
            Some(out)
        }
        _ => None,
    };

    let mut task_rng = seeded(derive(config.seed, 1));
    let mut w_rng = seeded(derive(config.seed, 2));
    let mut adam = Adam::new(params.len(), config.outer_lr);
    let mut coreset = match config.rehearsal_train {
        RehearsalTrain::Off => None,
        RehearsalTrain::Coreset { capacity } => Some(ReservoirBuffer::new(capacity, derive(config.seed, 3))?),
    };
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let at = |e: Error| Error::AtStep {
            step,
            source: Box::new(e),
        };
        let cluster = usable[task_rng.random_range(0..usable.len())];
        let task_seed: u64 = task_rng.random();
        let mut task = match (source, &augmented) {
            (TaskSource::Unbalanced { q_random, .. }, _) => {
                make_unbalanced_task(assignment, dataset, cluster, q_random, task_seed)
            }
            (
                TaskSource::Balanced {
                    n_support,
                    n_query_same,
                    n_query_random,
                    ..
                },
                _,
            ) => make_balanced_task_from_assignment(
                assignment,
                dataset,
                cluster,
                n_support,
                n_query_same,
                n_query_random,
                task_seed,
            ),
            (TaskSource::Augmented { q_random, .. }, Some(groups)) => Ok(task_from_examples(groups, cluster, q_random, task_seed)),
            (TaskSource::Augmented { .. }, None) => unreachable!("augmented groups built above"),
        }
        .map_err(at)?;
        let fresh: Vec<LabeledExample> = if coreset.is_some() {
            task.support
                .iter()
                .chain(task.query.iter().filter(|e| e.y == cluster))
                .cloned()
                .collect()
        } else {
            Vec::new()
        };
        if let Some(buf) = &coreset {
            if !buf.is_empty() {
                task.query = buf.batch(task.query.len(), derive(task_seed, 1)).map_err(at)?;
            }
        }
        task.validate().map_err(at)?;

        let started = Instant::now();
        reset_classifier(&mut params, &mut adam, config.w_reset, cluster, &mut w_rng);
        let inner = inner_update(&params, &task, config.algorithm, config.inner_lr, derive(task_seed, 2)).map_err(at)?;
        let weight = match &balancing {
            Some(b) => b.weight(cluster).map_err(at)?,
            None => 1.0,
        };
        let outer = outer_update(&params, &inner, &task, config.gradient_order, &mut adam, weight).map_err(at)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        params = outer.params;
        if !params.is_finite() {
            return Err(at(Error::Validation("parameters became non-finite".into())));
        }
        if let Some(buf) = &mut coreset {
            for e in fresh {
                buf.insert(e);
            }
        }
        log.inner_steps += inner.steps;
        log.entries.push(LogEntry {
            step,
            cluster_id: cluster,
            outer_loss: outer.loss,
            wall_ms,
        });
        if step % 100 == 0 {
            debug!("step {step} cluster {cluster} loss {:.4} ({wall_ms:.1} ms)", outer.loss);
        }
    }
    Ok((params, log))
}
