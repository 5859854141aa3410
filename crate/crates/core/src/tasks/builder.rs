use log::warn;
use rand::seq::SliceRandom;

use super::ClusterAssignment;
use crate::data_io::{Dataset, LabeledExample};
use crate::rng::seeded;
use crate::{Error, Result};

pub const DEFAULT_Q_RANDOM: usize = 10;
pub const DEFAULT_N_SUPPORT: usize = 10;
pub const DEFAULT_N_QUERY_SAME: usize = 5;
pub const DEFAULT_N_QUERY_RANDOM: usize = 10;

/// One episode: a support set drawn from a single cluster (inner loop) and
/// a query set mixing the rest of that cluster with random other-cluster
/// examples (outer loop).
#[derive(Debug, Clone)]
pub struct Task {
    pub support: Vec<LabeledExample>,
    pub query: Vec<LabeledExample>,
    pub cluster_id: usize,
}

impl Task {
    /// Checks the structural invariants. Used by the trainer on every task.
    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::Task(format!("task for cluster {} has empty support", self.cluster_id)));
        }
        if self.query.is_empty() {
            return Err(Error::Task(format!("task for cluster {} has empty query", self.cluster_id)));
        }
        if let Some(e) = self.support.iter().find(|e| e.y != self.cluster_id) {
            return Err(Error::Task(format!(
                "support label {} differs from cluster {}",
                e.y, self.cluster_id
            )));
        }
        Ok(())
    }
}

/// `count` examples drawn without replacement from every group except `exclude`.
fn random_others(
    groups: &[Vec<usize>],
    exclude: usize,
    count: usize,
    dataset: &Dataset,
    rng: &mut impl rand::Rng,
) -> Vec<LabeledExample> {
    if count == 0 {
        return Vec::new();
    }
    let mut pool: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != exclude)
        .flat_map(|(g, members)| members.iter().map(move |&i| (i, g)))
        .collect();
    if pool.len() < count {
        warn!("only {} examples outside cluster {exclude}, wanted {count}", pool.len());
    }
    let take = count.min(pool.len());
    let (chosen, _) = pool.partial_shuffle(rng, take);
    chosen
        .iter()
        .map(|&(i, g)| LabeledExample {
            x: dataset.image(i).clone(),
            y: g,
            origin: Some(i),
        })
        .collect()
}

fn labelled(dataset: &Dataset, idx: &[usize], label: usize) -> Vec<LabeledExample> {
    idx.iter()
        .map(|&i| LabeledExample {
            x: dataset.image(i).clone(),
            y: label,
            origin: Some(i),
        })
        .collect()
}

/// Support size for a cluster of `k` elements: two thirds rounded up, but
/// always leaving at least one element for the query.
pub fn support_size(k: usize) -> usize {
    (2 * k).div_ceil(3).min(k - 1)
}

/// Builds the unsupervised task of one cluster.
///
/// The shuffled cluster is split two thirds (rounded up) into the support
/// set, the rest into the query set, and `q_random` examples from other
/// clusters are appended to the query with their own pseudo-labels.
pub fn make_unbalanced_task(
    assignment: &ClusterAssignment,
    dataset: &Dataset,
    cluster_id: usize,
    q_random: usize,
    seed: u64,
) -> Result<Task> {
    let groups = assignment.groups();
    let members = groups
        .get(cluster_id)
        .ok_or_else(|| Error::Task(format!("cluster {cluster_id} does not exist")))?;
    if members.len() < 2 {
        return Err(Error::Task(format!(
            "cluster {cluster_id} has {} element(s), at least 2 required",
            members.len()
        )));
    }
    let mut rng = seeded(seed);
    let mut shuffled = members.clone();
    shuffled.shuffle(&mut rng);
    let n_support = support_size(shuffled.len());
    let (sup, rest) = shuffled.split_at(n_support);
    let mut query = labelled(dataset, rest, cluster_id);
    query.extend(random_others(&groups, cluster_id, q_random, dataset, &mut rng));
    Ok(Task {
        support: labelled(dataset, sup, cluster_id),
        query,
        cluster_id,
    })
}

fn balanced_from_groups(
    groups: &[Vec<usize>],
    dataset: &Dataset,
    id: usize,
    n_support: usize,
    n_query_same: usize,
    n_query_random: usize,
    seed: u64,
) -> Result<Task> {
    let members = groups
        .get(id)
        .ok_or_else(|| Error::Task(format!("class {id} does not exist")))?;
    if n_support == 0 {
        return Err(Error::Task("n_support must be >= 1".into()));
    }
    if members.len() < n_support + n_query_same {
        return Err(Error::Task(format!(
            "class {id} has {} samples, {} needed",
            members.len(),
            n_support + n_query_same
        )));
    }
    let mut rng = seeded(seed);
    let mut shuffled = members.clone();
    shuffled.shuffle(&mut rng);
    let support = labelled(dataset, &shuffled[..n_support], id);
    let mut query = labelled(dataset, &shuffled[n_support..n_support + n_query_same], id);
    query.extend(random_others(groups, id, n_query_random, dataset, &mut rng));
    Ok(Task {
        support,
        query,
        cluster_id: id,
    })
}

/// Fixed-size task over the dataset's true labels (oracle mode).
pub fn make_balanced_task(
    dataset: &Dataset,
    class_id: usize,
    n_support: usize,
    n_query_same: usize,
    n_query_random: usize,
    seed: u64,
) -> Result<Task> {
    balanced_from_groups(
        &dataset.class_indices(),
        dataset,
        class_id,
        n_support,
        n_query_same,
        n_query_random,
        seed,
    )
}

/// Fixed-size task over pseudo-labels, typically of a truncated assignment.
pub fn make_balanced_task_from_assignment(
    assignment: &ClusterAssignment,
    dataset: &Dataset,
    cluster_id: usize,
    n_support: usize,
    n_query_same: usize,
    n_query_random: usize,
    seed: u64,
) -> Result<Task> {
    balanced_from_groups(
        &assignment.groups(),
        dataset,
        cluster_id,
        n_support,
        n_query_same,
        n_query_random,
        seed,
    )
}

/// Drops clusters smaller than `n` and subsamples the rest to exactly `n`
/// members. Surviving clusters are renumbered in their original order.
pub fn truncate_to_balanced(assignment: &ClusterAssignment, n: usize, seed: u64) -> Result<ClusterAssignment> {
    if n < 2 {
        return Err(Error::Config(format!("truncation size {n} < 2")));
    }
    let mut rng = seeded(seed);
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    let mut centroids = Vec::new();
    let groups = assignment.groups();
    let dist_of: std::collections::HashMap<usize, f64> = assignment
        .indices
        .iter()
        .copied()
        .zip(assignment.sq_dists.iter().copied())
        .collect();
    let mut new_id = 0;
    for (c, mut members) in groups.into_iter().enumerate() {
        if members.len() < n {
            continue;
        }
        members.shuffle(&mut rng);
        members.truncate(n);
        kept.extend(members.into_iter().map(|i| (i, new_id, dist_of[&i])));
        centroids.extend_from_slice(assignment.centroid(c));
        new_id += 1;
    }
    if new_id == 0 {
        return Err(Error::Config(format!("no cluster has at least {n} elements")));
    }
    kept.sort_unstable_by_key(|&(i, _, _)| i);
    let inertia = kept.iter().map(|&(_, _, d)| d).sum();
    Ok(ClusterAssignment {
        indices: kept.iter().map(|&(i, _, _)| i).collect(),
        pseudo_labels: kept.iter().map(|&(_, c, _)| c).collect(),
        sq_dists: kept.iter().map(|&(_, _, d)| d).collect(),
        centroids,
        dim: assignment.dim,
        sizes: vec![n; new_id],
        inertia,
        inertia_trace: Vec::new(),
    })
}
