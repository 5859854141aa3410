//! Pseudo-labelling and task construction.

mod augment;
mod balance;
mod builder;
mod kmeans;

pub use augment::augment_to_size;
pub use balance::{
    apply_loss_balancing, compute_balancing_vector, proportional_sample_size, BalancingVector, DEFAULT_EPSILON,
};
pub use builder::{
    make_balanced_task, make_balanced_task_from_assignment, make_unbalanced_task, support_size, truncate_to_balanced, Task,
    DEFAULT_N_QUERY_RANDOM, DEFAULT_N_QUERY_SAME, DEFAULT_N_SUPPORT, DEFAULT_Q_RANDOM,
};
pub use kmeans::{kmeans_partition, ClusterAssignment, DEFAULT_MAX_ITERS};
