//! Bilevel optimisation: inner adaptation of the head, outer meta-update,
//! and the meta-training loop.

mod adam;
mod config;
mod train;
mod update;

pub use adam::Adam;
pub use config::{Algorithm, GradientOrder, RehearsalTrain, TrainingConfig, WReset};
pub use train::{meta_train, meta_train_from, LogEntry, TaskSource, TrainLog};
pub use update::{
    inner_update, inner_update_meml, inner_update_meml_mean, inner_update_oml, inner_update_single, meta_gradient,
    outer_update, InnerResult, MetaGradient, OuterResult,
};

#[cfg(test)]
mod tests;
