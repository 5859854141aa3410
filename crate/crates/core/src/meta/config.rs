use serde::{Deserialize, Serialize};

use crate::tasks::DEFAULT_EPSILON;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// One inner step on the attention-pooled meta-example.
    #[default]
    Meml,
    /// As `Meml` with plain averaging instead of attention.
    MemlMean,
    /// One inner step per support example, in order.
    Oml,
    /// One inner step on a single random support example.
    OmlSingle,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Meml => "meml",
            Algorithm::MemlMean => "meml-mean",
            Algorithm::Oml => "oml",
            Algorithm::OmlSingle => "oml-single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientOrder {
    /// Differentiate through the inner update.
    #[default]
    Second,
    /// Treat the adapted head as a constant of the base parameters.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RehearsalTrain {
    #[default]
    Off,
    /// Replace each query set with a reservoir batch of earlier examples.
    Coreset { capacity: usize },
}

/// What happens to the classifier at the start of every task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WReset {
    /// Re-draw the output unit of the task's cluster.
    #[default]
    OutputRow,
    /// Re-draw the whole classifier.
    Full,
    /// Never reset.
    Keep,
}

fn d_inner_lr() -> f64 {
    0.01
}
fn d_outer_lr() -> f64 {
    1e-4
}
fn d_steps() -> usize {
    40_000
}
fn d_meta_batch() -> usize {
    1
}
fn d_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "d_inner_lr")]
    pub inner_lr: f64,
    #[serde(default = "d_outer_lr")]
    pub outer_lr: f64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_meta_batch")]
    pub meta_batch: usize,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub gradient_order: GradientOrder,
    #[serde(default)]
    pub loss_balancing: bool,
    #[serde(default = "d_epsilon")]
    pub balancing_epsilon: f64,
    #[serde(default)]
    pub rehearsal_train: RehearsalTrain,
    #[serde(default)]
    pub w_reset: WReset,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            inner_lr: d_inner_lr(),
            outer_lr: d_outer_lr(),
            steps: d_steps(),
            meta_batch: d_meta_batch(),
            algorithm: Algorithm::default(),
            gradient_order: GradientOrder::default(),
            loss_balancing: false,
            balancing_epsilon: d_epsilon(),
            rehearsal_train: RehearsalTrain::default(),
            w_reset: WReset::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Zero learning rates are accepted: they turn the corresponding loop into a no-op.
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("inner_lr", self.inner_lr), ("outer_lr", self.outer_lr)] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {lr}")));
            }
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.meta_batch != 1 {
            return Err(Error::Config(format!("meta_batch {} unsupported, only 1", self.meta_batch)));
        }
        if let RehearsalTrain::Coreset { capacity: 0 } = self.rehearsal_train {
            return Err(Error::Config("coreset capacity must be >= 1".into()));
        }
        if !(self.balancing_epsilon > 0.0) {
            return Err(Error::Config("balancing_epsilon must be > 0".into()));
        }
        Ok(())
    }
}
