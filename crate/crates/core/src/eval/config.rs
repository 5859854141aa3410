//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::protocol::FineTuneConfig;
use crate::meta::{Algorithm, GradientOrder, TrainingConfig};
use crate::network::ArchConfig;
use crate::{Error, Result};

/// Environment variable that replaces `output.dir`.
pub const OUT_ENV: &str = "FUSION_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Procedural glyphs; the first `train_classes` classes are meta-train,
    /// the next `test_classes` meta-test.
    Glyphs {
        #[serde(default = "d_train_classes")]
        train_classes: usize,
        #[serde(default = "d_test_classes")]
        test_classes: usize,
        #[serde(default = "d_samples")]
        samples_per_class: usize,
        #[serde(default = "d_image_size")]
        image_size: usize,
        #[serde(default = "d_data_seed")]
        seed: u64,
    },
    /// PNG folders, one sub-directory per class.
    Folder {
        train_dir: PathBuf,
        test_dir: PathBuf,
        #[serde(default = "d_channels")]
        channels: usize,
        #[serde(default)]
        image_size: Option<usize>,
    },
}

fn d_train_classes() -> usize {
    30
}
fn d_test_classes() -> usize {
    10
}
fn d_samples() -> usize {
    20
}
fn d_image_size() -> usize {
    28
}
fn d_data_seed() -> u64 {
    7
}
fn d_channels() -> usize {
    1
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Glyphs {
            train_classes: d_train_classes(),
            test_classes: d_test_classes(),
            samples_per_class: d_samples(),
            image_size: d_image_size(),
            seed: d_data_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingSpec {
    /// Seeded random projection of the pixels, standardised per column.
    Baseline {
        #[serde(default = "d_emb_dim")]
        dim: usize,
    },
    /// Precomputed embeddings of the meta-train images, in dataset order.
    File { path: PathBuf },
}

fn d_emb_dim() -> usize {
    64
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Baseline { dim: d_emb_dim() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    /// Whole clusters as tasks.
    #[default]
    Unbalanced,
    /// Clusters truncated to `truncate` members, fixed-size tasks.
    Balanced,
    /// Clusters augmented or subsampled to `augment_target` members.
    Augmented,
    /// Fixed-size tasks over the true labels instead of clusters.
    Oracle,
}

fn d_k() -> usize {
    30
}
fn d_max_iters() -> usize {
    crate::tasks::DEFAULT_MAX_ITERS
}
fn d_q_random() -> usize {
    crate::tasks::DEFAULT_Q_RANDOM
}
fn d_n_support() -> usize {
    crate::tasks::DEFAULT_N_SUPPORT
}
fn d_n_query_same() -> usize {
    crate::tasks::DEFAULT_N_QUERY_SAME
}
fn d_n_query_random() -> usize {
    crate::tasks::DEFAULT_N_QUERY_RANDOM
}
fn d_truncate() -> usize {
    15
}
fn d_augment() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSpec {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub tasks: TaskMode,
    /// Other-cluster examples added to each unbalanced or augmented query.
    #[serde(default = "d_q_random")]
    pub q_random: usize,
    #[serde(default = "d_n_support")]
    pub n_support: usize,
    #[serde(default = "d_n_query_same")]
    pub n_query_same: usize,
    #[serde(default = "d_n_query_random")]
    pub n_query_random: usize,
    /// Cluster size kept by the balanced mode.
    #[serde(default = "d_truncate")]
    pub truncate: usize,
    #[serde(default = "d_augment")]
    pub augment_target: usize,
}

impl Default for ClusteringSpec {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn d_shots() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTestSpec {
    #[serde(default = "d_shots")]
    pub shots: usize,
    /// Number of test classes to present; all of them when unset.
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub rehearsal: bool,
    #[serde(default)]
    pub fine_tune: FineTuneConfig,
}

impl Default for MetaTestSpec {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodKind {
    /// The meta-test glyphs with inverted contrast.
    InvertedTest,
    /// A PNG folder.
    Folder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSpec {
    pub kind: OodKind,
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default)]
    pub classes: Option<usize>,
}

fn d_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "d_out")]
    pub dir: PathBuf,
    #[serde(default = "d_true")]
    pub checkpoints: bool,
}

fn d_true() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: d_out(),
            checkpoints: true,
        }
    }
}

/// One arm of an experiment: overrides on top of the shared sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default)]
    pub algorithm: Option<Algorithm>,
    #[serde(default)]
    pub tasks: Option<TaskMode>,
    #[serde(default)]
    pub rehearsal: Option<bool>,
    #[serde(default)]
    pub gradient_order: Option<GradientOrder>,
    #[serde(default)]
    pub loss_balancing: Option<bool>,
}

fn d_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
    #[serde(default)]
    pub clustering: ClusteringSpec,
    #[serde(default)]
    pub network: ArchConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub meta_test: MetaTestSpec,
    #[serde(default)]
    pub ood: Option<OodSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    /// Empty means a single variant named after the training algorithm.
    #[serde(default, rename = "variant")]
    pub variants: Vec<VariantSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

/// Fully resolved settings of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedVariant {
    pub name: String,
    pub training: TrainingConfig,
    pub tasks: TaskMode,
    pub rehearsal: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads, applies `FUSION_OUT`, and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(out) = std::env::var_os(OUT_ENV) {
            cfg.output.dir = PathBuf::from(out);
        }
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSpec::Folder { train_dir, test_dir, .. } = &mut self.dataset {
            fix(train_dir);
            fix(test_dir);
        }
        if let EmbeddingSpec::File { path } = &mut self.embedding {
            fix(path);
        }
        if let Some(OodSpec { dir: Some(d), .. }) = &mut self.ood {
            fix(d);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serialisable")
    }

    pub fn variants(&self) -> Vec<ResolvedVariant> {
        let base = |v: &VariantSpec| {
            let mut t = self.training.clone();
            if let Some(a) = v.algorithm {
                t.algorithm = a;
            }
            if let Some(o) = v.gradient_order {
                t.gradient_order = o;
            }
            if let Some(b) = v.loss_balancing {
                t.loss_balancing = b;
            }
            ResolvedVariant {
                name: v.name.clone(),
                training: t,
                tasks: v.tasks.unwrap_or(self.clustering.tasks),
                rehearsal: v.rehearsal.unwrap_or(self.meta_test.rehearsal),
            }
        };
        if self.variants.is_empty() {
            let name = self.training.algorithm.tag().to_string();
            vec![base(&VariantSpec {
                name,
                ..VariantSpec::default()
            })]
        } else {
            self.variants.iter().map(base).collect()
        }
    }

    pub fn test_class_count(&self) -> Option<usize> {
        match &self.dataset {
            DatasetSpec::Glyphs { test_classes, .. } => Some(self.meta_test.classes.unwrap_or(*test_classes)),
            DatasetSpec::Folder { .. } => self.meta_test.classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match &self.dataset {
            DatasetSpec::Glyphs {
                train_classes,
                test_classes,
                samples_per_class,
                image_size,
                ..
            } => {
                if *train_classes < 2 || *test_classes < 1 || *samples_per_class < 2 {
                    return Err(Error::Config("glyph dataset needs >= 2 train classes, >= 1 test class, >= 2 samples".into()));
                }
                if *image_size != self.network.image_size {
                    return Err(Error::Config(format!(
                        "dataset image_size {image_size} differs from network image_size {}",
                        self.network.image_size
                    )));
                }
                if self.network.in_channels != 1 {
                    return Err(Error::Config("glyphs are single-channel".into()));
                }
            }
            DatasetSpec::Folder { train_dir, test_dir, .. } => {
                for d in [train_dir, test_dir] {
                    if !d.is_dir() {
                        return Err(Error::Config(format!("dataset directory {} not found", d.display())));
                    }
                }
            }
        }
        if let EmbeddingSpec::File { path } = &self.embedding {
            if !path.is_file() {
                return Err(Error::Config(format!("embedding file {} not found", path.display())));
            }
        }
        if let Some(ood) = &self.ood {
            if ood.kind == OodKind::Folder && !ood.dir.as_ref().is_some_and(|d| d.is_dir()) {
                return Err(Error::Config("ood folder directory missing or not found".into()));
            }
        }
        if self.clustering.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.meta_test.shots < 1 {
            return Err(Error::Config("shots must be >= 1".into()));
        }
        self.network.validate()?;
        let mut names: Vec<String> = Vec::new();
        for v in self.variants() {
            v.training.validate()?;
            if v.name.is_empty() || v.name.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!("invalid variant name {:?}", v.name)));
            }
            if names.contains(&v.name) {
                return Err(Error::Config(format!("duplicate variant {}", v.name)));
            }
            names.push(v.name);
        }
        Ok(())
    }
}
