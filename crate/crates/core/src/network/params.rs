//! Architecture description and the flat parameter store.
//!
//! All trainable values live in one `Vec<f64>` laid out group by group:
//! feature extractor (`fen.*`), FiLM generators (`film.*`), context vector,
//! attention head (`attention.*`), classifier (`cln.*`). The head groups are
//! contiguous at the end, so the inner-loop parameters ψ = {W, ρ} are a
//! single slice.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::{Error, Result};

pub const NUM_CONV: usize = 6;
/// FiLM follows the last two convolutions.
pub const FILM_LAYERS: [usize; 2] = [4, 5];

fn default_in_channels() -> usize {
    1
}
fn default_image_size() -> usize {
    28
}
fn default_conv_width() -> usize {
    64
}
fn default_strides() -> [usize; NUM_CONV] {
    [2, 1, 2, 1, 2, 1]
}
fn default_true() -> bool {
    true
}
fn default_trunk_hidden() -> usize {
    256
}
fn default_feature_dim() -> usize {
    128
}
fn default_cln_hidden() -> usize {
    256
}
fn default_num_outputs() -> usize {
    64
}
fn default_context_dim() -> usize {
    100
}

/// Network shape. Every field has a default; see the README for values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_conv_width")]
    pub conv_width: usize,
    #[serde(default = "default_strides")]
    pub conv_strides: [usize; NUM_CONV],
    /// Use a 1x1 kernel for the last convolution (small glyph-style inputs).
    #[serde(default = "default_true")]
    pub last_conv_1x1: bool,
    #[serde(default = "default_trunk_hidden")]
    pub trunk_hidden: usize,
    /// Dimension F of the feature vectors fed to pooling and the classifier.
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Hidden width of the attention head; `None` means `feature_dim / 2`.
    #[serde(default)]
    pub attention_hidden: Option<usize>,
    /// Hidden width of the classifier; 0 makes it a single linear layer.
    #[serde(default = "default_cln_hidden")]
    pub cln_hidden: usize,
    #[serde(default = "default_num_outputs")]
    pub num_outputs: usize,
    #[serde(default)]
    pub film: bool,
    #[serde(default = "default_context_dim")]
    pub context_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: default_in_channels(),
            image_size: default_image_size(),
            conv_width: default_conv_width(),
            conv_strides: default_strides(),
            last_conv_1x1: true,
            trunk_hidden: default_trunk_hidden(),
            feature_dim: default_feature_dim(),
            attention_hidden: None,
            cln_hidden: default_cln_hidden(),
            num_outputs: default_num_outputs(),
            film: false,
            context_dim: default_context_dim(),
        }
    }
}

/// Geometry of one convolution (padding keeps "same" size before striding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvSpec {
    pub fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }
    pub fn out_len(&self) -> usize {
        self.c_out * self.h_out * self.w_out
    }
    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

impl ArchConfig {
    pub fn attention_width(&self) -> usize {
        self.attention_hidden.unwrap_or((self.feature_dim / 2).max(1))
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::with_capacity(NUM_CONV);
        let (mut c, mut h, mut w) = (self.in_channels, self.image_size, self.image_size);
        for (i, &stride) in self.conv_strides.iter().enumerate() {
            let kernel = if i == NUM_CONV - 1 && self.last_conv_1x1 { 1 } else { 3 };
            let pad = kernel / 2;
            let h_out = (h + 2 * pad - kernel) / stride.max(1) + 1;
            let w_out = (w + 2 * pad - kernel) / stride.max(1) + 1;
            specs.push(ConvSpec {
                c_in: c,
                c_out: self.conv_width,
                kernel,
                stride,
                pad,
                h_in: h,
                w_in: w,
                h_out,
                w_out,
            });
            c = self.conv_width;
            h = h_out;
            w = w_out;
        }
        specs
    }

    /// Input width of the classifier's output layer.
    pub fn cln_in(&self) -> usize {
        if self.cln_hidden == 0 {
            self.feature_dim
        } else {
            self.cln_hidden
        }
    }

    pub fn flat_dim(&self) -> usize {
        self.conv_specs().last().expect("six layers").out_len()
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.image_size * self.image_size
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("image_size", self.image_size),
            ("conv_width", self.conv_width),
            ("trunk_hidden", self.trunk_hidden),
            ("feature_dim", self.feature_dim),
            ("attention_hidden", self.attention_width()),
            ("num_outputs", self.num_outputs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.conv_strides.contains(&0) {
            return Err(Error::Config("conv strides must be >= 1".into()));
        }
        if self.image_size < 3 {
            return Err(Error::Config(format!("image_size {} too small for 3x3 convolutions", self.image_size)));
        }
        if self.film && self.context_dim == 0 {
            return Err(Error::Config("FiLM needs context_dim >= 1".into()));
        }
        Ok(())
    }
}

/// Name, shape and position of one tensor in the flat store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// θ: convolutions and trunk linear layers.
    Fen,
    Film,
    Context,
    /// ρ
    Attention,
    /// W
    Cln,
    /// ψ = {W, ρ}: updated by the inner loop.
    Psi,
    /// φ = {θ, W, ρ} plus FiLM generators: updated by the outer loop.
    Phi,
}

impl ParamGroup {
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            ParamGroup::Fen => &["fen."],
            ParamGroup::Film => &["film.gen"],
            ParamGroup::Context => &["film.context"],
            ParamGroup::Attention => &["attention."],
            ParamGroup::Cln => &["cln."],
            ParamGroup::Psi => &["attention.", "cln."],
            ParamGroup::Phi => &["fen.", "film.gen", "attention.", "cln."],
        }
    }

    pub fn contains(self, name: &str) -> bool {
        self.prefixes().iter().any(|p| name.starts_with(p))
    }
}

/// Offsets of the individual tensors, resolved once per architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offsets {
    pub conv_w: [usize; NUM_CONV],
    pub conv_b: [usize; NUM_CONV],
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
    /// `[layer][gamma_w, gamma_b, beta_w, beta_b]`
    pub film: Option<[[usize; 4]; 2]>,
    pub context: Option<usize>,
    /// Start of the head slice (attention then classifier).
    pub head: usize,
    /// Offsets relative to `head`.
    pub head_layout: HeadLayout,
}

/// Positions inside the head slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub feature_dim: usize,
    pub att_hidden: usize,
    pub cln_hidden: usize,
    pub outputs: usize,
    pub att1_w: usize,
    pub att1_b: usize,
    pub att2_w: usize,
    pub att2_b: usize,
    pub cln1_w: usize,
    pub cln1_b: usize,
    pub cln2_w: usize,
    pub cln2_b: usize,
    pub len: usize,
}

impl HeadLayout {
    /// Range of the classifier (W) inside the head slice.
    pub fn cln_range(&self) -> Range<usize> {
        self.cln1_w..self.len
    }
    pub fn cln_in(&self) -> usize {
        if self.cln_hidden == 0 {
            self.feature_dim
        } else {
            self.cln_hidden
        }
    }
    pub fn attention_range(&self) -> Range<usize> {
        self.att1_w..self.cln1_w
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub offsets: Offsets,
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| -> usize {
            let spec = TensorSpec { name, shape, offset: total };
            let off = spec.offset;
            total += spec.len();
            tensors.push(spec);
            off
        };
        let specs = arch.conv_specs();
        let mut conv_w = [0; NUM_CONV];
        let mut conv_b = [0; NUM_CONV];
        for (i, s) in specs.iter().enumerate() {
            conv_w[i] = push(format!("fen.conv{i}.weight"), vec![s.c_out, s.c_in, s.kernel, s.kernel]);
            conv_b[i] = push(format!("fen.conv{i}.bias"), vec![s.c_out]);
        }
        let flat = specs.last().expect("six layers").out_len();
        let fc1_w = push("fen.fc1.weight".into(), vec![arch.trunk_hidden, flat]);
        let fc1_b = push("fen.fc1.bias".into(), vec![arch.trunk_hidden]);
        let fc2_w = push("fen.fc2.weight".into(), vec![arch.feature_dim, arch.trunk_hidden]);
        let fc2_b = push("fen.fc2.bias".into(), vec![arch.feature_dim]);
        let (film, context) = if arch.film {
            let mut film = [[0; 4]; 2];
            for (j, &layer) in FILM_LAYERS.iter().enumerate() {
                let c = specs[layer].c_out;
                film[j] = [
                    push(format!("film.gen{j}.gamma.weight"), vec![c, arch.context_dim]),
                    push(format!("film.gen{j}.gamma.bias"), vec![c]),
                    push(format!("film.gen{j}.beta.weight"), vec![c, arch.context_dim]),
                    push(format!("film.gen{j}.beta.bias"), vec![c]),
                ];
            }
            (Some(film), Some(push("film.context".into(), vec![arch.context_dim])))
        } else {
            (None, None)
        };
        let f = arch.feature_dim;
        let a = arch.attention_width();
        let h = arch.cln_hidden;
        let o = arch.num_outputs;
        let head = push("attention.fc1.weight".into(), vec![a, f]);
        let att1_b = push("attention.fc1.bias".into(), vec![a]) - head;
        let att2_w = push("attention.fc2.weight".into(), vec![1, a]) - head;
        let att2_b = push("attention.fc2.bias".into(), vec![1]) - head;
        let (cln1_w, cln1_b) = if h > 0 {
            (
                push("cln.hidden.weight".into(), vec![h, f]) - head,
                push("cln.hidden.bias".into(), vec![h]) - head,
            )
        } else {
            let at = att2_b + 1;
            (at, at)
        };
        let cln2_w = push("cln.out.weight".into(), vec![o, arch.cln_in()]) - head;
        let cln2_b = push("cln.out.bias".into(), vec![o]) - head;
        let head_layout = HeadLayout {
            feature_dim: f,
            att_hidden: a,
            cln_hidden: h,
            outputs: o,
            att1_w: 0,
            att1_b,
            att2_w,
            att2_b,
            cln1_w,
            cln1_b,
            cln2_w,
            cln2_b,
            len: total - head,
        };
        Ok(Self {
            tensors,
            total,
            offsets: Offsets {
                conv_w,
                conv_b,
                fc1_w,
                fc1_b,
                fc2_w,
                fc2_b,
                film,
                context,
                head,
                head_layout,
            },
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn group(&self, group: ParamGroup) -> Vec<&TensorSpec> {
        self.tensors.iter().filter(|t| group.contains(&t.name)).collect()
    }

    /// Mask over the flat store, true for entries in `group`.
    pub fn mask(&self, group: ParamGroup) -> Vec<bool> {
        let mut m = vec![false; self.total];
        for t in self.group(group) {
            m[t.range()].iter_mut().for_each(|b| *b = true);
        }
        m
    }

    pub fn head_range(&self) -> Range<usize> {
        self.offsets.head..self.total
    }

    /// Everything before the head: FEN, FiLM and context.
    pub fn trunk_range(&self) -> Range<usize> {
        0..self.offsets.head
    }

    /// Range of the output row `row` of the last classifier layer (weights) and its bias entry.
    pub fn output_row(&self, row: usize) -> (Range<usize>, usize) {
        let hl = &self.offsets.head_layout;
        let n = hl.cln_in();
        let w = self.offsets.head + hl.cln2_w + row * n;
        (w..w + n, self.offsets.head + hl.cln2_b + row)
    }
}

/// All trainable parameters of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBundle {
    pub arch: ArchConfig,
    pub layout: Arc<Layout>,
    pub values: Vec<f64>,
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)): the usual linear-layer default.
fn uniform_fan_in(rng: &mut impl Rng, fan_in: usize) -> f64 {
    let b = 1.0 / (fan_in as f64).sqrt();
    rng.random_range(-b..b)
}

fn normal(rng: &mut impl Rng, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * std
}

/// Builds a fresh parameter bundle, deterministic given `seed`.
///
/// FEN weights use He-normal initialisation with zero biases; attention and
/// classifier layers use fan-in uniform weights and biases; FiLM generators
/// start at the identity transform (γ bias 1, β bias 0) and the context at 0.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<ParameterBundle> {
    let layout = Arc::new(Layout::new(arch)?);
    let mut rng = seeded(seed);
    let mut values = vec![0.0; layout.total];
    for t in &layout.tensors {
        let fan_in: usize = t.shape.iter().skip(1).product::<usize>().max(1);
        let slot = &mut values[t.range()];
        let name = t.name.as_str();
        if name.starts_with("fen.") {
            if name.ends_with(".weight") {
                let gain = if name == "fen.fc2.weight" { 1.0 } else { 2.0 };
                let std = (gain / fan_in as f64).sqrt();
                slot.iter_mut().for_each(|v| *v = normal(&mut rng, std));
            }
        } else if name.starts_with("film.gen") {
            if name.ends_with("gamma.bias") {
                slot.iter_mut().for_each(|v| *v = 1.0);
            } else if name.ends_with(".weight") {
                slot.iter_mut().for_each(|v| *v = uniform_fan_in(&mut rng, fan_in));
            }
        } else if name.starts_with("attention.") || name.starts_with("cln.") {
            // biases share the fan-in of their weight matrix
            let fan = if name.ends_with(".bias") {
                let w = layout
                    .tensor(&name.replace(".bias", ".weight"))
                    .expect("weight precedes bias");
                w.shape[1]
            } else {
                fan_in
            };
            slot.iter_mut().for_each(|v| *v = uniform_fan_in(&mut rng, fan));
        }
    }
    Ok(ParameterBundle {
        arch: arch.clone(),
        layout,
        values,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FUSCKPT1";

#[derive(Serialize, Deserialize)]
struct CheckpointIndex {
    arch: ArchConfig,
    tensors: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload that follows the header.
    offset: usize,
}

impl ParameterBundle {
    pub fn new(arch: &ArchConfig, values: Vec<f64>) -> Result<Self> {
        let layout = Arc::new(Layout::new(arch)?);
        if values.len() != layout.total {
            return Err(Error::Shape(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total
            )));
        }
        Ok(Self {
            arch: arch.clone(),
            layout,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensor(name).map(|t| &self.values[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.tensor(name)?.range();
        Some(&mut self.values[range])
    }

    /// `(name, values)` of every tensor in `group`.
    pub fn group(&self, group: ParamGroup) -> Vec<(&str, &[f64])> {
        self.layout
            .group(group)
            .into_iter()
            .map(|t| (t.name.as_str(), &self.values[t.range()]))
            .collect()
    }

    pub fn head(&self) -> &[f64] {
        &self.values[self.layout.head_range()]
    }

    pub fn head_mut(&mut self) -> &mut [f64] {
        let r = self.layout.head_range();
        &mut self.values[r]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// FNV-1a over the bit patterns of `group`; equal iff bit-identical (up to collisions).
    pub fn checksum(&self, group: ParamGroup) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, vals) in self.group(group) {
            for v in vals {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Re-draws the classifier output row `row` (weights and bias).
    pub fn reset_output_row(&mut self, row: usize, rng: &mut impl Rng) {
        let (w, b) = self.layout.output_row(row);
        let fan = self.arch.cln_in();
        for v in &mut self.values[w] {
            *v = uniform_fan_in(rng, fan);
        }
        self.values[b] = uniform_fan_in(rng, fan);
    }

    /// Zeroes the FiLM context vector, if present.
    pub fn reset_context(&mut self) {
        if let Some(off) = self.layout.offsets.context {
            let n = self.arch.context_dim;
            self.values[off..off + n].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Writes the checkpoint: 8-byte magic `FUSCKPT1`, little-endian `u64`
    /// header length, JSON index `{arch, tensors: [{name, shape, offset}]}`,
    /// then every tensor as little-endian `f32`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let index = CheckpointIndex {
            arch: self.arch.clone(),
            tensors: self
                .layout
                .tensors
                .iter()
                .map(|t| IndexEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset: t.offset * 4,
                })
                .collect(),
        };
        let header = serde_json::to_vec(&index).map_err(|e| Error::Format(e.to_string()))?;
        let mut bytes = Vec::with_capacity(16 + header.len() + self.values.len() * 4);
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        for v in &self.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Corruption("checkpoint header truncated".into()))?;
        let index: CheckpointIndex =
            serde_json::from_slice(header).map_err(|e| Error::Format(format!("checkpoint index: {e}")))?;
        let payload = &bytes[16 + hlen..];
        let layout = Layout::new(&index.arch)?;
        if payload.len() != layout.total * 4 {
            return Err(Error::Corruption(format!(
                "checkpoint payload {} bytes, expected {}",
                payload.len(),
                layout.total * 4
            )));
        }
        let mut values = vec![0.0; layout.total];
        for entry in &index.tensors {
            let spec = layout
                .tensor(&entry.name)
                .ok_or_else(|| Error::Format(format!("unknown tensor {}", entry.name)))?;
            if spec.shape != entry.shape {
                return Err(Error::Shape(format!("tensor {} has shape {:?}", entry.name, entry.shape)));
            }
            let src = payload
                .get(entry.offset..entry.offset + spec.len() * 4)
                .ok_or_else(|| Error::Corruption(format!("tensor {} out of bounds", entry.name)))?;
            for (dst, c) in values[spec.range()].iter_mut().zip(src.chunks_exact(4)) {
                *dst = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            }
        }
        ParameterBundle::new(&index.arch, values)
    }
}
