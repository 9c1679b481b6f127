//! The single run configuration: one JSON document with a section per
//! pipeline stage. Parsing is strict — unknown keys abort.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticSpec;
use crate::error::{Error, Result};
use crate::imageproc::{AugmentConfig, Channel2Mode};
use crate::mlab::BoostConfig;
use crate::radiomics::RadiomicsConfig;
use crate::sampler::SamplerConfig;
use crate::siamese::{EncoderConfig, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest CSV path; mutually exclusive with `synthetic`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Drop labels with fewer occurrences than this.
    #[serde(default = "default_min_label_count")]
    pub min_label_count: usize,
    /// Train:validation ratio for siamese training.
    #[serde(default = "default_split_ratio")]
    pub split_ratio: (usize, usize),
    #[serde(default = "default_n_folds")]
    pub n_folds: usize,
}

fn default_min_label_count() -> usize {
    1
}
fn default_split_ratio() -> (usize, usize) {
    (4, 1)
}
fn default_n_folds() -> usize {
    5
}

impl Default for DataConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Square resize target for the 3-channel input.
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_mode")]
    pub channel2_mode: Channel2Mode,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Apply the augmentation when preprocessing (off keeps the pass exact).
    #[serde(default)]
    pub augment_train: bool,
}

fn default_side() -> usize {
    64
}
fn default_mode() -> Channel2Mode {
    Channel2Mode::CopyOriginal
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// Encoder settings that do not depend on the dataset; `input_hw`,
/// `channels_in`, and `n_labels` are filled in from the data at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    #[serde(default = "default_widths")]
    pub layer_widths: Vec<usize>,
    #[serde(default = "default_embedding")]
    pub embedding_dim: usize,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default)]
    pub l2_normalize: bool,
}

fn default_widths() -> Vec<usize> {
    vec![32, 16]
}
fn default_embedding() -> usize {
    16
}
fn default_patch() -> usize {
    8
}

impl Default for EncoderSection {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl EncoderSection {
    pub fn resolve(&self, input_hw: usize, n_labels: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            input_hw,
            channels_in: 3,
            patch: self.patch,
            layer_widths: self.layer_widths.clone(),
            embedding_dim: self.embedding_dim,
            n_labels,
            seed,
            l2_normalize: self.l2_normalize,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiameseSection {
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// External (self-supervised) embeddings CSV; absent disables the block.
    #[serde(default)]
    pub external_embeddings: Option<PathBuf>,
    /// With synthetic data, generate a stand-in external embedding block
    /// instead of reading a file.
    #[serde(default)]
    pub synthesize_external: bool,
    /// MDS target dimension for the external block.
    #[serde(default = "default_mds_dim")]
    pub mds_dim: usize,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    /// Block names to fuse, in declared order.
    #[serde(default = "default_blocks")]
    pub blocks: Vec<String>,
}

fn default_mds_dim() -> usize {
    8
}
fn default_knn_k() -> usize {
    5
}
fn default_blocks() -> Vec<String> {
    vec!["siamese".into(), "radiomics".into(), "tabular".into()]
}

impl Default for FusionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
    /// Side length of the PCA visualization image.
    #[serde(default = "default_pca_side")]
    pub pca_side: usize,
}

fn default_repeats() -> usize {
    5
}
fn default_pca_side() -> usize {
    30
}

impl Default for ExplainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// Full run configuration; every stage reads only its own section plus the
/// global seed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub siamese: SiameseSection,
    #[serde(default)]
    pub radiomics: RadiomicsConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub classifier: BoostConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
}

pub const KNOWN_BLOCKS: [&str; 4] = ["siamese", "selfsup", "radiomics", "tabular"];

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.manifest.is_some() && self.data.synthetic.is_some() {
            return Err(Error::invalid("set either data.manifest or data.synthetic, not both"));
        }
        for b in &self.fusion.blocks {
            if !KNOWN_BLOCKS.contains(&b.as_str()) {
                return Err(Error::invalid(format!(
                    "unknown block {:?}; known blocks: {}",
                    b,
                    KNOWN_BLOCKS.join(", ")
                )));
            }
        }
        if self.fusion.blocks.is_empty() {
            return Err(Error::invalid("fusion.blocks must not be empty"));
        }
        if self.fusion.blocks.contains(&"selfsup".to_string())
            && self.fusion.external_embeddings.is_none()
            && !self.fusion.synthesize_external
        {
            return Err(Error::invalid(
                "block \"selfsup\" requires fusion.external_embeddings or fusion.synthesize_external",
            ));
        }
        self.classifier.validate()?;
        self.siamese.train.validate()?;
        self.radiomics.validate()?;
        Ok(())
    }

    /// Apply a `section.key=value` override onto the JSON form, then
    /// re-parse strictly.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override {:?} is not key=value", assignment)))?;
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::invalid(format!("override path {:?} has an empty segment", path)));
        }
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(self)?;
        let mut node = &mut doc;
        for k in &keys[..keys.len() - 1] {
            node = node
                .as_object_mut()
                .ok_or_else(|| Error::invalid(format!("{:?} is not an object", k)))?
                .entry(k.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        node.as_object_mut()
            .ok_or_else(|| Error::invalid("override target is not an object"))?
            .insert(keys[keys.len() - 1].to_string(), value);
        Self::from_json(&doc.to_string())
    }

    /// Stable hash of the serialized config, for stage manifests and logs.
    pub fn hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        serde_json::to_string(self).unwrap().hash(&mut h);
        h.finish()
    }
}
