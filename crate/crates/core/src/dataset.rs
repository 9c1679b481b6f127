//! Dataset ingestion, label filtering, splits/folds, and the synthetic
//! generator used for desk-scale verification.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Ordered label set with per-label occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub names: Vec<String>,
    pub counts: Vec<usize>,
}

impl LabelVocabulary {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One grayscale image with its multi-label set and optional side data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: Grid,
    /// Indices into the vocabulary. Empty set means "no finding".
    pub labels: BTreeSet<usize>,
    pub mask: Option<Grid>,
    pub age: Option<f64>,
    /// Stand-in for the bone-suppressed image, when supplied.
    pub precomputed_channel: Option<Grid>,
}

/// Per-sample fold index in `[0, n_folds)`.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    /// Indices of the test rows for `fold`.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

fn load_gray(path: &Path) -> Result<Grid> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64).collect();
    Grid::new(h as usize, w as usize, data)
}

fn load_mask(path: &Path) -> Result<Grid> {
    let mut g = load_gray(path)?;
    for v in &mut g.data {
        *v = if *v != 0.0 { 1.0 } else { 0.0 };
    }
    Ok(g)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load a dataset from a manifest CSV with header
/// `id,image_path,mask_path,age,labels,channel3_path`.
///
/// Labels are semicolon-separated names; empty cells mean absent. Relative
/// paths are resolved against the manifest's directory. The vocabulary is
/// built from the union of observed labels in first-appearance order.
pub fn load_manifest(path: &Path) -> Result<(Vec<Sample>, LabelVocabulary)> {
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected = ["id", "image_path", "mask_path", "age", "labels", "channel3_path"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Manifest {
            row: 0,
            msg: format!("header must be {:?}, got {:?}", expected.join(","), headers),
        });
    }

    let mut names: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut samples = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
        let id = field(0);
        if id.is_empty() {
            return Err(Error::Manifest { row, msg: "empty id".into() });
        }
        let image_path = field(1);
        if image_path.is_empty() {
            return Err(Error::Manifest { row, msg: "empty image_path".into() });
        }
        let image = load_gray(&resolve(&base, &image_path))
            .map_err(|e| Error::Manifest { row, msg: format!("image {}: {}", image_path, e) })?;

        let mask_path = field(2);
        let mask = if mask_path.is_empty() {
            None
        } else {
            let m = load_mask(&resolve(&base, &mask_path))
                .map_err(|e| Error::Manifest { row, msg: format!("mask {}: {}", mask_path, e) })?;
            if !m.same_shape(&image) {
                return Err(Error::Manifest {
                    row,
                    msg: format!(
                        "mask shape {}x{} does not match image {}x{}",
                        m.h, m.w, image.h, image.w
                    ),
                });
            }
            Some(m)
        };

        let age_field = field(3);
        let age = if age_field.is_empty() {
            None
        } else {
            Some(age_field.parse::<f64>().map_err(|_| Error::Manifest {
                row,
                msg: format!("bad age {:?}", age_field),
            })?)
        };

        let mut labels = BTreeSet::new();
        for name in field(4).split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let idx = match names.iter().position(|n| n == name) {
                Some(idx) => idx,
                None => {
                    names.push(name.to_string());
                    counts.push(0);
                    names.len() - 1
                }
            };
            if labels.insert(idx) {
                counts[idx] += 1;
            }
        }

        let ch3_path = field(5);
        let precomputed_channel = if ch3_path.is_empty() {
            None
        } else {
            let c = load_gray(&resolve(&base, &ch3_path))
                .map_err(|e| Error::Manifest { row, msg: format!("channel3 {}: {}", ch3_path, e) })?;
            if !c.same_shape(&image) {
                return Err(Error::Manifest {
                    row,
                    msg: format!(
                        "channel3 shape {}x{} does not match image {}x{}",
                        c.h, c.w, image.h, image.w
                    ),
                });
            }
            Some(c)
        };

        samples.push(Sample { id, image, labels, mask, age, precomputed_channel });
    }

    Ok((samples, LabelVocabulary { names, counts }))
}

/// Drop labels observed fewer than `min_count` times and re-map indices
/// densely. Samples are never dropped; a sample losing all labels becomes
/// "no finding".
pub fn filter_rare_labels(
    vocab: &LabelVocabulary,
    samples: &[Sample],
    min_count: usize,
) -> Result<(LabelVocabulary, Vec<Sample>)> {
    if min_count < 1 {
        return Err(Error::invalid("min_count must be >= 1"));
    }
    let mut remap = vec![None; vocab.len()];
    let mut names = Vec::new();
    let mut counts = Vec::new();
    for i in 0..vocab.len() {
        if vocab.counts[i] >= min_count {
            remap[i] = Some(names.len());
            names.push(vocab.names[i].clone());
            counts.push(vocab.counts[i]);
        }
    }
    let samples = samples
        .iter()
        .map(|s| {
            let labels = s.labels.iter().filter_map(|&l| remap[l]).collect();
            Sample { labels, ..s.clone() }
        })
        .collect();
    Ok((LabelVocabulary { names, counts }, samples))
}

/// Partition sample indices into train/validation with sizes matching
/// `ratio` within one sample. Deterministic per seed.
pub fn split(
    n_samples: usize,
    ratio: (usize, usize),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::invalid("ratio components must be positive"));
    }
    if n_samples < 2 {
        return Err(Error::invalid("need at least 2 samples to split"));
    }
    let mut idx: Vec<usize> = (0..n_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let total = (ratio.0 + ratio.1) as f64;
    let n_train = ((n_samples as f64) * ratio.0 as f64 / total).round() as usize;
    let n_train = n_train.clamp(1, n_samples - 1);
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

/// Assign each sample to one of `n_folds` folds; sizes differ by at most 1.
pub fn make_folds(n_samples: usize, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::invalid("n_folds must be >= 2"));
    }
    if n_folds > n_samples {
        return Err(Error::invalid(format!(
            "n_folds {} exceeds n_samples {}",
            n_folds, n_samples
        )));
    }
    let mut idx: Vec<usize> = (0..n_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut assignment = vec![0; n_samples];
    for (pos, &i) in idx.iter().enumerate() {
        assignment[i] = pos % n_folds;
    }
    Ok(FoldAssignment { n_folds, assignment })
}

/// Binary label matrix (samples x labels), row-major.
pub fn label_matrix(samples: &[Sample], vocab: &LabelVocabulary) -> Vec<f64> {
    let c = vocab.len();
    let mut y = vec![0.0; samples.len() * c];
    for (i, s) in samples.iter().enumerate() {
        for &l in &s.labels {
            y[i * c + l] = 1.0;
        }
    }
    y
}

/// What carries a synthetic label's signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Carrier {
    /// High-variance noise inside the mask: recoverable by radiomics.
    Texture {
        #[serde(default = "default_texture_sigma")]
        sigma: f64,
    },
    /// Bright block at a label-specific location: recoverable by the encoder.
    /// `channel` selects which input channel carries it (0 = original image,
    /// 2 = precomputed channel).
    Pattern {
        #[serde(default = "default_pattern_amplitude")]
        amplitude: f64,
        #[serde(default)]
        channel: usize,
    },
    /// Label is set when the sample's age exceeds the threshold.
    Age { threshold: f64 },
}

fn default_texture_sigma() -> f64 {
    0.3
}
fn default_pattern_amplitude() -> f64 {
    0.6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLabel {
    pub name: String,
    pub carrier: Carrier,
}

/// Synthetic dataset description; each label's signal is planted in its
/// designated carrier so downstream blocks have complementary information.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub n_samples: usize,
    pub labels: Vec<SyntheticLabel>,
    #[serde(default = "default_prevalence")]
    pub prevalence: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
}

fn default_prevalence() -> f64 {
    0.5
}
fn default_noise_sigma() -> f64 {
    0.02
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Block region used by pattern label `k`: one of four quadrant anchors
/// inside the mask, side `size/4`.
pub fn pattern_region(image_size: usize, k: usize) -> (usize, usize, usize) {
    let s = image_size;
    let side = (s / 4).max(2);
    let origins = [
        (s / 8, s / 8),
        (s / 8, s * 5 / 8),
        (s * 5 / 8, s / 8),
        (s * 5 / 8, s * 5 / 8),
    ];
    let (y, x) = origins[k % 4];
    (y, x, side)
}

/// Generate a reproducible multi-label dataset with planted block-specific
/// signal. Masks are a fixed centered rectangle marking the signal region.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Vec<Sample>, LabelVocabulary)> {
    if spec.n_samples > 0 && spec.image_size < 8 {
        return Err(Error::invalid("image_size must be >= 8"));
    }
    let s = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(spec.n_samples);
    let mut counts = vec![0usize; spec.labels.len()];

    let needs_channel3 = spec
        .labels
        .iter()
        .any(|l| matches!(l.carrier, Carrier::Pattern { channel: 2, .. }));

    // centered rectangular mask
    let (m0, m1) = (s / 8, s * 7 / 8);

    for i in 0..spec.n_samples {
        let age = rng.gen_range(20.0..80.0);
        let mut labels = BTreeSet::new();
        for (k, lab) in spec.labels.iter().enumerate() {
            let on = match lab.carrier {
                Carrier::Age { threshold } => age > threshold,
                _ => rng.gen_bool(spec.prevalence),
            };
            if on {
                labels.insert(k);
                counts[k] += 1;
            }
        }

        // smooth ramp background plus mild noise
        let mut image = Grid::zeros(s, s);
        for y in 0..s {
            for x in 0..s {
                let base = 0.2 + 0.3 * (y + x) as f64 / (2 * s) as f64;
                image.set(y, x, base + spec.noise_sigma * gauss(&mut rng));
            }
        }
        let mut mask = Grid::zeros(s, s);
        for y in m0..m1 {
            for x in m0..m1 {
                mask.set(y, x, 1.0);
            }
        }
        let mut channel3 = if needs_channel3 {
            let mut c = Grid::zeros(s, s);
            for v in &mut c.data {
                *v = 0.3 + spec.noise_sigma * gauss(&mut rng);
            }
            Some(c)
        } else {
            None
        };

        for (k, lab) in spec.labels.iter().enumerate() {
            let on = labels.contains(&k);
            match lab.carrier {
                Carrier::Texture { sigma } => {
                    if on {
                        for y in m0..m1 {
                            for x in m0..m1 {
                                let v = image.get(y, x) + sigma * gauss(&mut rng);
                                image.set(y, x, v);
                            }
                        }
                    }
                }
                Carrier::Pattern { amplitude, channel } => {
                    if on {
                        let (py, px, side) = pattern_region(s, k);
                        let target = if channel == 2 {
                            channel3.as_mut().expect("channel3 allocated above")
                        } else {
                            &mut image
                        };
                        for y in py..(py + side).min(s) {
                            for x in px..(px + side).min(s) {
                                let v = target.get(y, x) + amplitude;
                                target.set(y, x, v);
                            }
                        }
                    }
                }
                Carrier::Age { .. } => {}
            }
        }

        samples.push(Sample {
            id: format!("syn{:05}", i),
            image,
            labels,
            mask: Some(mask),
            age: Some(age),
            precomputed_channel: channel3,
        });
    }

    let vocab = LabelVocabulary {
        names: spec.labels.iter().map(|l| l.name.clone()).collect(),
        counts,
    };
    Ok((samples, vocab))
}

/// Stand-in for an external self-supervised embedding file: `dim` columns
/// where the first `informative_labels.len()` dimensions are shifted by the
/// corresponding label, the rest pure noise.
pub fn synthetic_embeddings(
    samples: &[Sample],
    informative_labels: &[usize],
    dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let mut row = Vec::with_capacity(dim);
            for j in 0..dim {
                let mut v = noise_sigma * gauss(&mut rng);
                if let Some(&lab) = informative_labels.get(j) {
                    if s.labels.contains(&lab) {
                        v += 1.0;
                    }
                }
                row.push(v);
            }
            (s.id.clone(), row)
        })
        .collect()
}
