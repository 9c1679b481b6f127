//! Anchor/Positive/Negative triplet selection for multi-label data.
//!
//! The positive search scans a per-anchor random permutation of the dataset,
//! remembering the best candidate by (shared labels up, differing labels
//! down), with an early exit on an exact label match. The negative search
//! draws an admissible label uniformly, then draws random images until one
//! carries it, re-drawing the label after `search_limit` misses.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelVocabulary, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    /// Label index that selected the negative; absent from anchor and
    /// positive, present on the negative.
    pub negative_label: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// `S`: when to stop looking for a better positive / another negative.
    pub search_limit: usize,
    pub seed: u64,
    /// Skip anchors whose best positive shares no label instead of keeping
    /// the first scanned candidate.
    #[serde(default)]
    pub require_shared_positive: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { search_limit: 50, seed: 0, require_shared_positive: false }
    }
}

fn shared_count(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> usize {
    a.intersection(b).count()
}

fn differing_count(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> usize {
    a.symmetric_difference(b).count()
}

/// Scan `order` (a random permutation of dataset indices) for the best
/// positive for `anchor_idx`.
pub fn select_positive(
    anchor_idx: usize,
    order: &[usize],
    samples: &[Sample],
    cfg: &SamplerConfig,
) -> Result<usize> {
    if samples.len() < 2 {
        return Err(Error::NoPositive { anchor: samples[anchor_idx].id.clone() });
    }
    let a_labels = &samples[anchor_idx].labels;
    let mut best: Option<(usize, usize, usize)> = None; // (idx, same, diff)
    let mut scanned = 0usize;
    for &cand in order {
        if cand == anchor_idx {
            continue;
        }
        scanned += 1;
        let same = shared_count(a_labels, &samples[cand].labels);
        let diff = differing_count(a_labels, &samples[cand].labels);
        let replace = match best {
            None => true,
            Some((_, bs, bd)) => same > bs || (same == bs && diff < bd),
        };
        if replace {
            best = Some((cand, same, diff));
        }
        // exact label match; diff is then 0 so the early exit always fires
        if a_labels == &samples[cand].labels && (diff < 2 || scanned >= cfg.search_limit) {
            return Ok(cand);
        }
    }
    match best {
        Some((idx, same, _)) => {
            if cfg.require_shared_positive && same == 0 && !a_labels.is_empty() {
                Err(Error::NoPositive { anchor: samples[anchor_idx].id.clone() })
            } else {
                Ok(idx)
            }
        }
        None => Err(Error::NoPositive { anchor: samples[anchor_idx].id.clone() }),
    }
}

/// Pick a negative label absent from A and P, then a random image carrying
/// it. Total label re-draws are capped at `search_limit * |vocab|`.
pub fn select_negative(
    anchor_idx: usize,
    positive_idx: usize,
    samples: &[Sample],
    vocab: &LabelVocabulary,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    let anchor = &samples[anchor_idx];
    let covered: BTreeSet<usize> = anchor
        .labels
        .union(&samples[positive_idx].labels)
        .copied()
        .collect();
    let admissible: Vec<usize> = (0..vocab.len()).filter(|l| !covered.contains(l)).collect();
    if admissible.is_empty() {
        return Err(Error::NoNegativeLabel { anchor: anchor.id.clone() });
    }
    let max_label_draws = cfg.search_limit.max(1) * vocab.len().max(1);
    for _ in 0..max_label_draws {
        let label = admissible[rng.gen_range(0..admissible.len())];
        for _ in 0..cfg.search_limit {
            let cand = rng.gen_range(0..samples.len());
            if samples[cand].labels.contains(&label) {
                return Ok((cand, label));
            }
        }
    }
    Err(Error::NegativeExhausted { anchor: anchor.id.clone() })
}

/// One triplet attempted per sample as anchor; anchors that cannot form a
/// valid triplet are skipped with a reason. Each anchor uses an independent
/// RNG stream so parallel and serial runs agree.
pub fn build_triplets(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    cfg: &SamplerConfig,
) -> Result<(Vec<Triplet>, Vec<(String, String)>)> {
    if samples.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let results: Vec<std::result::Result<Triplet, (String, String)>> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            let pos = select_positive(i, &order, samples, cfg)
                .map_err(|e| (samples[i].id.clone(), e.to_string()))?;
            let (neg, label) = select_negative(i, pos, samples, vocab, cfg, &mut rng)
                .map_err(|e| (samples[i].id.clone(), e.to_string()))?;
            Ok(Triplet {
                anchor: samples[i].id.clone(),
                positive: samples[pos].id.clone(),
                negative: samples[neg].id.clone(),
                negative_label: label,
            })
        })
        .collect();

    let mut triplets = Vec::new();
    let mut skips = Vec::new();
    for r in results {
        match r {
            Ok(t) => triplets.push(t),
            Err(skip) => skips.push(skip),
        }
    }
    Ok((triplets, skips))
}

/// Write triplets as CSV `anchor_id,positive_id,negative_id,negative_label`
/// with the label given by name.
pub fn write_triplets_csv(
    triplets: &[Triplet],
    vocab: &LabelVocabulary,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["anchor_id", "positive_id", "negative_id", "negative_label"])?;
    for t in triplets {
        w.write_record([
            t.anchor.as_str(),
            t.positive.as_str(),
            t.negative.as_str(),
            vocab.names[t.negative_label].as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
