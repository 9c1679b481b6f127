//! In-memory pipeline chaining: preprocess, triplets, siamese training,
//! block construction, fusion, and cross-validated evaluation. The CLI
//! persists each stage; this module is the shared engine, also used by the
//! channel-swap ablation which must re-run the chain per channel.

use std::collections::HashMap;

use crate::config::PipelineConfig;
use crate::dataset::{self, LabelVocabulary, Sample};
use crate::error::{Error, Result};
use crate::fusion::{self, FeatureBlock, Polyrepresentation, Provenance};
use crate::imageproc::{self, AugmentConfig, ThreeChannelImage};
use crate::mlab::{self, MetricsReport};
use crate::sampler::{self, Triplet};
use crate::siamese::{self, Network, TrainOutput};

/// Build the 3-channel inputs for every sample; optionally augment
/// (per-sample seed stream) and swap one channel across samples.
pub fn preprocess(
    samples: &[Sample],
    cfg: &PipelineConfig,
    swap_channel: Option<usize>,
) -> Result<Vec<ThreeChannelImage>> {
    let pre = &cfg.preprocess;
    let mut images = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut img = imageproc::build_three_channel(
            &s.image,
            s.precomputed_channel.as_ref(),
            pre.channel2_mode,
            pre.side,
        )?;
        if pre.augment_train {
            let aug = AugmentConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..pre.augment.clone()
            };
            img = imageproc::augment(&img, &aug);
        }
        images.push(img);
    }
    match swap_channel {
        Some(c) => imageproc::swap_channel(&images, c, cfg.seed.wrapping_add(0xab1a7e)),
        None => Ok(images),
    }
}

/// Mine one triplet per anchor; skipped anchors are returned with reasons.
pub fn triplets(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    cfg: &PipelineConfig,
) -> Result<(Vec<Triplet>, Vec<(String, String)>)> {
    let mut scfg = cfg.sampler.clone();
    scfg.seed = scfg.seed.wrapping_add(cfg.seed);
    sampler::build_triplets(samples, vocab, &scfg)
}

/// Patch-flattened encoder inputs keyed by sample id.
pub fn encoder_inputs(
    samples: &[Sample],
    images: &[ThreeChannelImage],
    patch: usize,
) -> Result<HashMap<String, Vec<f64>>> {
    let mut map = HashMap::with_capacity(samples.len());
    for (s, img) in samples.iter().zip(images) {
        map.insert(s.id.clone(), siamese::patch_flatten(img, patch)?);
    }
    Ok(map)
}

/// Train the siamese encoder on a train/validation split of the triplets.
pub fn train_siamese(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    images: &[ThreeChannelImage],
    trips: &[Triplet],
    cfg: &PipelineConfig,
) -> Result<TrainOutput> {
    if trips.is_empty() {
        return Err(Error::invalid("no triplets to train on"));
    }
    let enc = cfg
        .siamese
        .encoder
        .resolve(cfg.preprocess.side, vocab.len(), cfg.seed);
    let mut tcfg = cfg.siamese.train.clone();
    tcfg.seed = tcfg.seed.wrapping_add(cfg.seed);

    let inputs = encoder_inputs(samples, images, enc.patch)?;
    let y = dataset::label_matrix(samples, vocab);
    let c = vocab.len();
    let mut targets = HashMap::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        targets.insert(s.id.clone(), y[i * c..(i + 1) * c].to_vec());
    }

    let (train_idx, val_idx) = dataset::split(trips.len(), cfg.data.split_ratio, cfg.seed)?;
    let tr: Vec<Triplet> = train_idx.iter().map(|&i| trips[i].clone()).collect();
    let va: Vec<Triplet> = val_idx.iter().map(|&i| trips[i].clone()).collect();
    siamese::train(&enc, &tcfg, &tr, &va, &inputs, &targets)
}

/// Embeddings for every sample as the "siamese" feature block.
pub fn embed(
    samples: &[Sample],
    images: &[ThreeChannelImage],
    net: &Network,
) -> Result<FeatureBlock> {
    let flat: Vec<(String, Vec<f64>)> = samples
        .iter()
        .zip(images)
        .map(|(s, img)| Ok((s.id.clone(), siamese::patch_flatten(img, net.cfg.patch)?)))
        .collect::<Result<_>>()?;
    siamese::export_embeddings(net, &flat)
}

/// Age column as the "tabular" block; missing ages stay NaN for imputation.
pub fn tabular_block(samples: &[Sample]) -> Result<FeatureBlock> {
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let data: Vec<f64> = samples.iter().map(|s| s.age.unwrap_or(f64::NAN)).collect();
    FeatureBlock::new("tabular", ids, vec!["age".into()], data, Provenance::Tabular)
}

/// The external self-supervised block, MDS-reduced to the configured target.
pub fn selfsup_block(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    cfg: &PipelineConfig,
) -> Result<Option<FeatureBlock>> {
    let raw = if let Some(path) = &cfg.fusion.external_embeddings {
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        let (block, _unmatched) = fusion::load_external_embeddings(path, &ids)?;
        block
    } else if cfg.fusion.synthesize_external {
        let informative: Vec<usize> = (0..vocab.len()).collect();
        let dim = (2 * cfg.fusion.mds_dim).max(4);
        let rows = dataset::synthetic_embeddings(
            samples,
            &informative,
            dim,
            0.05,
            cfg.seed.wrapping_add(0x5e1f),
        );
        let ids: Vec<String> = rows.iter().map(|(id, _)| id.clone()).collect();
        let data: Vec<f64> = rows.into_iter().flat_map(|(_, v)| v).collect();
        let cols: Vec<String> = (0..dim).map(|j| format!("ext_{:03}", j)).collect();
        FeatureBlock::new("selfsup", ids, cols, data, Provenance::Selfsup)?
    } else {
        return Ok(None);
    };
    Ok(Some(reduce_selfsup(&raw, cfg.fusion.mds_dim)?))
}

/// MDS-reduce the observed rows of the external block; ids with no external
/// embedding stay as NaN rows for the kNN imputation at assembly.
pub fn reduce_selfsup(raw: &FeatureBlock, mds_dim: usize) -> Result<FeatureBlock> {
    let observed: Vec<usize> = (0..raw.n_rows())
        .filter(|&r| raw.row(r).iter().all(|v| !v.is_nan()))
        .collect();
    if observed.len() < 2 {
        return Err(Error::invalid("selfsup block needs at least 2 observed rows"));
    }
    let sub = FeatureBlock::new(
        raw.name.clone(),
        observed.iter().map(|&r| raw.ids[r].clone()).collect(),
        raw.columns.clone(),
        observed.iter().flat_map(|&r| raw.row(r).to_vec()).collect(),
        raw.provenance,
    )?;
    let dim = mds_dim
        .min(sub.n_cols())
        .min(sub.n_rows().saturating_sub(1))
        .max(1);
    let reduced = fusion::mds_reduce(&sub, dim)?;
    let mut data = vec![f64::NAN; raw.n_rows() * reduced.n_cols()];
    for (k, &r) in observed.iter().enumerate() {
        let w = reduced.n_cols();
        data[r * w..(r + 1) * w].copy_from_slice(reduced.row(k));
    }
    FeatureBlock::new(
        raw.name.clone(),
        raw.ids.clone(),
        reduced.columns.clone(),
        data,
        raw.provenance,
    )
}

/// Assemble the configured blocks into the fused matrix. `enabled_override`
/// restricts to a subset of configured blocks (for the report and ablations).
pub fn fuse(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    blocks: &[FeatureBlock],
    cfg: &PipelineConfig,
    enabled_override: Option<&[String]>,
) -> Result<Polyrepresentation> {
    let wanted = enabled_override.unwrap_or(&cfg.fusion.blocks);
    for w in wanted {
        if !blocks.iter().any(|b| &b.name == w) {
            return Err(Error::invalid(format!("block {:?} was not built", w)));
        }
    }
    let enabled: Vec<bool> = blocks.iter().map(|b| wanted.contains(&b.name)).collect();
    let labels = dataset::label_matrix(samples, vocab);
    fusion::assemble(blocks, &enabled, &labels, vocab.len(), cfg.fusion.knn_k)
}

/// Every block the config can produce, in canonical order.
pub fn build_blocks(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    images: &[ThreeChannelImage],
    cfg: &PipelineConfig,
) -> Result<Vec<FeatureBlock>> {
    let mut blocks = Vec::new();
    if cfg.fusion.blocks.iter().any(|b| b == "siamese") {
        let (trips, _skipped) = triplets(samples, vocab, cfg)?;
        let out = train_siamese(samples, vocab, images, &trips, cfg)?;
        blocks.push(embed(samples, images, &out.net)?);
    }
    if cfg.fusion.blocks.iter().any(|b| b == "selfsup") {
        if let Some(b) = selfsup_block(samples, vocab, cfg)? {
            blocks.push(b);
        }
    }
    if cfg.fusion.blocks.iter().any(|b| b == "radiomics") {
        blocks.push(crate::radiomics::extract_block(samples, &cfg.radiomics)?);
    }
    if cfg.fusion.blocks.iter().any(|b| b == "tabular") {
        blocks.push(tabular_block(samples)?);
    }
    Ok(blocks)
}

/// Full chain: preprocess -> blocks -> fuse -> cross-validated metrics.
pub fn run(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    cfg: &PipelineConfig,
    swap_channel: Option<usize>,
) -> Result<MetricsReport> {
    let images = preprocess(samples, cfg, swap_channel)?;
    let blocks = build_blocks(samples, vocab, &images, cfg)?;
    let polyrep = fuse(samples, vocab, &blocks, cfg, None)?;
    let folds = dataset::make_folds(samples.len(), cfg.data.n_folds, cfg.seed)?;
    mlab::cross_validate(&polyrep, &folds, &cfg.classifier)
}
