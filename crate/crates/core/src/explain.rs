//! Grouped permutation importance over feature blocks, the channel-swap
//! ablation study, and the PCA feature visualization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::PipelineConfig;
use crate::dataset::{FoldAssignment, LabelVocabulary, Sample};
use crate::error::{Error, Result};
use crate::fusion::{FeatureBlock, Polyrepresentation};
use crate::grid::Grid;
use crate::mlab::{self, BoostConfig};
use crate::pipeline;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockImportance {
    pub block: String,
    /// Mean of 100*(AUC_permuted - AUC_baseline)/AUC_baseline over folds and
    /// repeats; negative means the block helps.
    pub mean_pct_change: f64,
    pub std: f64,
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Grouped permutation importance: per fold, permute each block's rows as a
/// unit within the test fold and measure the macro ROC AUC change.
pub fn block_importance(
    polyrep: &Polyrepresentation,
    folds: &FoldAssignment,
    cfg: &BoostConfig,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<BlockImportance>> {
    if n_repeats < 1 {
        return Err(Error::invalid("n_repeats must be >= 1"));
    }
    let width = polyrep.n_cols();
    let c = polyrep.n_labels;

    // canonicalize the column order (blocks sorted by name) so the fitted
    // model — and thus the importances — cannot depend on declaration order
    let mut spans: Vec<crate::fusion::BlockSpan> = polyrep.spans.clone();
    spans.sort_by(|a, b| a.name.cmp(&b.name));
    let col_order: Vec<usize> = spans.iter().flat_map(|s| s.start..s.end).collect();
    let mut fused = vec![0.0; polyrep.fused.len()];
    for r in 0..polyrep.n_rows() {
        for (new_c, &old_c) in col_order.iter().enumerate() {
            fused[r * width + new_c] = polyrep.fused[r * width + old_c];
        }
    }
    let mut start = 0;
    for s in &mut spans {
        let w = s.end - s.start;
        s.start = start;
        s.end = start + w;
        start += w;
    }

    // per-block deltas across folds x repeats
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); spans.len()];
    for fold in 0..folds.n_folds {
        let train_rows = folds.train_indices(fold);
        let test_rows = folds.test_indices(fold);
        if test_rows.len() < 2 {
            return Err(Error::invalid(format!("fold {} has fewer than 2 test samples", fold)));
        }
        let (mins, maxs) = mlab::normalize_fold(&fused, width, &train_rows);
        let x_train = mlab::transform(&fused, width, &train_rows, &mins, &maxs);
        let x_test = mlab::transform(&fused, width, &test_rows, &mins, &maxs);
        let y_train = mlab::gather_labels(&polyrep.labels, c, &train_rows);
        let y_test = mlab::gather_labels(&polyrep.labels, c, &test_rows);

        let model = mlab::fit(&x_train, width, &y_train, c, cfg)?;
        let base_scores = mlab::predict_proba(&model, &x_test, width)?;
        let base_auc = macro_auc(&base_scores, &y_test, c);
        if base_auc == 0.0 {
            return Err(Error::invalid("baseline AUC is zero; cannot form a % change"));
        }

        let n_test = test_rows.len();
        for (bi, span) in spans.iter().enumerate() {
            // seeding by block name keeps importance independent of the
            // order in which blocks were declared
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&span.name));
            rng.set_stream(fold as u64 + 1);
            for _ in 0..n_repeats {
                let mut perm: Vec<usize> = (0..n_test).collect();
                perm.shuffle(&mut rng);
                let mut x_perm = x_test.clone();
                for (r, &src) in perm.iter().enumerate() {
                    for col in span.start..span.end {
                        x_perm[r * width + col] = x_test[src * width + col];
                    }
                }
                let scores = mlab::predict_proba(&model, &x_perm, width)?;
                let auc = macro_auc(&scores, &y_test, c);
                deltas[bi].push(100.0 * (auc - base_auc) / base_auc);
            }
        }
    }

    Ok(spans
        .iter()
        .zip(&deltas)
        .map(|(span, d)| {
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64;
            BlockImportance {
                block: span.name.clone(),
                mean_pct_change: mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

fn macro_auc(scores: &[f64], y: &[f64], n_labels: usize) -> f64 {
    let n = y.len() / n_labels.max(1);
    let mut aucs = Vec::new();
    for c in 0..n_labels {
        let s: Vec<f64> = (0..n).map(|i| scores[i * n_labels + c]).collect();
        let t: Vec<f64> = (0..n).map(|i| y[i * n_labels + c]).collect();
        if let Some(a) = mlab::roc_auc(&s, &t) {
            aucs.push(a);
        }
    }
    if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

pub fn write_importance_csv(rows: &[BlockImportance], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["block", "mean_pct_change", "std"])?;
    for r in rows {
        w.write_record([
            r.block.clone(),
            format!("{}", r.mean_pct_change),
            format!("{}", r.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelAblation {
    /// None is the no-swap control row.
    pub channel: Option<usize>,
    pub subset_accuracy: f64,
    pub pct_accuracy_change: f64,
}

/// Re-run the full chain with each channel swapped across samples and report
/// the % subset-accuracy change against the no-swap control.
pub fn channel_ablation(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    cfg: &PipelineConfig,
) -> Result<Vec<ChannelAblation>> {
    let base = pipeline::run(samples, vocab, cfg, None)?;
    let base_acc = base.mean.subset_accuracy;
    let mut out = vec![ChannelAblation {
        channel: None,
        subset_accuracy: base_acc,
        pct_accuracy_change: 0.0,
    }];
    for ch in 0..3 {
        let rep = pipeline::run(samples, vocab, cfg, Some(ch))?;
        let acc = rep.mean.subset_accuracy;
        let pct = if base_acc > 0.0 {
            100.0 * (acc - base_acc) / base_acc
        } else {
            0.0
        };
        out.push(ChannelAblation {
            channel: Some(ch),
            subset_accuracy: acc,
            pct_accuracy_change: pct,
        });
    }
    Ok(out)
}

pub fn write_ablation_csv(rows: &[ChannelAblation], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["channel", "subset_accuracy", "pct_accuracy_change"])?;
    for r in rows {
        let ch = r.channel.map_or("none".to_string(), |c| c.to_string());
        w.write_record([
            ch,
            format!("{}", r.subset_accuracy),
            format!("{}", r.pct_accuracy_change),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Samples projected onto their first 3 principal components, reshaped to a
/// side x side image per component, each channel scaled to [0, 255].
/// Rank-deficient blocks get zero channels and a warning.
pub fn visualize_features(
    block: &FeatureBlock,
    side: usize,
) -> Result<([Grid; 3], Vec<String>)> {
    if block.n_cols() < 3 {
        return Err(Error::invalid("visualization needs at least 3 feature columns"));
    }
    if side * side > block.n_rows() {
        return Err(Error::invalid(format!(
            "side {} needs {} rows, block has {}",
            side,
            side * side,
            block.n_rows()
        )));
    }
    if block.has_missing() {
        return Err(Error::invalid("visualization requires a block without missing values"));
    }
    let (n, m) = (block.n_rows(), block.n_cols());

    // column-centered data
    let mut means = vec![0.0; m];
    for j in 0..m {
        means[j] = (0..n).map(|i| block.get(i, j)).sum::<f64>() / n as f64;
    }
    let xc = nalgebra::DMatrix::from_fn(n, m, |i, j| block.get(i, j) - means[j]);
    let cov = (xc.transpose() * &xc) / (n as f64 - 1.0).max(1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let scale = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(1.0);
    let mut warnings = Vec::new();
    let mut channels: Vec<Grid> = Vec::with_capacity(3);
    for k in 0..3 {
        let ev = eig.eigenvalues[order[k]];
        let mut g = Grid::zeros(side, side);
        if ev <= 1e-10 * scale {
            warnings.push(format!(
                "component {} has negligible variance; channel zero-padded",
                k
            ));
            channels.push(g);
            continue;
        }
        let v = eig.eigenvectors.column(order[k]);
        let mut scores = Vec::with_capacity(side * side);
        for i in 0..side * side {
            scores.push(xc.row(i).transpose().dot(&v));
        }
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, s) in scores.iter().enumerate() {
            let val = if hi > lo { 255.0 * (s - lo) / (hi - lo) } else { 0.0 };
            g.data[i] = val;
        }
        channels.push(g);
    }
    let arr: [Grid; 3] = channels.try_into().map_err(|_| Error::invalid("internal"))?;
    Ok((arr, warnings))
}

/// Write the three component channels as an RGB PNG.
pub fn write_visualization_png(channels: &[Grid; 3], path: &Path) -> Result<()> {
    let (h, w) = (channels[0].h, channels[0].w);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                channels[0].get(y, x).round().clamp(0.0, 255.0) as u8,
                channels[1].get(y, x).round().clamp(0.0, 255.0) as u8,
                channels[2].get(y, x).round().clamp(0.0, 255.0) as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}
