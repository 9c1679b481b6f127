//! Interpretable features from (image, mask) pairs: first-order intensity
//! statistics, 2-D shape descriptors, and GLCM texture features.
//!
//! Conventions pinned here so an oracle can match them exactly:
//! variance/skewness/kurtosis are population moments (skewness and kurtosis
//! are 0 for constant regions); percentiles interpolate linearly at rank
//! q*(n-1); the intensity histogram uses `gray_levels` equal-width bins over
//! the masked min-max range; perimeter counts foreground/background pixel
//! edges; GLCM correlation is 1 when either marginal deviation is zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::fusion::{FeatureBlock, Provenance};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFamily {
    Firstorder,
    Shape,
    Glcm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiomicsConfig {
    #[serde(default = "default_gray_levels")]
    pub gray_levels: usize,
    #[serde(default = "default_offsets")]
    pub glcm_offsets: Vec<(i32, i32)>,
    #[serde(default = "default_symmetric")]
    pub symmetric: bool,
    #[serde(default = "default_families")]
    pub feature_families: Vec<FeatureFamily>,
}

fn default_gray_levels() -> usize {
    16
}
fn default_offsets() -> Vec<(i32, i32)> {
    vec![(0, 1), (1, 0), (1, 1), (1, -1)]
}
fn default_symmetric() -> bool {
    true
}
fn default_families() -> Vec<FeatureFamily> {
    vec![FeatureFamily::Firstorder, FeatureFamily::Shape, FeatureFamily::Glcm]
}

impl Default for RadiomicsConfig {
    fn default() -> Self {
        RadiomicsConfig {
            gray_levels: default_gray_levels(),
            glcm_offsets: default_offsets(),
            symmetric: default_symmetric(),
            feature_families: default_families(),
        }
    }
}

impl RadiomicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gray_levels < 2 {
            return Err(Error::invalid("gray_levels must be >= 2"));
        }
        if self.glcm_offsets.iter().any(|&(dy, dx)| dy == 0 && dx == 0) {
            return Err(Error::invalid("glcm offsets must be nonzero"));
        }
        Ok(())
    }
}

pub const FIRSTORDER_NAMES: [&str; 18] = [
    "mean", "median", "min", "max", "range", "variance", "std", "skewness", "kurtosis",
    "energy", "entropy", "uniformity", "p10", "p90", "iqr", "mad", "rmad", "rms",
];

pub const SHAPE_NAMES: [&str; 9] = [
    "area", "perimeter", "perimeter_area_ratio", "major_axis", "minor_axis", "elongation",
    "circularity", "max_diameter", "bbox_extent",
];

pub const GLCM_NAMES: [&str; 6] = [
    "contrast", "dissimilarity", "energy", "homogeneity", "entropy", "correlation",
];

fn masked_values(image: &Grid, mask: &Grid) -> Result<Vec<f64>> {
    if !image.same_shape(mask) {
        return Err(Error::ShapeMismatch("image/mask".into()));
    }
    let vals: Vec<f64> = image
        .data
        .iter()
        .zip(&mask.data)
        .filter(|(_, &m)| m > 0.0)
        .map(|(&v, _)| v)
        .collect();
    if vals.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(vals)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn histogram_probs(vals: &[f64], levels: usize) -> Vec<f64> {
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; levels];
    for &v in vals {
        let bin = if hi > lo {
            (((v - lo) / (hi - lo) * levels as f64) as usize).min(levels - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    let n = vals.len() as f64;
    counts.iter().map(|&c| c as f64 / n).collect()
}

/// 18 first-order statistics over the masked intensities.
pub fn firstorder(image: &Grid, mask: &Grid, gray_levels: usize) -> Result<Vec<f64>> {
    let mut vals = masked_values(image, mask)?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = vals[0];
    let max = vals[vals.len() - 1];
    let median = percentile(&vals, 0.5);
    let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = vals.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };
    let energy = vals.iter().map(|v| v * v).sum::<f64>();
    let probs = histogram_probs(&vals, gray_levels);
    let entropy = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>();
    let uniformity = probs.iter().map(|&p| p * p).sum::<f64>();
    let p10 = percentile(&vals, 0.1);
    let p90 = percentile(&vals, 0.9);
    let iqr = percentile(&vals, 0.75) - percentile(&vals, 0.25);
    let mad = vals.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    let robust: Vec<f64> = vals.iter().copied().filter(|&v| v >= p10 && v <= p90).collect();
    let rmad = if robust.is_empty() {
        0.0
    } else {
        let rmean = robust.iter().sum::<f64>() / robust.len() as f64;
        robust.iter().map(|v| (v - rmean).abs()).sum::<f64>() / robust.len() as f64
    };
    let rms = (vals.iter().map(|v| v * v).sum::<f64>() / n).sqrt();

    Ok(vec![
        mean, median, min, max, max - min, m2, m2.sqrt(), skewness, kurtosis, energy, entropy,
        uniformity, p10, p90, iqr, mad, rmad, rms,
    ])
}

/// 9 mask-only shape descriptors.
pub fn shape2d(mask: &Grid) -> Result<Vec<f64>> {
    let pixels: Vec<(usize, usize)> = (0..mask.h)
        .flat_map(|y| (0..mask.w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.get(y, x) > 0.0)
        .collect();
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let area = pixels.len() as f64;

    let mut perimeter = 0.0;
    for &(y, x) in &pixels {
        let neighbors = [
            (y as isize - 1, x as isize),
            (y as isize + 1, x as isize),
            (y as isize, x as isize - 1),
            (y as isize, x as isize + 1),
        ];
        for (ny, nx) in neighbors {
            let fg = ny >= 0
                && nx >= 0
                && (ny as usize) < mask.h
                && (nx as usize) < mask.w
                && mask.get(ny as usize, nx as usize) > 0.0;
            if !fg {
                perimeter += 1.0;
            }
        }
    }

    let cy = pixels.iter().map(|&(y, _)| y as f64).sum::<f64>() / area;
    let cx = pixels.iter().map(|&(_, x)| x as f64).sum::<f64>() / area;
    let mut cyy = 0.0;
    let mut cxx = 0.0;
    let mut cxy = 0.0;
    for &(y, x) in &pixels {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        cyy += dy * dy;
        cxx += dx * dx;
        cxy += dy * dx;
    }
    cyy /= area;
    cxx /= area;
    cxy /= area;
    let tr = (cyy + cxx) / 2.0;
    let det = (((cyy - cxx) / 2.0).powi(2) + cxy * cxy).sqrt();
    let l1 = (tr + det).max(0.0);
    let l2 = (tr - det).max(0.0);
    let major = 4.0 * l1.sqrt();
    let minor = 4.0 * l2.sqrt();
    let elongation = if major > 0.0 { minor / major } else { 1.0 };
    let circularity = 4.0 * std::f64::consts::PI * area / (perimeter * perimeter);

    let mut max_d2 = 0.0_f64;
    for i in 0..pixels.len() {
        for j in (i + 1)..pixels.len() {
            let dy = pixels[i].0 as f64 - pixels[j].0 as f64;
            let dx = pixels[i].1 as f64 - pixels[j].1 as f64;
            max_d2 = max_d2.max(dy * dy + dx * dx);
        }
    }

    let (y0, y1) = pixels.iter().fold((usize::MAX, 0), |(a, b), &(y, _)| (a.min(y), b.max(y)));
    let (x0, x1) = pixels.iter().fold((usize::MAX, 0), |(a, b), &(_, x)| (a.min(x), b.max(x)));
    let bbox_extent = area / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;

    Ok(vec![
        area,
        perimeter,
        perimeter / area,
        major,
        minor,
        elongation,
        circularity,
        max_d2.sqrt(),
        bbox_extent,
    ])
}

/// 6 GLCM texture features averaged over the configured offsets.
pub fn glcm(image: &Grid, mask: &Grid, cfg: &RadiomicsConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let vals = masked_values(image, mask)?;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let levels = cfg.gray_levels;
    let quantize = |v: f64| -> usize {
        if hi > lo {
            (((v - lo) / (hi - lo) * levels as f64) as usize).min(levels - 1)
        } else {
            0
        }
    };

    let mut per_offset: Vec<Vec<f64>> = Vec::new();
    for &(dy, dx) in &cfg.glcm_offsets {
        let mut counts = vec![0.0_f64; levels * levels];
        let mut total = 0.0;
        for y in 0..mask.h as i32 {
            for x in 0..mask.w as i32 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= mask.h as i32 || nx >= mask.w as i32 {
                    continue;
                }
                if mask.get(y as usize, x as usize) <= 0.0
                    || mask.get(ny as usize, nx as usize) <= 0.0
                {
                    continue;
                }
                let i = quantize(image.get(y as usize, x as usize));
                let j = quantize(image.get(ny as usize, nx as usize));
                counts[i * levels + j] += 1.0;
                total += 1.0;
                if cfg.symmetric {
                    counts[j * levels + i] += 1.0;
                    total += 1.0;
                }
            }
        }
        if total == 0.0 {
            continue;
        }
        for c in &mut counts {
            *c /= total;
        }

        let p = |i: usize, j: usize| counts[i * levels + j];
        let mut contrast = 0.0;
        let mut dissimilarity = 0.0;
        let mut energy = 0.0;
        let mut homogeneity = 0.0;
        let mut entropy = 0.0;
        let mut mu_i = 0.0;
        let mut mu_j = 0.0;
        for i in 0..levels {
            for j in 0..levels {
                let pij = p(i, j);
                let d = i as f64 - j as f64;
                contrast += pij * d * d;
                dissimilarity += pij * d.abs();
                energy += pij * pij;
                homogeneity += pij / (1.0 + d * d);
                if pij > 0.0 {
                    entropy -= pij * pij.log2();
                }
                mu_i += pij * i as f64;
                mu_j += pij * j as f64;
            }
        }
        let mut var_i = 0.0;
        let mut var_j = 0.0;
        let mut cov = 0.0;
        for i in 0..levels {
            for j in 0..levels {
                let pij = p(i, j);
                var_i += pij * (i as f64 - mu_i).powi(2);
                var_j += pij * (j as f64 - mu_j).powi(2);
                cov += pij * (i as f64 - mu_i) * (j as f64 - mu_j);
            }
        }
        let correlation = if var_i > 0.0 && var_j > 0.0 {
            cov / (var_i.sqrt() * var_j.sqrt())
        } else {
            1.0
        };
        per_offset.push(vec![contrast, dissimilarity, energy, homogeneity, entropy, correlation]);
    }

    if per_offset.is_empty() {
        return Err(Error::invalid("mask forms no valid pixel pair for any offset"));
    }
    let k = per_offset.len() as f64;
    Ok((0..6)
        .map(|f| per_offset.iter().map(|o| o[f]).sum::<f64>() / k)
        .collect())
}

/// Column names for the enabled families, in stable order.
pub fn column_names(cfg: &RadiomicsConfig) -> Vec<String> {
    let mut cols = Vec::new();
    for fam in &cfg.feature_families {
        match fam {
            FeatureFamily::Firstorder => {
                cols.extend(FIRSTORDER_NAMES.iter().map(|n| format!("firstorder_{}", n)))
            }
            FeatureFamily::Shape => cols.extend(SHAPE_NAMES.iter().map(|n| format!("shape_{}", n))),
            FeatureFamily::Glcm => cols.extend(GLCM_NAMES.iter().map(|n| format!("glcm_{}", n))),
        }
    }
    cols
}

fn extract_row(sample: &Sample, cfg: &RadiomicsConfig, width: usize) -> Vec<f64> {
    let mask = match &sample.mask {
        Some(m) => m,
        None => return vec![f64::NAN; width],
    };
    let mut row = Vec::with_capacity(width);
    for fam in &cfg.feature_families {
        let vals = match fam {
            FeatureFamily::Firstorder => firstorder(&sample.image, mask, cfg.gray_levels),
            FeatureFamily::Shape => shape2d(mask),
            FeatureFamily::Glcm => glcm(&sample.image, mask, cfg),
        };
        match vals {
            Ok(v) => row.extend(v),
            Err(_) => {
                let n = match fam {
                    FeatureFamily::Firstorder => FIRSTORDER_NAMES.len(),
                    FeatureFamily::Shape => SHAPE_NAMES.len(),
                    FeatureFamily::Glcm => GLCM_NAMES.len(),
                };
                row.extend(std::iter::repeat(f64::NAN).take(n));
            }
        }
    }
    row
}

/// One row per sample; per-sample failures become missing values for the
/// imputation stage.
pub fn extract_block(samples: &[Sample], cfg: &RadiomicsConfig) -> Result<FeatureBlock> {
    cfg.validate()?;
    let columns = column_names(cfg);
    let width = columns.len();
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| extract_row(s, cfg, width))
        .collect();
    let mut data = Vec::with_capacity(samples.len() * width);
    for r in rows {
        data.extend(r);
    }
    FeatureBlock::new(
        "radiomics",
        samples.iter().map(|s| s.id.clone()).collect(),
        columns,
        data,
        Provenance::Radiomics,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_mask(h: usize, w: usize) -> Grid {
        Grid::filled(h, w, 1.0)
    }

    #[test]
    fn firstorder_hand_case() {
        let image = Grid::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let f = firstorder(&image, &full_mask(1, 3), 16).unwrap();
        assert_eq!(f[0], 2.0); // mean
        assert_eq!(f[4], 2.0); // range
        assert!((f[5] - 2.0 / 3.0).abs() < 1e-12); // population variance
        assert_eq!(f[9], 14.0); // energy
    }

    #[test]
    fn firstorder_constant_region() {
        let image = Grid::filled(3, 3, 5.0);
        let f = firstorder(&image, &full_mask(3, 3), 16).unwrap();
        assert_eq!(f[5], 0.0); // variance
        assert_eq!(f[10], 0.0); // entropy
        assert_eq!(f[11], 1.0); // uniformity
        assert_eq!(f[7], 0.0); // skewness
    }

    #[test]
    fn firstorder_empty_mask_errors() {
        let image = Grid::filled(2, 2, 1.0);
        assert!(matches!(
            firstorder(&image, &Grid::zeros(2, 2), 16),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn shape_single_pixel() {
        let mut mask = Grid::zeros(3, 3);
        mask.set(1, 1, 1.0);
        let f = shape2d(&mask).unwrap();
        assert_eq!(f[0], 1.0); // area
        assert_eq!(f[1], 4.0); // perimeter
        assert_eq!(f[8], 1.0); // bbox extent
        assert_eq!(f[7], 0.0); // max diameter
        assert_eq!(f[5], 1.0); // elongation convention for a point
    }

    #[test]
    fn shape_square() {
        let mut mask = Grid::zeros(4, 4);
        for y in 1..3 {
            for x in 1..3 {
                mask.set(y, x, 1.0);
            }
        }
        let f = shape2d(&mask).unwrap();
        assert_eq!(f[0], 4.0);
        assert_eq!(f[1], 8.0);
        assert!((f[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_translation_invariant() {
        let mut a = Grid::zeros(8, 8);
        let mut b = Grid::zeros(8, 8);
        for (y, x) in [(1, 1), (1, 2), (2, 1), (3, 2)] {
            a.set(y, x, 1.0);
            b.set(y + 3, x + 4, 1.0);
        }
        assert_eq!(shape2d(&a).unwrap(), shape2d(&b).unwrap());
    }

    #[test]
    fn glcm_two_row_hand_case() {
        let image = Grid::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let cfg = RadiomicsConfig {
            gray_levels: 2,
            glcm_offsets: vec![(0, 1)],
            symmetric: true,
            ..Default::default()
        };
        let f = glcm(&image, &full_mask(2, 2), &cfg).unwrap();
        assert_eq!(f[0], 0.0); // contrast
        assert_eq!(f[2], 0.5); // energy
    }

    #[test]
    fn glcm_constant_image() {
        let image = Grid::filled(3, 3, 2.0);
        let cfg = RadiomicsConfig::default();
        let f = glcm(&image, &full_mask(3, 3), &cfg).unwrap();
        assert_eq!(f[0], 0.0); // contrast
        assert_eq!(f[3], 1.0); // homogeneity
        assert_eq!(f[4], 0.0); // entropy
        assert_eq!(f[5], 1.0); // correlation convention
    }

    #[test]
    fn glcm_degenerate_mask_errors() {
        let image = Grid::filled(3, 3, 1.0);
        let mut mask = Grid::zeros(3, 3);
        mask.set(0, 0, 1.0);
        let cfg = RadiomicsConfig::default();
        assert!(glcm(&image, &mask, &cfg).is_err());
    }

    #[test]
    fn extract_block_shape_and_missing() {
        use std::collections::BTreeSet;
        let cfg = RadiomicsConfig::default();
        let mk = |with_mask: bool, id: &str| crate::dataset::Sample {
            id: id.into(),
            image: Grid::new(8, 8, (0..64).map(|i| (i % 7) as f64).collect()).unwrap(),
            labels: BTreeSet::new(),
            mask: with_mask.then(|| full_mask(8, 8)),
            age: None,
            precomputed_channel: None,
        };
        let samples = vec![mk(true, "a"), mk(false, "b"), mk(true, "c")];
        let block = extract_block(&samples, &cfg).unwrap();
        assert_eq!(block.n_cols(), 33);
        assert!(block.row(1).iter().all(|v| v.is_nan()));
        assert_eq!(block.row(0), block.row(2)); // identical inputs, identical rows
        assert!(block.row(0).iter().all(|v| v.is_finite()));
    }
}
