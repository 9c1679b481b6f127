//! Acceptance suite: one test per acceptance criterion, each printing a
//! single pass/fail line. Oracles here are written independently of the
//! library code they check.

use std::collections::BTreeSet;

use polyrep_cli::Runner;
use polyrep_core::config::PipelineConfig;
use polyrep_core::dataset::{
    self, Carrier, LabelVocabulary, Sample, SyntheticLabel, SyntheticSpec,
};
use polyrep_core::explain;
use polyrep_core::fusion::{self, FeatureBlock, Provenance};
use polyrep_core::grid::Grid;
use polyrep_core::mlab::{self, BoostConfig};
use polyrep_core::radiomics::{self, RadiomicsConfig};
use polyrep_core::sampler::{self, SamplerConfig};
use polyrep_core::siamese::{self, EncoderConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(name: &str, pass: bool, detail: String) {
    if pass {
        println!("[ACCEPTANCE] {}: PASS", name);
    } else {
        println!("[ACCEPTANCE] {}: FAIL ({})", name, detail);
        panic!("{} failed: {}", name, detail);
    }
}

fn one_px_sample(id: String, labels: BTreeSet<usize>) -> Sample {
    Sample {
        id,
        image: Grid::filled(1, 1, 0.5),
        labels,
        mask: None,
        age: None,
        precomputed_channel: None,
    }
}

// Criterion 1: triplet invariants over >= 1e5 triplets plus chi-square
// uniformity of the negative-label draw. Budget < 30 s.
#[test]
fn acceptance_triplet_sampler_invariants() {
    let n_vocab = 10;
    let vocab = LabelVocabulary {
        names: (0..n_vocab).map(|i| format!("L{}", i)).collect(),
        counts: vec![0; n_vocab],
    };
    let mut total = 0usize;
    let mut violations = 0usize;
    let mut neg_counts = vec![0usize; n_vocab];
    let mut uniform_draws = 0usize;

    for ds in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + ds);
        let mut samples = Vec::new();
        // anchors with the fixed label set {0}: their negative-label draw is
        // uniform over labels 1..10
        for i in 0..600 {
            samples.push(one_px_sample(format!("a{}", i), BTreeSet::from([0usize])));
        }
        // a pool with random 1-3 labels from 1..10 supplies negatives
        for i in 0..400 {
            let k = rng.gen_range(1..=3);
            let mut labels = BTreeSet::new();
            while labels.len() < k {
                labels.insert(rng.gen_range(1..n_vocab));
            }
            samples.push(one_px_sample(format!("p{}", i), labels));
        }
        let cfg = SamplerConfig { seed: ds, ..Default::default() };
        let (trips, _skipped) = sampler::build_triplets(&samples, &vocab, &cfg).unwrap();
        let by_id = |id: &str| samples.iter().find(|s| s.id == id).unwrap();
        for t in &trips {
            total += 1;
            let a = by_id(&t.anchor);
            let p = by_id(&t.positive);
            let n = by_id(&t.negative);
            let union: BTreeSet<usize> = a.labels.union(&p.labels).copied().collect();
            if t.anchor == t.positive
                || union.contains(&t.negative_label)
                || !n.labels.contains(&t.negative_label)
            {
                violations += 1;
            }
            if a.labels == BTreeSet::from([0usize]) && p.labels == a.labels {
                neg_counts[t.negative_label] += 1;
                uniform_draws += 1;
            }
        }
    }

    // chi-square over the 9 admissible labels; critical value for df = 8 at
    // p = 0.01 is 20.09, so p > 0.01 <=> statistic < 20.09
    let expected = uniform_draws as f64 / 9.0;
    let chi2: f64 = (1..n_vocab)
        .map(|l| {
            let d = neg_counts[l] as f64 - expected;
            d * d / expected
        })
        .sum();

    check(
        "triplet-sampler-invariants",
        total >= 100_000 && violations == 0 && uniform_draws > 10_000 && chi2 < 20.09,
        format!(
            "total={} violations={} uniform_draws={} chi2={:.2}",
            total, violations, uniform_draws, chi2
        ),
    );
}

// Criterion 2: analytic vs central-difference gradients of the combined loss
// over 100 random configurations, max relative error < 1e-4. Budget < 60 s.
#[test]
fn acceptance_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut max_err = 0.0f64;
    for i in 0..100u64 {
        let widths: Vec<usize> = match rng.gen_range(0..3) {
            0 => vec![rng.gen_range(2..5)],
            1 => vec![rng.gen_range(2..4), rng.gen_range(2..4)],
            _ => vec![3, 2, 2],
        };
        let enc = EncoderConfig {
            input_hw: 8,
            channels_in: 3,
            patch: if rng.gen_bool(0.5) { 4 } else { 8 },
            embedding_dim: *widths.last().unwrap(),
            layer_widths: widths,
            n_labels: rng.gen_range(1..4),
            seed: i,
            l2_normalize: false,
        };
        let tcfg = TrainConfig::default();
        let err = siamese::gradcheck(&enc, &tcfg, 7 * i + 1).unwrap();
        max_err = max_err.max(err);
    }
    check(
        "gradient-correctness",
        max_err < 1e-4,
        format!("max relative error {:.3e}", max_err),
    );
}

// Criterion 3: exact loss hand cases.
#[test]
fn acceptance_loss_formula_regression() {
    // fA = fP, d(A,N)^2 = 4 -> max(0 - 4 + 1, 0) = 0
    let l1 = siamese::triplet_loss(&[0.0, 0.0], &[0.0, 0.0], &[2.0, 0.0], 1.0).unwrap();
    // all equal -> margin
    let l2 = siamese::triplet_loss(&[1.0], &[1.0], &[1.0], 1.0).unwrap();
    // d(A,P)^2 = 2, d(A,N)^2 = 0.5 -> 2 - 0.5 + 1 = 2.5
    let l3 = siamese::triplet_loss(&[0.0, 0.0], &[1.0, 1.0], &[0.5, 0.5], 1.0).unwrap();
    let total = siamese::total_loss(1.0, 0.5, &TrainConfig::default());
    check(
        "loss-formula-regression",
        l1 == 0.0 && l2 == 1.0 && l3 == 2.5 && (total - 0.9).abs() < 1e-15,
        format!("l1={} l2={} l3={} total={}", l1, l2, l3, total),
    );
}

// Criterion 4: 200-sample 64x64 3-label training run; validation total loss
// drops >= 30% from epoch 0 and held-out triplets order correctly. < 3 min.
#[test]
fn acceptance_desk_scale_siamese_training() {
    let spec = SyntheticSpec {
        image_size: 64,
        n_samples: 200,
        labels: vec![
            SyntheticLabel { name: "tex".into(), carrier: Carrier::Texture { sigma: 0.3 } },
            SyntheticLabel {
                name: "pat".into(),
                carrier: Carrier::Pattern { amplitude: 0.6, channel: 0 },
            },
            SyntheticLabel { name: "age".into(), carrier: Carrier::Age { threshold: 50.0 } },
        ],
        prevalence: 0.5,
        noise_sigma: 0.02,
    };
    let mut cfg = PipelineConfig::default();
    cfg.seed = 5;
    cfg.preprocess.side = 64;
    cfg.siamese.encoder.layer_widths = vec![16, 16];
    cfg.siamese.encoder.embedding_dim = 16;
    cfg.siamese.train.max_epochs = 100;
    cfg.siamese.train.early_stop_patience = 100;
    cfg.siamese.train.lr0 = 1e-3;

    let (samples, vocab) = dataset::generate_synthetic(&spec, cfg.seed).unwrap();
    let images = polyrep_core::pipeline::preprocess(&samples, &cfg, None).unwrap();
    let (trips, _) = polyrep_core::pipeline::triplets(&samples, &vocab, &cfg).unwrap();
    let out =
        polyrep_core::pipeline::train_siamese(&samples, &vocab, &images, &trips, &cfg).unwrap();

    let v0 = out.history[0].val_loss;
    let vbest = out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
    let drop = (v0 - vbest) / v0;

    // distance ordering on the validation triplets
    let enc = cfg.siamese.encoder.resolve(64, vocab.len(), cfg.seed);
    let inputs = polyrep_core::pipeline::encoder_inputs(&samples, &images, enc.patch).unwrap();
    let (_, val_idx) = dataset::split(trips.len(), cfg.data.split_ratio, cfg.seed).unwrap();
    let embed = |id: &str| out.net.encode(&inputs[id]).unwrap().0;
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut dap = 0.0;
    let mut dan = 0.0;
    for &i in &val_idx {
        let t = &trips[i];
        let (fa, fp, fn_) = (embed(&t.anchor), embed(&t.positive), embed(&t.negative));
        dap += dist2(&fa, &fp).sqrt();
        dan += dist2(&fa, &fn_).sqrt();
    }
    check(
        "desk-scale-siamese-training",
        drop >= 0.30 && dap < dan,
        format!("val drop {:.1}% mean d(A,P)={:.4} d(A,N)={:.4}", 100.0 * drop, dap, dan),
    );
}

// ---- independent radiomics oracles -----------------------------------------

fn oracle_quantize(vals: &[f64], v: f64, levels: usize) -> usize {
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 0;
    }
    let b = ((v - lo) / (hi - lo) * levels as f64) as usize;
    b.min(levels - 1)
}

fn oracle_percentile(vals: &[f64], q: f64) -> f64 {
    let mut s = vals.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if s.len() == 1 {
        return s[0];
    }
    let rank = q * (s.len() - 1) as f64;
    let lo = rank.floor() as usize;
    s[lo] + (rank - lo as f64) * (s[(lo + 1).min(s.len() - 1)] - s[lo])
}

fn oracle_firstorder(image: &Grid, mask: &Grid, levels: usize) -> Vec<f64> {
    let vals: Vec<f64> = (0..image.h)
        .flat_map(|y| (0..image.w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.get(y, x) > 0.0)
        .map(|(y, x)| image.get(y, x))
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let central = |k: i32| vals.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let var = central(2);
    let skew = if var > 0.0 { central(3) / var.powf(1.5) } else { 0.0 };
    let kurt = if var > 0.0 { central(4) / (var * var) } else { 0.0 };
    let energy: f64 = vals.iter().map(|v| v * v).sum();
    let mut hist = vec![0.0; levels];
    for &v in &vals {
        hist[oracle_quantize(&vals, v, levels)] += 1.0 / n;
    }
    let entropy = -hist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>();
    let uniformity: f64 = hist.iter().map(|&p| p * p).sum();
    let p10 = oracle_percentile(&vals, 0.10);
    let p90 = oracle_percentile(&vals, 0.90);
    let iqr = oracle_percentile(&vals, 0.75) - oracle_percentile(&vals, 0.25);
    let mad = vals.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    let robust: Vec<f64> = vals.iter().cloned().filter(|&v| (p10..=p90).contains(&v)).collect();
    let rmad = if robust.is_empty() {
        0.0
    } else {
        let rm = robust.iter().sum::<f64>() / robust.len() as f64;
        robust.iter().map(|v| (v - rm).abs()).sum::<f64>() / robust.len() as f64
    };
    let rms = (energy / n).sqrt();
    vec![
        mean,
        oracle_percentile(&vals, 0.5),
        min,
        max,
        max - min,
        var,
        var.sqrt(),
        skew,
        kurt,
        energy,
        entropy,
        uniformity,
        p10,
        p90,
        iqr,
        mad,
        rmad,
        rms,
    ]
}

fn oracle_shape(mask: &Grid) -> Vec<f64> {
    let mut px = Vec::new();
    for y in 0..mask.h {
        for x in 0..mask.w {
            if mask.get(y, x) > 0.0 {
                px.push((y as f64, x as f64));
            }
        }
    }
    let area = px.len() as f64;
    let inside = |y: f64, x: f64| {
        y >= 0.0
            && x >= 0.0
            && (y as usize) < mask.h
            && (x as usize) < mask.w
            && mask.get(y as usize, x as usize) > 0.0
    };
    let mut per = 0.0;
    for &(y, x) in &px {
        for (dy, dx) in [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)] {
            if !inside(y + dy, x + dx) {
                per += 1.0;
            }
        }
    }
    let cy = px.iter().map(|p| p.0).sum::<f64>() / area;
    let cx = px.iter().map(|p| p.1).sum::<f64>() / area;
    let (mut syy, mut sxx, mut sxy) = (0.0, 0.0, 0.0);
    for &(y, x) in &px {
        syy += (y - cy) * (y - cy);
        sxx += (x - cx) * (x - cx);
        sxy += (y - cy) * (x - cx);
    }
    let (cyy, cxx, cxy) = (syy / area, sxx / area, sxy / area);
    // eigenvalues of the 2x2 covariance
    let tr = (cyy + cxx) / 2.0;
    let d = (((cyy - cxx) / 2.0).powi(2) + cxy * cxy).sqrt();
    let (l1, l2) = ((tr + d).max(0.0), (tr - d).max(0.0));
    let (major, minor) = (4.0 * l1.sqrt(), 4.0 * l2.sqrt());
    let mut maxd: f64 = 0.0;
    for i in 0..px.len() {
        for j in 0..px.len() {
            let dd = ((px[i].0 - px[j].0).powi(2) + (px[i].1 - px[j].1).powi(2)).sqrt();
            maxd = maxd.max(dd);
        }
    }
    let y0 = px.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let y1 = px.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let x0 = px.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let x1 = px.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    vec![
        area,
        per,
        per / area,
        major,
        minor,
        if major > 0.0 { minor / major } else { 1.0 },
        4.0 * std::f64::consts::PI * area / (per * per),
        maxd,
        area / ((y1 - y0 + 1.0) * (x1 - x0 + 1.0)),
    ]
}

fn oracle_glcm(image: &Grid, mask: &Grid, cfg: &RadiomicsConfig) -> Vec<f64> {
    use std::collections::HashMap;
    let vals: Vec<f64> = (0..image.h)
        .flat_map(|y| (0..image.w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.get(y, x) > 0.0)
        .map(|(y, x)| image.get(y, x))
        .collect();
    let lv = cfg.gray_levels;
    let mut feats = Vec::new();
    for &(dy, dx) in &cfg.glcm_offsets {
        let mut counts: HashMap<(usize, usize), f64> = HashMap::new();
        let mut total = 0.0;
        for y in 0..image.h {
            for x in 0..image.w {
                let (ny, nx) = (y as i64 + dy as i64, x as i64 + dx as i64);
                if ny < 0 || nx < 0 || ny as usize >= image.h || nx as usize >= image.w {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                if mask.get(y, x) <= 0.0 || mask.get(ny, nx) <= 0.0 {
                    continue;
                }
                let i = oracle_quantize(&vals, image.get(y, x), lv);
                let j = oracle_quantize(&vals, image.get(ny, nx), lv);
                *counts.entry((i, j)).or_insert(0.0) += 1.0;
                total += 1.0;
                if cfg.symmetric {
                    *counts.entry((j, i)).or_insert(0.0) += 1.0;
                    total += 1.0;
                }
            }
        }
        if total == 0.0 {
            continue;
        }
        let p: Vec<((usize, usize), f64)> =
            counts.into_iter().map(|(k, v)| (k, v / total)).collect();
        let sum = |f: &dyn Fn(usize, usize, f64) -> f64| -> f64 {
            p.iter().map(|&((i, j), v)| f(i, j, v)).sum()
        };
        let mu_i = sum(&|i, _, v| i as f64 * v);
        let mu_j = sum(&|_, j, v| j as f64 * v);
        let var_i = sum(&|i, _, v| (i as f64 - mu_i).powi(2) * v);
        let var_j = sum(&|_, j, v| (j as f64 - mu_j).powi(2) * v);
        let cov = sum(&|i, j, v| (i as f64 - mu_i) * (j as f64 - mu_j) * v);
        feats.push(vec![
            sum(&|i, j, v| (i as f64 - j as f64).powi(2) * v),
            sum(&|i, j, v| (i as f64 - j as f64).abs() * v),
            sum(&|_, _, v| v * v),
            sum(&|i, j, v| v / (1.0 + (i as f64 - j as f64).powi(2))),
            -sum(&|_, _, v| if v > 0.0 { v * v.log2() } else { 0.0 }),
            if var_i > 0.0 && var_j > 0.0 {
                cov / (var_i.sqrt() * var_j.sqrt())
            } else {
                1.0
            },
        ]);
    }
    (0..6)
        .map(|f| feats.iter().map(|o| o[f]).sum::<f64>() / feats.len() as f64)
        .collect()
}

// Criterion 5: all 33 features match the brute-force oracles to 1e-9 on 100
// random 8x8 image/mask pairs, and are exactly translation invariant.
#[test]
fn acceptance_radiomics_oracle_equivalence() {
    let cfg = RadiomicsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let image = Grid::new(8, 8, (0..64).map(|_| rng.gen::<f64>()).collect()).unwrap();
        // random mask containing a guaranteed 2x2 block so GLCM pairs exist
        let mut mask = Grid::zeros(8, 8);
        let (oy, ox) = (rng.gen_range(0..6), rng.gen_range(0..6));
        for y in oy..oy + 2 {
            for x in ox..ox + 2 {
                mask.set(y, x, 1.0);
            }
        }
        for _ in 0..rng.gen_range(0..20) {
            mask.set(rng.gen_range(0..8), rng.gen_range(0..8), 1.0);
        }

        let got: Vec<f64> = radiomics::firstorder(&image, &mask, cfg.gray_levels)
            .unwrap()
            .into_iter()
            .chain(radiomics::shape2d(&mask).unwrap())
            .chain(radiomics::glcm(&image, &mask, &cfg).unwrap())
            .collect();
        let want: Vec<f64> = oracle_firstorder(&image, &mask, cfg.gray_levels)
            .into_iter()
            .chain(oracle_shape(&mask))
            .chain(oracle_glcm(&image, &mask, &cfg))
            .collect();
        assert_eq!(got.len(), 33);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }

    // translation invariance: identical content shifted inside a larger canvas
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let patch: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
    let make = |oy: usize, ox: usize| {
        let mut img = Grid::filled(12, 12, 0.11);
        let mut mask = Grid::zeros(12, 12);
        for y in 0..4 {
            for x in 0..4 {
                img.set(oy + y, ox + x, patch[y * 4 + x]);
                if (y + x) % 3 != 0 {
                    mask.set(oy + y, ox + x, 1.0);
                }
            }
        }
        (img, mask)
    };
    let (ia, ma) = make(1, 2);
    let (ib, mb) = make(6, 5);
    let fa: Vec<f64> = radiomics::firstorder(&ia, &ma, 16)
        .unwrap()
        .into_iter()
        .chain(radiomics::shape2d(&ma).unwrap())
        .chain(radiomics::glcm(&ia, &ma, &cfg).unwrap())
        .collect();
    let fb: Vec<f64> = radiomics::firstorder(&ib, &mb, 16)
        .unwrap()
        .into_iter()
        .chain(radiomics::shape2d(&mb).unwrap())
        .chain(radiomics::glcm(&ib, &mb, &cfg).unwrap())
        .collect();

    check(
        "radiomics-oracle-equivalence",
        worst < 1e-9 && fa == fb,
        format!("max abs diff {:.3e}, translation equal={}", worst, fa == fb),
    );
}

// Criterion 6: MDS reproduces exactly-embeddable distances to RMSE < 1e-6.
#[test]
fn acceptance_mds_fidelity() {
    let dist_rmse = |a: &FeatureBlock, b: &FeatureBlock| -> f64 {
        let n = a.n_rows();
        let mut se = 0.0;
        let mut count = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let da: f64 = (0..a.n_cols())
                    .map(|c| (a.get(i, c) - a.get(j, c)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let db: f64 = (0..b.n_cols())
                    .map(|c| (b.get(i, c) - b.get(j, c)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                se += (da - db) * (da - db);
                count += 1.0;
            }
        }
        (se / count).sqrt()
    };

    // collinear points in 5-D reduce to 1-D exactly
    let n = 15;
    let v = [1.0, -2.0, 0.5, 3.0, -1.0];
    let data: Vec<f64> = (0..n).flat_map(|i| v.iter().map(move |&c| c * i as f64)).collect();
    let cols: Vec<String> = (0..5).map(|c| format!("c{}", c)).collect();
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let line = FeatureBlock::new("l", ids, cols, data, Provenance::Selfsup).unwrap();
    let line1 = fusion::mds_reduce(&line, 1).unwrap();
    let rmse_line = dist_rmse(&line, &line1);

    // random k-D clouds reduced to k dims
    let mut worst_cloud = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3;
        let n = 20;
        let data: Vec<f64> = (0..n * k).map(|_| rng.gen::<f64>() * 4.0).collect();
        let cols: Vec<String> = (0..k).map(|c| format!("c{}", c)).collect();
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let cloud = FeatureBlock::new("c", ids, cols, data, Provenance::Selfsup).unwrap();
        let red = fusion::mds_reduce(&cloud, k).unwrap();
        worst_cloud = worst_cloud.max(dist_rmse(&cloud, &red));
    }
    check(
        "mds-fidelity",
        rmse_line < 1e-6 && worst_cloud < 1e-6,
        format!("line RMSE {:.3e}, cloud RMSE {:.3e}", rmse_line, worst_cloud),
    );
}

/// Exhaustive-search oracle for the documented kNN imputation contract.
fn oracle_knn_impute(block: &FeatureBlock, k: usize) -> Vec<f64> {
    let (n, m) = (block.n_rows(), block.n_cols());
    let mut out = block.data.clone();
    for i in 0..n {
        for j in 0..m {
            if !block.get(i, j).is_nan() {
                continue;
            }
            // candidates: rows with column j observed, distance over columns
            // observed in both rows
            let mut cands: Vec<(f64, usize)> = Vec::new();
            for r in 0..n {
                if r == i || block.get(r, j).is_nan() {
                    continue;
                }
                let mut s = 0.0;
                let mut shared = 0usize;
                for c in 0..m {
                    let a = block.get(i, c);
                    let b = block.get(r, c);
                    if !a.is_nan() && !b.is_nan() {
                        s += (a - b) * (a - b);
                        shared += 1;
                    }
                }
                if shared > 0 {
                    cands.push((s.sqrt(), r));
                }
            }
            let val = if cands.is_empty() {
                let obs: Vec<f64> =
                    (0..n).map(|r| block.get(r, j)).filter(|v| !v.is_nan()).collect();
                obs.iter().sum::<f64>() / obs.len() as f64
            } else {
                cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let take = k.min(cands.len());
                cands[..take].iter().map(|&(_, r)| block.get(r, j)).sum::<f64>() / take as f64
            };
            out[i * m + j] = val;
        }
    }
    out
}

// Criterion 7: kNN imputation matches the exhaustive oracle; min-max
// normalization hits the pinned examples.
#[test]
fn acceptance_imputation_normalization() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (10, 4);
        let mut data: Vec<f64> = (0..n * m).map(|_| rng.gen::<f64>() * 3.0).collect();
        for _ in 0..4 {
            // ~10% missing
            data[rng.gen_range(0..n * m)] = f64::NAN;
        }
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let cols: Vec<String> = (0..m).map(|c| format!("c{}", c)).collect();
        let block = FeatureBlock::new("b", ids, cols, data, Provenance::Tabular).unwrap();
        let got = fusion::knn_impute(&block, 3).unwrap();
        let want = oracle_knn_impute(&block, 3);
        for (g, w) in got.data.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }

    let block = FeatureBlock::new(
        "m",
        vec!["a".into(), "b".into(), "c".into()],
        vec!["v".into(), "k".into()],
        vec![2.0, 7.0, 4.0, 7.0, 6.0, 7.0],
        Provenance::Tabular,
    )
    .unwrap();
    let norm = fusion::minmax_normalize(&block).unwrap();
    let ramp_ok = norm.get(0, 0) == 0.0 && norm.get(1, 0) == 0.5 && norm.get(2, 0) == 1.0;
    let const_ok = (0..3).all(|r| norm.get(r, 1) == 0.0);

    check(
        "imputation-normalization",
        worst < 1e-12 && ramp_ok && const_ok,
        format!("impute diff {:.3e} ramp_ok={} const_ok={}", worst, ramp_ok, const_ok),
    );
}

// Criterion 8: frozen metric example exact; shuffled-label CV AUC 0.5 +- 0.05.
#[test]
fn acceptance_metric_regression() {
    let y_true = vec![1.0, 0.0, 0.0, 1.0];
    let y_pred = vec![1.0, 0.0, 1.0, 1.0];
    let (m, _) = mlab::metrics(&y_true, &y_pred, &y_pred, 2).unwrap();
    let frozen_ok = m.subset_accuracy == 0.5 && (m.f1_macro - 5.0 / 6.0).abs() < 1e-12;

    // labels carrying no signal: CV macro AUC must hover at 0.5
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 400;
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let cols: Vec<String> = (0..5).map(|c| format!("f{}", c)).collect();
    let data: Vec<f64> = (0..n * 5).map(|_| rng.gen()).collect();
    let labels: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.5) as i32 as f64).collect();
    let block = FeatureBlock::new("x", ids, cols, data, Provenance::Tabular).unwrap();
    let poly = fusion::assemble(&[block], &[true], &labels, 1, 3).unwrap();
    let folds = dataset::make_folds(n, 5, 0).unwrap();
    let cfg = BoostConfig { n_rounds: 20, ..Default::default() };
    let rep = mlab::cross_validate(&poly, &folds, &cfg).unwrap();
    let auc = rep.mean.roc_auc_macro;

    check(
        "metric-regression",
        frozen_ok && (auc - 0.5).abs() <= 0.05,
        format!("frozen_ok={} shuffled-label AUC {:.4}", frozen_ok, auc),
    );
}

// Criterion 9: with complementary per-block signal, fusing all blocks is at
// least as good (within 0.02 F1 macro) as the best single block, 5 seeds.
#[test]
fn acceptance_polyrepresentation_benefit() {
    let cfg = BoostConfig { n_rounds: 30, min_samples_leaf: 3, ..Default::default() };
    let mut ok = true;
    let mut detail = String::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = 150;
        let c = 3;
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let mut labels = vec![0.0; n * c];
        for v in labels.iter_mut() {
            *v = rng.gen_bool(0.5) as i32 as f64;
        }
        // block k is informative for label k only
        let mut blocks = Vec::new();
        for k in 0..c {
            let mut data = Vec::with_capacity(n * 2);
            for i in 0..n {
                let y = labels[i * c + k];
                data.push(y + 0.3 * rng.gen::<f64>());
                data.push(rng.gen::<f64>());
            }
            blocks.push(
                FeatureBlock::new(
                    format!("b{}", k),
                    ids.clone(),
                    vec![format!("s{}", k), format!("n{}", k)],
                    data,
                    Provenance::Tabular,
                )
                .unwrap(),
            );
        }
        let folds = dataset::make_folds(n, 5, seed).unwrap();
        let eval = |enabled: [bool; 3]| -> f64 {
            let poly = fusion::assemble(&blocks, &enabled, &labels, c, 3).unwrap();
            mlab::cross_validate(&poly, &folds, &cfg).unwrap().mean.f1_macro
        };
        let all = eval([true, true, true]);
        let singles = [
            eval([true, false, false]),
            eval([false, true, false]),
            eval([false, false, true]),
        ];
        let best_single = singles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if all < best_single - 0.02 {
            ok = false;
        }
        detail.push_str(&format!("seed {}: all={:.3} best_single={:.3}; ", seed, all, best_single));
    }
    check("polyrepresentation-benefit", ok, detail);
}

// Criterion 10: with signal planted only in channel 2, swapping channel 2 is
// the most damaging swap in at least 4 of 5 seeded runs.
#[test]
fn acceptance_ablation_direction() {
    let mut hits = 0;
    let mut detail = String::new();
    for seed in 0..5u64 {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 20 + seed;
        cfg.data.synthetic = Some(SyntheticSpec {
            image_size: 16,
            n_samples: 40,
            labels: vec![
                SyntheticLabel {
                    name: "p0".into(),
                    carrier: Carrier::Pattern { amplitude: 0.8, channel: 2 },
                },
                SyntheticLabel {
                    name: "p1".into(),
                    carrier: Carrier::Pattern { amplitude: 0.8, channel: 2 },
                },
            ],
            prevalence: 0.5,
            noise_sigma: 0.02,
        });
        cfg.data.n_folds = 4;
        cfg.preprocess.side = 16;
        cfg.preprocess.channel2_mode = polyrep_core::imageproc::Channel2Mode::Precomputed;
        cfg.siamese.encoder.layer_widths = vec![16, 8];
        cfg.siamese.encoder.embedding_dim = 8;
        cfg.siamese.train.max_epochs = 6;
        cfg.siamese.train.lr0 = 1e-3;
        cfg.fusion.blocks = vec!["siamese".into()];
        cfg.classifier.n_rounds = 30;
        cfg.classifier.min_samples_leaf = 3;

        let (samples, vocab) =
            dataset::generate_synthetic(cfg.data.synthetic.as_ref().unwrap(), cfg.seed).unwrap();
        let rows = explain::channel_ablation(&samples, &vocab, &cfg).unwrap();
        let ch = |k: usize| {
            rows.iter().find(|r| r.channel == Some(k)).unwrap().pct_accuracy_change
        };
        let (c0, c1, c2) = (ch(0), ch(1), ch(2));
        if c2 < c0 && c2 < c1 {
            hits += 1;
        }
        detail.push_str(&format!("seed {}: [{:.1} {:.1} {:.1}]; ", seed, c0, c1, c2));
    }
    check("ablation-direction", hits >= 4, format!("{} of 5 runs; {}", hits, detail));
}

// Criterion 11: pure-noise block importance within +-2 points of 0; dominant
// signal block below -5 points.
#[test]
fn acceptance_importance_sanity() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 150;
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let mut labels = Vec::with_capacity(n);
    let mut sig = Vec::with_capacity(n * 2);
    let mut noise = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let y = rng.gen_bool(0.5) as i32 as f64;
        labels.push(y);
        sig.push(y + 0.05 * rng.gen::<f64>());
        sig.push(1.0 - y + 0.05 * rng.gen::<f64>());
        for _ in 0..3 {
            noise.push(rng.gen::<f64>());
        }
    }
    let b_sig = FeatureBlock::new(
        "signal",
        ids.clone(),
        vec!["a".into(), "b".into()],
        sig,
        Provenance::Siamese,
    )
    .unwrap();
    let b_noise = FeatureBlock::new(
        "noise",
        ids,
        vec!["x".into(), "y".into(), "z".into()],
        noise,
        Provenance::Tabular,
    )
    .unwrap();
    let poly = fusion::assemble(&[b_sig, b_noise], &[true, true], &labels, 1, 3).unwrap();
    let folds = dataset::make_folds(n, 5, 2).unwrap();
    let cfg = BoostConfig { n_rounds: 25, min_samples_leaf: 3, ..Default::default() };
    let imp = explain::block_importance(&poly, &folds, &cfg, 10, 13).unwrap();
    let get = |name: &str| imp.iter().find(|b| b.block == name).unwrap().mean_pct_change;
    let (s, z) = (get("signal"), get("noise"));
    check(
        "importance-sanity",
        z.abs() <= 2.0 && s < -5.0,
        format!("signal {:+.2}%, noise {:+.2}%", s, z),
    );
}

// Criterion 12: repeated e2e runs with fixed seeds produce byte-identical
// metrics.json.
#[test]
fn acceptance_determinism() {
    let cfg = PipelineConfig::from_path(std::path::Path::new(&format!(
        "{}/../../configs/synthetic.json",
        env!("CARGO_MANIFEST_DIR")
    )))
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    Runner::new(cfg.clone(), tmp.path(), "r1", false).e2e().unwrap();
    Runner::new(cfg, tmp.path(), "r2", false).e2e().unwrap();
    let a = std::fs::read(tmp.path().join("r1/train-eval/metrics.json")).unwrap();
    let b = std::fs::read(tmp.path().join("r2/train-eval/metrics.json")).unwrap();
    check(
        "determinism",
        a == b,
        format!("metrics.json sizes {} vs {}", a.len(), b.len()),
    );
}
