//! Polyrepresentation assembly: external embedding ingestion, classical MDS
//! reduction, nearest-neighbor imputation, min-max normalization, and block
//! concatenation. Missing values are represented as NaN.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source of a feature block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Siamese,
    Selfsup,
    Radiomics,
    Tabular,
}

/// A named samples x features matrix from one source. Rows are aligned to a
/// shared sample-id index; NaN marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub name: String,
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major, `ids.len() * columns.len()`.
    pub data: Vec<f64>,
    pub provenance: Provenance,
}

impl FeatureBlock {
    pub fn new(
        name: impl Into<String>,
        ids: Vec<String>,
        columns: Vec<String>,
        data: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        let name = name.into();
        if data.len() != ids.len() * columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "block {}: {} rows x {} cols needs {} values, got {}",
                name,
                ids.len(),
                columns.len(),
                ids.len() * columns.len(),
                data.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c) {
                return Err(Error::invalid(format!("block {}: duplicate column {}", name, c)));
            }
        }
        Ok(FeatureBlock { name, ids, columns, data, provenance })
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let c_n = self.n_cols();
        self.data[r * c_n + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols()..(r + 1) * self.n_cols()]
    }

    pub fn has_missing(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    /// Write as CSV with an `id` column followed by the named columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (r, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            for c in 0..self.n_cols() {
                let v = self.get(r, c);
                rec.push(if v.is_nan() { String::new() } else { format!("{}", v) });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Load external (self-supervised) embeddings from a CSV `id,e0,e1,...` and
/// align rows to `dataset_ids`. Samples absent from the file get all-missing
/// rows; ids in the file that match no sample are reported back.
pub fn load_external_embeddings(
    path: &Path,
    dataset_ids: &[String],
) -> Result<(FeatureBlock, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("id") {
        return Err(Error::invalid("external embeddings CSV must start with an id column"));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    if columns.is_empty() {
        return Err(Error::invalid("external embeddings CSV has no feature columns"));
    }

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let mut vals = Vec::with_capacity(columns.len());
        for j in 1..=columns.len() {
            let f = rec.get(j).unwrap_or("").trim();
            vals.push(if f.is_empty() {
                f64::NAN
            } else {
                f.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad value {:?} for id {}", f, id)))?
            });
        }
        rows.push((id, vals));
    }

    let mut data = vec![f64::NAN; dataset_ids.len() * columns.len()];
    let mut matched = 0usize;
    for (i, id) in dataset_ids.iter().enumerate() {
        if let Some((_, vals)) = rows.iter().find(|(rid, _)| rid == id) {
            data[i * columns.len()..(i + 1) * columns.len()].copy_from_slice(vals);
            matched += 1;
        }
    }
    if matched == 0 {
        return Err(Error::invalid("no overlapping ids between embeddings file and dataset"));
    }
    let dataset_set: HashSet<&String> = dataset_ids.iter().collect();
    let unmatched: Vec<String> = rows
        .iter()
        .filter(|(id, _)| !dataset_set.contains(id))
        .map(|(id, _)| id.clone())
        .collect();

    let block = FeatureBlock::new(
        "selfsup",
        dataset_ids.to_vec(),
        columns,
        data,
        Provenance::Selfsup,
    )?;
    Ok((block, unmatched))
}

/// Classical (Torgerson) MDS: double-center the squared Euclidean distance
/// matrix and keep the top eigenpairs with positive eigenvalues. The output
/// may be narrower than `target_dim` when fewer positive eigenvalues exist.
pub fn mds_reduce(block: &FeatureBlock, target_dim: usize) -> Result<FeatureBlock> {
    if target_dim < 1 {
        return Err(Error::invalid("target_dim must be >= 1"));
    }
    if block.has_missing() {
        return Err(Error::invalid("mds_reduce requires a block without missing values"));
    }
    let n = block.n_rows();
    if target_dim > n.saturating_sub(1).max(1) || target_dim > block.n_cols() {
        return Err(Error::invalid(format!(
            "target_dim {} exceeds min(n_samples-1, width) = {}",
            target_dim,
            (n.saturating_sub(1)).min(block.n_cols())
        )));
    }

    // squared distances
    let mut d2 = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for c in 0..block.n_cols() {
                let diff = block.get(i, c) - block.get(j, c);
                s += diff * diff;
            }
            d2[(i, j)] = s;
            d2[(j, i)] = s;
        }
    }

    // B = -1/2 J D2 J with J = I - 1/n 11^T
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut b = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand);
        }
    }

    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let tol = 1e-9 * eig.eigenvalues.iter().cloned().fold(1.0_f64, f64::max);
    let kept: Vec<usize> = order
        .into_iter()
        .take(target_dim)
        .filter(|&k| eig.eigenvalues[k] > tol)
        .collect();

    let mut data = vec![0.0; n * kept.len()];
    for (c, &k) in kept.iter().enumerate() {
        let scale = eig.eigenvalues[k].sqrt();
        for i in 0..n {
            data[i * kept.len() + c] = eig.eigenvectors[(i, k)] * scale;
        }
    }
    let columns = (0..kept.len()).map(|i| format!("{}_mds{:03}", block.name, i)).collect();
    FeatureBlock::new(block.name.clone(), block.ids.clone(), columns, data, block.provenance)
}

/// kNN imputation: for each missing cell (i, j), average the j values of the
/// k rows nearest to row i (Euclidean over columns observed in both rows)
/// among rows with column j observed. Rows sharing no observed column with i
/// fall back to the column mean. Ties break by row index.
pub fn knn_impute(block: &FeatureBlock, k: usize) -> Result<FeatureBlock> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let (n, m) = (block.n_rows(), block.n_cols());
    let mut col_means = vec![0.0; m];
    for j in 0..m {
        let vals: Vec<f64> = (0..n).map(|i| block.get(i, j)).filter(|v| !v.is_nan()).collect();
        if vals.is_empty() {
            return Err(Error::EmptyColumn(block.columns[j].clone()));
        }
        col_means[j] = vals.iter().sum::<f64>() / vals.len() as f64;
    }

    let mut out = block.clone();
    for i in 0..n {
        for j in 0..m {
            if !block.get(i, j).is_nan() {
                continue;
            }
            // distance to every candidate row with column j observed
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
            let v = if cands.is_empty() {
                col_means[j]
            } else {
                cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let take = k.min(cands.len());
                cands[..take].iter().map(|&(_, r)| block.get(r, j)).sum::<f64>() / take as f64
            };
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Per-column min/max statistics fit on one set of rows, reusable on
/// held-out folds (values are clamped to [0,1] on application).
#[derive(Debug, Clone)]
pub struct NormStats {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

pub fn fit_normalization(block: &FeatureBlock, rows: &[usize]) -> Result<NormStats> {
    if block.has_missing() {
        return Err(Error::invalid("normalization requires no missing values"));
    }
    let m = block.n_cols();
    let mut mins = vec![f64::INFINITY; m];
    let mut maxs = vec![f64::NEG_INFINITY; m];
    for &r in rows {
        for j in 0..m {
            let v = block.get(r, j);
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    Ok(NormStats { mins, maxs })
}

pub fn apply_normalization(block: &FeatureBlock, stats: &NormStats) -> FeatureBlock {
    let mut out = block.clone();
    let m = block.n_cols();
    for r in 0..block.n_rows() {
        for j in 0..m {
            let (lo, hi) = (stats.mins[j], stats.maxs[j]);
            let v = if hi > lo { (block.get(r, j) - lo) / (hi - lo) } else { 0.0 };
            out.set(r, j, v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Min-max normalize each column to [0,1] over all rows; constant columns
/// map to zeros.
pub fn minmax_normalize(block: &FeatureBlock) -> Result<FeatureBlock> {
    let rows: Vec<usize> = (0..block.n_rows()).collect();
    let stats = fit_normalization(block, &rows)?;
    Ok(apply_normalization(block, &stats))
}

/// Column span of one block inside the fused matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSpan {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

/// Ordered concatenation of enabled blocks plus the binary label matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polyrepresentation {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    /// Fused matrix, row-major, all values in [0,1], no missing values.
    pub fused: Vec<f64>,
    pub spans: Vec<BlockSpan>,
    /// Binary label matrix, row-major samples x labels.
    pub labels: Vec<f64>,
    pub n_labels: usize,
}

impl Polyrepresentation {
    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn span(&self, name: &str) -> Option<&BlockSpan> {
        self.spans.iter().find(|s| s.name == name)
    }
}

/// Impute, normalize, and concatenate the enabled blocks in declared order.
pub fn assemble(
    blocks: &[FeatureBlock],
    enabled: &[bool],
    labels: &[f64],
    n_labels: usize,
    knn_k: usize,
) -> Result<Polyrepresentation> {
    if blocks.len() != enabled.len() {
        return Err(Error::invalid("blocks and toggles length mismatch"));
    }
    let active: Vec<&FeatureBlock> = blocks
        .iter()
        .zip(enabled)
        .filter(|(_, &e)| e)
        .map(|(b, _)| b)
        .collect();
    if active.is_empty() {
        return Err(Error::invalid("at least one block must be enabled"));
    }
    let ids = active[0].ids.clone();
    for b in &active {
        if b.ids != ids {
            return Err(Error::invalid(format!("block {} rows are misaligned", b.name)));
        }
    }
    if labels.len() != ids.len() * n_labels {
        return Err(Error::ShapeMismatch("label matrix size".into()));
    }

    let mut columns = Vec::new();
    let mut spans = Vec::new();
    let mut prepared = Vec::new();
    for b in &active {
        let imputed = if b.has_missing() { knn_impute(b, knn_k)? } else { (*b).clone() };
        let normed = minmax_normalize(&imputed)?;
        let start = columns.len();
        columns.extend(normed.columns.iter().map(|c| format!("{}::{}", b.name, c)));
        spans.push(BlockSpan { name: b.name.clone(), start, end: columns.len() });
        prepared.push(normed);
    }

    let width = columns.len();
    let mut fused = vec![0.0; ids.len() * width];
    for (bi, b) in prepared.iter().enumerate() {
        let span = &spans[bi];
        for r in 0..ids.len() {
            for c in 0..b.n_cols() {
                fused[r * width + span.start + c] = b.get(r, c);
            }
        }
    }

    Ok(Polyrepresentation {
        ids,
        columns,
        fused,
        spans,
        labels: labels.to_vec(),
        n_labels,
    })
}
