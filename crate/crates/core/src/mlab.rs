//! One-vs-rest gradient-boosted regression trees on the fused
//! representation, the multi-label metric suite, and k-fold evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset::FoldAssignment;
use crate::error::{Error, Result};
use crate::fusion::Polyrepresentation;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostConfig {
    #[serde(default = "default_rounds")]
    pub n_rounds: usize,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_min_leaf")]
    pub min_samples_leaf: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Swap the boosted trees for a one-vs-rest logistic-regression
    /// cross-check.
    #[serde(default)]
    pub baseline_logistic: bool,
}

fn default_rounds() -> usize {
    100
}
fn default_depth() -> usize {
    3
}
fn default_lr() -> f64 {
    0.1
}
fn default_min_leaf() -> usize {
    5
}
fn default_threshold() -> f64 {
    0.5
}

impl Default for BoostConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::invalid("boosting counts must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(Error::invalid("threshold must be in (0,1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, threshold, left, right } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const LEAF_CLAMP: f64 = 4.0;
const HESS_EPS: f64 = 1e-6;

fn leaf_value(rows: &[usize], grad: &[f64], hess: &[f64]) -> f64 {
    let g: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h: f64 = rows.iter().map(|&i| hess[i]).sum();
    (g / (h + HESS_EPS)).clamp(-LEAF_CLAMP, LEAF_CLAMP)
}

/// Best split by squared-error reduction of the gradient targets; ties break
/// toward the lowest feature index and threshold.
fn best_split(
    x: &[f64],
    width: usize,
    rows: &[usize],
    grad: &[f64],
    min_leaf: usize,
) -> Option<(usize, f64, Vec<usize>, Vec<usize>)> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| grad[i]).sum();
    let mut best: Option<(f64, usize, f64)> = None;

    let mut order: Vec<usize> = rows.to_vec();
    for f in 0..width {
        order.sort_by(|&a, &b| {
            x[a * width + f]
                .partial_cmp(&x[b * width + f])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut left_sum = 0.0;
        for (k, &i) in order.iter().enumerate().take(n - 1) {
            left_sum += grad[i];
            let v = x[i * width + f];
            let v_next = x[order[k + 1] * width + f];
            if v == v_next {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            // variance reduction up to constants: sum_l^2/n_l + sum_r^2/n_r
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
            let thr = (v + v_next) / 2.0;
            let better = match best {
                None => true,
                Some((bg, bf, bt)) => {
                    gain > bg + 1e-12 || ((gain - bg).abs() <= 1e-12 && (f, thr) < (bf, bt))
                }
            };
            if better {
                best = Some((gain, f, thr));
            }
        }
    }

    let (_, f, thr) = best?;
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for &i in rows {
        if x[i * width + f] <= thr {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    Some((f, thr, left, right))
}

fn build_tree(
    x: &[f64],
    width: usize,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    depth: usize,
    cfg: &BoostConfig,
) -> Node {
    if depth == 0 {
        return Node::Leaf(leaf_value(rows, grad, hess));
    }
    match best_split(x, width, rows, grad, cfg.min_samples_leaf) {
        None => Node::Leaf(leaf_value(rows, grad, hess)),
        Some((feature, threshold, left, right)) => Node::Split {
            feature,
            threshold,
            left: Box::new(build_tree(x, width, &left, grad, hess, depth - 1, cfg)),
            right: Box::new(build_tree(x, width, &right, grad, hess, depth - 1, cfg)),
        },
    }
}

#[derive(Debug, Clone)]
struct LabelModel {
    bias: f64,
    trees: Vec<Node>,
    /// Logistic-baseline weights, used instead of trees when set.
    linear: Option<Vec<f64>>,
}

/// One ensemble (or linear model) per label.
#[derive(Debug, Clone)]
pub struct Model {
    width: usize,
    labels: Vec<LabelModel>,
    pub warnings: Vec<String>,
}

fn fit_linear(x: &[f64], width: usize, y: &[f64], bias0: f64) -> (f64, Vec<f64>) {
    // plain gradient descent on logistic loss
    let n = y.len();
    let mut w = vec![0.0; width];
    let mut b = bias0;
    let lr = 0.5;
    for _ in 0..200 {
        let mut gw = vec![0.0; width];
        let mut gb = 0.0;
        for i in 0..n {
            let row = &x[i * width..(i + 1) * width];
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let e = sigmoid(z) - y[i];
            gb += e;
            for (g, &a) in gw.iter_mut().zip(row) {
                *g += e * a;
            }
        }
        b -= lr * gb / n as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n as f64;
        }
    }
    (b, w)
}

/// Fit one boosted ensemble per label to the logistic loss.
pub fn fit(x: &[f64], width: usize, y: &[f64], n_labels: usize, cfg: &BoostConfig) -> Result<Model> {
    cfg.validate()?;
    if width == 0 {
        return Err(Error::invalid("no features"));
    }
    let n = if width > 0 { x.len() / width } else { 0 };
    if y.len() != n * n_labels {
        return Err(Error::ShapeMismatch("label matrix".into()));
    }
    for &v in y {
        if v != 0.0 && v != 1.0 {
            return Err(Error::invalid("labels must be binary"));
        }
    }

    let mut warnings = Vec::new();
    let mut labels = Vec::with_capacity(n_labels);
    let rows: Vec<usize> = (0..n).collect();
    for c in 0..n_labels {
        let yc: Vec<f64> = (0..n).map(|i| y[i * n_labels + c]).collect();
        let pos = yc.iter().sum::<f64>();
        let prior = (pos / n as f64).clamp(1e-6, 1.0 - 1e-6);
        let bias = (prior / (1.0 - prior)).ln();
        if pos == 0.0 || pos == n as f64 {
            warnings.push(format!(
                "label {} has a single class; model is the constant prior",
                c
            ));
            labels.push(LabelModel { bias, trees: Vec::new(), linear: None });
            continue;
        }
        if cfg.baseline_logistic {
            let (b, w) = fit_linear(x, width, &yc, bias);
            labels.push(LabelModel { bias: b, trees: Vec::new(), linear: Some(w) });
            continue;
        }
        let mut score = vec![bias; n];
        let mut trees = Vec::with_capacity(cfg.n_rounds);
        for _ in 0..cfg.n_rounds {
            let mut grad = vec![0.0; n];
            let mut hess = vec![0.0; n];
            for i in 0..n {
                let p = sigmoid(score[i]);
                grad[i] = yc[i] - p;
                hess[i] = p * (1.0 - p);
            }
            let tree = build_tree(x, width, &rows, &grad, &hess, cfg.max_depth, cfg);
            for i in 0..n {
                score[i] += cfg.learning_rate * tree.predict(&x[i * width..(i + 1) * width]);
            }
            trees.push(tree);
        }
        // fold the shrinkage into the stored leaves
        let trees = trees
            .into_iter()
            .map(|t| scale_tree(t, cfg.learning_rate))
            .collect();
        labels.push(LabelModel { bias, trees, linear: None });
    }
    Ok(Model { width, labels, warnings })
}

fn scale_tree(node: Node, s: f64) -> Node {
    match node {
        Node::Leaf(v) => Node::Leaf(v * s),
        Node::Split { feature, threshold, left, right } => Node::Split {
            feature,
            threshold,
            left: Box::new(scale_tree(*left, s)),
            right: Box::new(scale_tree(*right, s)),
        },
    }
}

/// Per-label probabilities, row-major samples x labels.
pub fn predict_proba(model: &Model, x: &[f64], width: usize) -> Result<Vec<f64>> {
    if width != model.width {
        return Err(Error::ShapeMismatch(format!(
            "model expects width {}, got {}",
            model.width, width
        )));
    }
    let n = x.len() / width;
    let c = model.labels.len();
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let row = &x[i * width..(i + 1) * width];
        for (j, lm) in model.labels.iter().enumerate() {
            let mut z = lm.bias;
            if let Some(w) = &lm.linear {
                z += row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            } else {
                for t in &lm.trees {
                    z += t.predict(row);
                }
            }
            out[i * c + j] = sigmoid(z);
        }
    }
    Ok(out)
}

/// Mean logistic loss over all labels and samples (training diagnostic).
pub fn logistic_loss(probs: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    probs
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if t == 1.0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub subset_accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub precision_macro: f64,
    pub precision_weighted: f64,
    pub recall_macro: f64,
    pub recall_weighted: f64,
    pub roc_auc_macro: f64,
}

pub const METRIC_NAMES: [&str; 8] = [
    "subset_accuracy",
    "f1_macro",
    "f1_weighted",
    "precision_macro",
    "precision_weighted",
    "recall_macro",
    "recall_weighted",
    "roc_auc_macro",
];

impl MetricsEntry {
    pub fn as_vec(&self) -> [f64; 8] {
        [
            self.subset_accuracy,
            self.f1_macro,
            self.f1_weighted,
            self.precision_macro,
            self.precision_weighted,
            self.recall_macro,
            self.recall_weighted,
            self.roc_auc_macro,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_fold: Vec<MetricsEntry>,
    pub mean: MetricsEntry,
    pub warnings: Vec<String>,
}

/// Rank-statistic ROC AUC with 0.5 credit for ties.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let n = scores.len();
    let npos = labels.iter().filter(|&&l| l == 1.0).count();
    if npos == 0 || npos == n {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie groups, ranks starting at 1
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = (0..n).filter(|&i| labels[i] == 1.0).map(|i| ranks[i]).sum();
    let nneg = n - npos;
    Some((pos_rank_sum - (npos * (npos + 1)) as f64 / 2.0) / (npos * nneg) as f64)
}

/// Multi-label metrics over binary predictions and scores; 0/0 precision or
/// recall cases are 0; AUC macro-averages only labels with both classes.
pub fn metrics(
    y_true: &[f64],
    y_pred: &[f64],
    y_scores: &[f64],
    n_labels: usize,
) -> Result<(MetricsEntry, Vec<String>)> {
    if y_true.len() != y_pred.len() || y_true.len() != y_scores.len() {
        return Err(Error::ShapeMismatch("metrics inputs".into()));
    }
    let n = y_true.len() / n_labels.max(1);
    let mut warnings = Vec::new();

    let mut exact = 0usize;
    for i in 0..n {
        let row_true = &y_true[i * n_labels..(i + 1) * n_labels];
        let row_pred = &y_pred[i * n_labels..(i + 1) * n_labels];
        if row_true == row_pred {
            exact += 1;
        }
    }
    let subset_accuracy = exact as f64 / n.max(1) as f64;

    let mut precisions = vec![0.0; n_labels];
    let mut recalls = vec![0.0; n_labels];
    let mut f1s = vec![0.0; n_labels];
    let mut supports = vec![0.0; n_labels];
    let mut aucs = Vec::new();
    for c in 0..n_labels {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for i in 0..n {
            let t = y_true[i * n_labels + c];
            let p = y_pred[i * n_labels + c];
            if t == 1.0 && p == 1.0 {
                tp += 1.0;
            } else if t == 0.0 && p == 1.0 {
                fp += 1.0;
            } else if t == 1.0 && p == 0.0 {
                fn_ += 1.0;
            }
        }
        supports[c] = tp + fn_;
        precisions[c] = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        recalls[c] = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        f1s[c] = if precisions[c] + recalls[c] > 0.0 {
            2.0 * precisions[c] * recalls[c] / (precisions[c] + recalls[c])
        } else {
            0.0
        };

        let col_scores: Vec<f64> = (0..n).map(|i| y_scores[i * n_labels + c]).collect();
        let col_true: Vec<f64> = (0..n).map(|i| y_true[i * n_labels + c]).collect();
        match roc_auc(&col_scores, &col_true) {
            Some(a) => aucs.push(a),
            None => warnings.push(format!("label {} has a single class; excluded from AUC", c)),
        }
    }

    let macro_mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let total_support: f64 = supports.iter().sum();
    let weighted = |v: &[f64]| {
        if total_support > 0.0 {
            v.iter().zip(&supports).map(|(a, s)| a * s).sum::<f64>() / total_support
        } else {
            0.0
        }
    };
    let roc_auc_macro = if aucs.is_empty() { 0.5 } else { macro_mean(&aucs) };

    Ok((
        MetricsEntry {
            subset_accuracy,
            f1_macro: macro_mean(&f1s),
            f1_weighted: weighted(&f1s),
            precision_macro: macro_mean(&precisions),
            precision_weighted: weighted(&precisions),
            recall_macro: macro_mean(&recalls),
            recall_weighted: weighted(&recalls),
            roc_auc_macro,
        },
        warnings,
    ))
}

fn mean_entry(entries: &[MetricsEntry]) -> MetricsEntry {
    let k = entries.len().max(1) as f64;
    let sum = |f: fn(&MetricsEntry) -> f64| entries.iter().map(f).sum::<f64>() / k;
    MetricsEntry {
        subset_accuracy: sum(|e| e.subset_accuracy),
        f1_macro: sum(|e| e.f1_macro),
        f1_weighted: sum(|e| e.f1_weighted),
        precision_macro: sum(|e| e.precision_macro),
        precision_weighted: sum(|e| e.precision_weighted),
        recall_macro: sum(|e| e.recall_macro),
        recall_weighted: sum(|e| e.recall_weighted),
        roc_auc_macro: sum(|e| e.roc_auc_macro),
    }
}

pub(crate) fn normalize_fold(
    x: &[f64],
    width: usize,
    train_rows: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let mut mins = vec![f64::INFINITY; width];
    let mut maxs = vec![f64::NEG_INFINITY; width];
    for &r in train_rows {
        for j in 0..width {
            let v = x[r * width + j];
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    (mins, maxs)
}

pub(crate) fn transform(
    x: &[f64],
    width: usize,
    rows: &[usize],
    mins: &[f64],
    maxs: &[f64],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        for j in 0..width {
            let v = if maxs[j] > mins[j] {
                ((x[r * width + j] - mins[j]) / (maxs[j] - mins[j])).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out.push(v);
        }
    }
    out
}

pub(crate) fn gather_labels(y: &[f64], n_labels: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * n_labels);
    for &r in rows {
        out.extend_from_slice(&y[r * n_labels..(r + 1) * n_labels]);
    }
    out
}

/// Per-fold fit/predict/metrics with normalization statistics re-fit on each
/// training fold.
pub fn cross_validate(
    polyrep: &Polyrepresentation,
    folds: &FoldAssignment,
    cfg: &BoostConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if folds.assignment.len() != polyrep.n_rows() {
        return Err(Error::ShapeMismatch("fold assignment length".into()));
    }
    let width = polyrep.n_cols();
    let c = polyrep.n_labels;
    let mut per_fold = Vec::new();
    let mut warnings = Vec::new();
    for fold in 0..folds.n_folds {
        let train_rows = folds.train_indices(fold);
        let test_rows = folds.test_indices(fold);
        let (mins, maxs) = normalize_fold(&polyrep.fused, width, &train_rows);
        let x_train = transform(&polyrep.fused, width, &train_rows, &mins, &maxs);
        let x_test = transform(&polyrep.fused, width, &test_rows, &mins, &maxs);
        let y_train = gather_labels(&polyrep.labels, c, &train_rows);
        let y_test = gather_labels(&polyrep.labels, c, &test_rows);

        let model = fit(&x_train, width, &y_train, c, cfg)?;
        warnings.extend(model.warnings.iter().map(|w| format!("fold {}: {}", fold, w)));
        let scores = predict_proba(&model, &x_test, width)?;
        let preds: Vec<f64> = scores
            .iter()
            .map(|&p| if p >= cfg.threshold { 1.0 } else { 0.0 })
            .collect();
        let (entry, mwarn) = metrics(&y_test, &preds, &scores, c)?;
        warnings.extend(mwarn.into_iter().map(|w| format!("fold {}: {}", fold, w)));
        per_fold.push(entry);
    }
    let mean = mean_entry(&per_fold);
    Ok(MetricsReport { per_fold, mean, warnings })
}
