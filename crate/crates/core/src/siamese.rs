//! Shared-weight encoder for the A/P/N branches, the triplet and soft-margin
//! losses, their 0.8/0.2 combination, Adam training with a halving schedule
//! and early stopping, finite-difference gradient verification, and
//! embedding export.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FeatureBlock, Provenance};
use crate::imageproc::ThreeChannelImage;
use crate::sampler::Triplet;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Input side length; the 3-channel image must be square with this side.
    pub input_hw: usize,
    #[serde(default = "default_channels")]
    pub channels_in: usize,
    /// Patch side for the patch-order flattening; must divide `input_hw`.
    #[serde(default = "default_patch")]
    pub patch: usize,
    /// Fully-connected widths; the last entry is the embedding dimension.
    pub layer_widths: Vec<usize>,
    pub embedding_dim: usize,
    pub n_labels: usize,
    pub seed: u64,
    /// L2-normalize exported embeddings.
    #[serde(default)]
    pub l2_normalize: bool,
}

fn default_channels() -> usize {
    3
}
fn default_patch() -> usize {
    8
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::invalid("layer_widths must not be empty"));
        }
        if *self.layer_widths.last().unwrap() != self.embedding_dim {
            return Err(Error::invalid("final layer width must equal embedding_dim"));
        }
        if self.embedding_dim < 1 || self.n_labels < 1 {
            return Err(Error::invalid("embedding_dim and n_labels must be >= 1"));
        }
        if self.patch == 0 || self.input_hw % self.patch != 0 {
            return Err(Error::invalid("patch must divide input_hw"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.channels_in * self.input_hw * self.input_hw
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_half")]
    pub lr_half_every: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_w_siamese")]
    pub w_siamese: f64,
    #[serde(default = "default_w_classif")]
    pub w_classif: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr0() -> f64 {
    2e-4
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    120
}
fn default_half() -> usize {
    5
}
fn default_patience() -> usize {
    10
}
fn default_w_siamese() -> f64 {
    0.8
}
fn default_w_classif() -> f64 {
    0.2
}
fn default_margin() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.w_siamese + self.w_classif - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("loss weights must sum to 1"));
        }
        if self.margin <= 0.0 {
            return Err(Error::invalid("margin must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.lr_half_every == 0 {
            return Err(Error::invalid("counts must be positive"));
        }
        Ok(())
    }

    /// lr(e) = lr0 * 0.5^floor(e / lr_half_every)
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * 0.5_f64.powi((epoch / self.lr_half_every) as i32)
    }
}

/// Fully-connected encoder with one shared parameter vector: tanh between
/// hidden layers, linear final layer to the embedding, linear head on top.
#[derive(Debug, Clone)]
pub struct Network {
    pub cfg: EncoderConfig,
    pub params: Vec<f64>,
    // (w_offset, b_offset, fan_in, fan_out) per layer, head last
    layout: Vec<(usize, usize, usize, usize)>,
}

struct Forward {
    /// Activations per layer, acts[0] = input, last = embedding.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Network {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layout = Vec::new();
        let mut off = 0;
        let mut fan_in = cfg.input_dim();
        for &w in &cfg.layer_widths {
            layout.push((off, off + fan_in * w, fan_in, w));
            off += fan_in * w + w;
            fan_in = w;
        }
        // classification head
        layout.push((off, off + cfg.embedding_dim * cfg.n_labels, cfg.embedding_dim, cfg.n_labels));
        off += cfg.embedding_dim * cfg.n_labels + cfg.n_labels;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = vec![0.0; off];
        for &(w_off, b_off, fi, fo) in &layout {
            let a = (6.0 / (fi + fo) as f64).sqrt();
            for p in &mut params[w_off..b_off] {
                *p = rng.gen_range(-a..a);
            }
            let _ = fo;
        }
        Ok(Network { cfg, params, layout })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn n_layers(&self) -> usize {
        self.layout.len() - 1
    }

    fn forward(&self, input: &[f64]) -> Forward {
        debug_assert_eq!(input.len(), self.cfg.input_dim());
        let mut acts = vec![input.to_vec()];
        let n_layers = self.n_layers();
        for (li, &(w_off, b_off, fi, fo)) in self.layout[..n_layers].iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut out = vec![0.0; fo];
            for o in 0..fo {
                let mut s = self.params[b_off + o];
                let row = &self.params[w_off + o * fi..w_off + (o + 1) * fi];
                for (w, x) in row.iter().zip(prev) {
                    s += w * x;
                }
                out[o] = if li + 1 < n_layers { s.tanh() } else { s };
            }
            acts.push(out);
        }
        let (w_off, b_off, fi, fo) = self.layout[n_layers];
        let emb = acts.last().unwrap();
        let mut logits = vec![0.0; fo];
        for o in 0..fo {
            let mut s = self.params[b_off + o];
            let row = &self.params[w_off + o * fi..w_off + (o + 1) * fi];
            for (w, x) in row.iter().zip(emb) {
                s += w * x;
            }
            logits[o] = s;
        }
        Forward { acts, logits }
    }

    /// Deterministic forward pass; the head logits come along for free.
    pub fn encode(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if input.len() != self.cfg.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {} inputs, got {}",
                self.cfg.input_dim(),
                input.len()
            )));
        }
        let f = self.forward(input);
        Ok((f.acts.last().unwrap().clone(), f.logits))
    }

    /// Accumulate parameter gradients for one branch given the loss gradient
    /// w.r.t. its embedding and, for the anchor branch, the logits.
    fn backward(
        &self,
        fwd: &Forward,
        d_embedding: &[f64],
        d_logits: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let n_layers = self.n_layers();
        let mut delta = d_embedding.to_vec();

        if let Some(dz) = d_logits {
            let (w_off, b_off, fi, fo) = self.layout[n_layers];
            let emb = fwd.acts.last().unwrap();
            for o in 0..fo {
                grad[b_off + o] += dz[o];
                for i in 0..fi {
                    grad[w_off + o * fi + i] += dz[o] * emb[i];
                    delta[i] += dz[o] * self.params[w_off + o * fi + i];
                }
            }
        }

        for li in (0..n_layers).rev() {
            let (w_off, b_off, fi, fo) = self.layout[li];
            let input = &fwd.acts[li];
            let mut d_prev = vec![0.0; fi];
            for o in 0..fo {
                grad[b_off + o] += delta[o];
                for i in 0..fi {
                    grad[w_off + o * fi + i] += delta[o] * input[i];
                    d_prev[i] += delta[o] * self.params[w_off + o * fi + i];
                }
            }
            if li > 0 {
                // input to this layer is a tanh output
                for (d, a) in d_prev.iter_mut().zip(&fwd.acts[li]) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = d_prev;
        }
    }
}

/// Flatten a 3-channel image in non-overlapping patch order (per patch:
/// channel-major pixels).
pub fn patch_flatten(img: &ThreeChannelImage, patch: usize) -> Result<Vec<f64>> {
    let h = img.c0.h;
    let w = img.c0.w;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid("patch must divide image dimensions"));
    }
    let mut out = Vec::with_capacity(3 * h * w);
    for py in (0..h).step_by(patch) {
        for px in (0..w).step_by(patch) {
            for ch in 0..3 {
                let g = img.channel(ch);
                for y in py..py + patch {
                    for x in px..px + patch {
                        out.push(g.get(y, x));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// max(||fA - fP||^2 - ||fA - fN||^2 + margin, 0)
pub fn triplet_loss(fa: &[f64], fp: &[f64], fn_: &[f64], margin: f64) -> Result<f64> {
    if fa.len() != fp.len() || fa.len() != fn_.len() {
        return Err(Error::ShapeMismatch("embedding dimensions differ".into()));
    }
    let dap: f64 = fa.iter().zip(fp).map(|(a, b)| (a - b) * (a - b)).sum();
    let dan: f64 = fa.iter().zip(fn_).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((dap - dan + margin).max(0.0))
}

fn softplus(z: f64) -> f64 {
    // log(1 + e^z), stable for large |z|
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Multi-label soft margin loss: mean over labels of the per-label binary
/// cross-entropy on logits.
pub fn classif_loss(logits: &[f64], targets: &[f64]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::ShapeMismatch("logits/targets length".into()));
    }
    for &y in targets {
        if y != 0.0 && y != 1.0 {
            return Err(Error::invalid("targets must be binary"));
        }
    }
    let c = logits.len() as f64;
    let mut total = 0.0;
    for (&z, &y) in logits.iter().zip(targets) {
        // -y log σ(z) - (1-y) log σ(-z)
        total += if y == 1.0 { softplus(-z) } else { softplus(z) };
    }
    Ok(total / c)
}

/// Weighted sum of the two task losses.
pub fn total_loss(l_siamese: f64, l_classif: f64, cfg: &TrainConfig) -> f64 {
    cfg.w_siamese * l_siamese + cfg.w_classif * l_classif
}

struct TripletGrad {
    loss: f64,
}

/// Forward + backward for one triplet, accumulating into `grad`.
fn triplet_step(
    net: &Network,
    xa: &[f64],
    xp: &[f64],
    xn: &[f64],
    y: &[f64],
    cfg: &TrainConfig,
    grad: Option<&mut [f64]>,
) -> Result<TripletGrad> {
    let fa = net.forward(xa);
    let fp = net.forward(xp);
    let fnh = net.forward(xn);
    let ea = fa.acts.last().unwrap();
    let ep = fp.acts.last().unwrap();
    let en = fnh.acts.last().unwrap();

    let l_trip = triplet_loss(ea, ep, en, cfg.margin)?;
    let l_cls = classif_loss(&fa.logits, y)?;
    let loss = total_loss(l_trip, l_cls, cfg);

    if let Some(grad) = grad {
        let dim = ea.len();
        let active = l_trip > 0.0;
        let mut d_ea = vec![0.0; dim];
        let mut d_ep = vec![0.0; dim];
        let mut d_en = vec![0.0; dim];
        if active {
            for i in 0..dim {
                d_ea[i] = cfg.w_siamese * 2.0 * (en[i] - ep[i]);
                d_ep[i] = cfg.w_siamese * -2.0 * (ea[i] - ep[i]);
                d_en[i] = cfg.w_siamese * 2.0 * (ea[i] - en[i]);
            }
        }
        let c = y.len() as f64;
        let d_logits: Vec<f64> = fa
            .logits
            .iter()
            .zip(y)
            .map(|(&z, &t)| cfg.w_classif * (sigmoid(z) - t) / c)
            .collect();
        net.backward(&fa, &d_ea, Some(&d_logits), grad);
        net.backward(&fp, &d_ep, None, grad);
        net.backward(&fnh, &d_en, None, grad);
    }
    Ok(TripletGrad { loss })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub struct TrainOutput {
    pub net: Network,
    pub history: Vec<EpochStats>,
}

/// Resolve triplet ids against the per-sample input vectors and anchor
/// targets; errors on unknown ids.
fn resolve_triplet<'a>(
    t: &Triplet,
    inputs: &'a HashMap<String, Vec<f64>>,
    targets: &'a HashMap<String, Vec<f64>>,
) -> Result<(&'a [f64], &'a [f64], &'a [f64], &'a [f64])> {
    let get = |id: &str| {
        inputs
            .get(id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::invalid(format!("no input for sample {}", id)))
    };
    let y = targets
        .get(&t.anchor)
        .map(|v| v.as_slice())
        .ok_or_else(|| Error::invalid(format!("no targets for sample {}", t.anchor)))?;
    Ok((get(&t.anchor)?, get(&t.positive)?, get(&t.negative)?, y))
}

fn mean_loss(
    net: &Network,
    triplets: &[Triplet],
    inputs: &HashMap<String, Vec<f64>>,
    targets: &HashMap<String, Vec<f64>>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for t in triplets {
        let (xa, xp, xn, y) = resolve_triplet(t, inputs, targets)?;
        total += triplet_step(net, xa, xp, xn, y, cfg, None)?.loss;
    }
    Ok(total / triplets.len().max(1) as f64)
}

/// Adam training on mini-batches of triplets with the halving learning-rate
/// schedule and early stopping on validation total loss.
pub fn train(
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    train_triplets: &[Triplet],
    val_triplets: &[Triplet],
    inputs: &HashMap<String, Vec<f64>>,
    targets: &HashMap<String, Vec<f64>>,
) -> Result<TrainOutput> {
    train_cfg.validate()?;
    if train_triplets.is_empty() {
        return Err(Error::invalid("need at least one training triplet"));
    }
    let mut net = Network::new(enc_cfg.clone())?;
    let n = net.n_params();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut t_step = 0u64;
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..train_triplets.len()).collect();
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut since_improve = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let lr = train_cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut grad = vec![0.0; n];
        for (batch_idx, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &ti in batch {
                let t = &train_triplets[ti];
                let (xa, xp, xn, y) = resolve_triplet(t, inputs, targets)?;
                batch_loss += triplet_step(&net, xa, xp, xn, y, train_cfg, Some(&mut grad))?.loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::invalid(format!(
                    "NaN loss in epoch {} batch {}",
                    epoch, batch_idx
                )));
            }
            let bs = batch.len() as f64;
            epoch_loss += batch_loss;
            t_step += 1;
            let bc1 = 1.0 - B1.powi(t_step as i32);
            let bc2 = 1.0 - B2.powi(t_step as i32);
            for i in 0..n {
                let g = grad[i] / bs;
                m[i] = B1 * m[i] + (1.0 - B1) * g;
                v[i] = B2 * v[i] + (1.0 - B2) * g * g;
                net.params[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
            }
        }
        let train_loss = epoch_loss / train_triplets.len() as f64;
        let val_loss = if val_triplets.is_empty() {
            train_loss
        } else {
            mean_loss(&net, val_triplets, inputs, targets, train_cfg)?
        };
        history.push(EpochStats { epoch, train_loss, val_loss, lr });

        if val_loss < best_val {
            best_val = val_loss;
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= train_cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainOutput { net, history })
}

/// Compare the analytic gradient of the combined loss against central finite
/// differences for a randomly initialized small network; returns the max
/// relative error. Draws landing too close to the hinge kink are re-drawn.
pub fn gradcheck(enc_cfg: &EncoderConfig, train_cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let net = Network::new(EncoderConfig { seed, ..enc_cfg.clone() })?;
    if net.n_params() > 1000 {
        return Err(Error::invalid("gradcheck requires <= 1000 parameters"));
    }
    let dim = net.cfg.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));

    for _attempt in 0..50 {
        let draw = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let xa = draw(&mut rng);
        let xp = draw(&mut rng);
        let xn = draw(&mut rng);
        let y: Vec<f64> = (0..net.cfg.n_labels)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            .collect();

        // hinge argument must be safely on one side of the kink
        let (ea, _) = net.encode(&xa)?;
        let (ep, _) = net.encode(&xp)?;
        let (en, _) = net.encode(&xn)?;
        let dap: f64 = ea.iter().zip(&ep).map(|(a, b)| (a - b) * (a - b)).sum();
        let dan: f64 = ea.iter().zip(&en).map(|(a, b)| (a - b) * (a - b)).sum();
        if (dap - dan + train_cfg.margin).abs() < 0.05 {
            continue;
        }

        let mut analytic = vec![0.0; net.n_params()];
        triplet_step(&net, &xa, &xp, &xn, &y, train_cfg, Some(&mut analytic))?;

        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        let mut probe = net.clone();
        for i in 0..net.n_params() {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let lp = triplet_step(&probe, &xa, &xp, &xn, &y, train_cfg, None)?.loss;
            probe.params[i] = orig - h;
            let lm = triplet_step(&probe, &xa, &xp, &xn, &y, train_cfg, None)?.loss;
            probe.params[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let denom = (analytic[i].abs() + numeric.abs()).max(1e-6);
            max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
        }
        return Ok(max_rel);
    }
    Err(Error::invalid("could not draw a point away from the hinge kink"))
}

/// One row per sample, `embedding_dim` columns named `siamese_000`..
pub fn export_embeddings(
    net: &Network,
    samples: &[(String, Vec<f64>)],
) -> Result<FeatureBlock> {
    let dim = net.cfg.embedding_dim;
    let mut ids = Vec::with_capacity(samples.len());
    let mut data = Vec::with_capacity(samples.len() * dim);
    for (id, input) in samples {
        let (mut emb, _) = net.encode(input)?;
        if net.cfg.l2_normalize {
            let norm = emb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for e in &mut emb {
                    *e /= norm;
                }
            }
        }
        ids.push(id.clone());
        data.extend(emb);
    }
    let columns = (0..dim).map(|i| format!("siamese_{:03}", i)).collect();
    FeatureBlock::new("siamese", ids, columns, data, Provenance::Siamese)
}

/// Write the loss history as CSV `epoch,train_loss,val_loss,lr`.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{}", h.train_loss),
            format!("{}", h.val_loss),
            format!("{}", h.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const PARAMS_MAGIC: &[u8; 4] = b"PRSN";

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    input_hw: usize,
    channels_in: usize,
    patch: usize,
    layer_widths: Vec<usize>,
    embedding_dim: usize,
    n_labels: usize,
    seed: u64,
    l2_normalize: bool,
    config_hash: String,
}

fn config_hash(cfg: &EncoderConfig) -> String {
    use std::hash::{Hash, Hasher};
    let json = serde_json::to_string(cfg).unwrap_or_default();
    let mut h = std::collections::hash_map::DefaultHasher::new();
    json.hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Serialize parameters as a small JSON header followed by flat
/// little-endian float32 values.
pub fn save_params(net: &Network, path: &Path) -> Result<()> {
    let header = ParamsHeader {
        input_hw: net.cfg.input_hw,
        channels_in: net.cfg.channels_in,
        patch: net.cfg.patch,
        layer_widths: net.cfg.layer_widths.clone(),
        embedding_dim: net.cfg.embedding_dim,
        n_labels: net.cfg.n_labels,
        seed: net.cfg.seed,
        l2_normalize: net.cfg.l2_normalize,
        config_hash: config_hash(&net.cfg),
    };
    let hjson = serde_json::to_vec(&header)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(PARAMS_MAGIC)?;
    f.write_all(&(hjson.len() as u32).to_le_bytes())?;
    f.write_all(&hjson)?;
    for &p in &net.params {
        f.write_all(&(p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Network> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != PARAMS_MAGIC {
        return Err(Error::invalid("bad params file magic"));
    }
    let mut len = [0u8; 4];
    f.read_exact(&mut len)?;
    let mut hjson = vec![0u8; u32::from_le_bytes(len) as usize];
    f.read_exact(&mut hjson)?;
    let header: ParamsHeader = serde_json::from_slice(&hjson)?;
    let cfg = EncoderConfig {
        input_hw: header.input_hw,
        channels_in: header.channels_in,
        patch: header.patch,
        layer_widths: header.layer_widths,
        embedding_dim: header.embedding_dim,
        n_labels: header.n_labels,
        seed: header.seed,
        l2_normalize: header.l2_normalize,
    };
    let mut net = Network::new(cfg)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    if buf.len() != net.n_params() * 4 {
        return Err(Error::invalid("params payload size mismatch"));
    }
    for (i, chunk) in buf.chunks_exact(4).enumerate() {
        net.params[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok(net)
}
