//! Staged pipeline runner behind the `polyrep` binary. Every stage reads its
//! inputs from, and writes its outputs to, `runs/<run>/<stage>/`; a manifest
//! of config hashes makes rerunning an unchanged stage a no-op.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use polyrep_core::config::PipelineConfig;
use polyrep_core::dataset::{self, LabelVocabulary, Sample};
use polyrep_core::error::{Error, Result};
use polyrep_core::explain;
use polyrep_core::fusion::{FeatureBlock, Polyrepresentation, Provenance};
use polyrep_core::imageproc::ThreeChannelImage;
use polyrep_core::mlab::{self, MetricsEntry, MetricsReport, METRIC_NAMES};
use polyrep_core::pipeline;
use polyrep_core::sampler::{self, Triplet};
use polyrep_core::siamese;
use serde::{Deserialize, Serialize};

pub const STAGES: [&str; 15] = [
    "synth",
    "ingest",
    "triplets",
    "preprocess",
    "train-siamese",
    "embed",
    "radiomics",
    "reduce",
    "fuse",
    "train-eval",
    "ablate-channels",
    "importance",
    "gradcheck",
    "report",
    "e2e",
];

/// The Table-5-style configurations rendered by `report`.
pub const REPORT_CONFIGS: [(&str, &[&str]); 6] = [
    ("all", &["siamese", "selfsup", "radiomics", "tabular"]),
    ("siamese", &["siamese"]),
    ("radiomics", &["radiomics"]),
    ("tabular", &["tabular"]),
    ("selfsup", &["selfsup"]),
    ("siamese+radiomics+selfsup", &["siamese", "radiomics", "selfsup"]),
];

pub struct Runner {
    pub cfg: PipelineConfig,
    pub run_dir: PathBuf,
    pub force: bool,
}

#[derive(Default, Serialize, Deserialize)]
struct Manifest {
    stages: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct DatasetArtifact {
    samples: Vec<Sample>,
    vocab: LabelVocabulary,
}

impl Runner {
    pub fn new(cfg: PipelineConfig, runs_dir: &Path, run: &str, force: bool) -> Self {
        Runner { cfg, run_dir: runs_dir.join(run), force }
    }

    fn stage_dir(&self, stage: &str) -> PathBuf {
        self.run_dir.join(stage)
    }

    fn manifest_path(&self) -> PathBuf {
        self.run_dir.join("manifest.json")
    }

    fn load_manifest(&self) -> Manifest {
        std::fs::read_to_string(self.manifest_path())
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default()
    }

    fn record(&self, stage: &str) -> Result<()> {
        let mut m = self.load_manifest();
        m.stages.insert(stage.to_string(), format!("{:016x}", self.cfg.hash()));
        std::fs::create_dir_all(&self.run_dir)?;
        std::fs::write(self.manifest_path(), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }

    /// True when the stage already ran under this exact config.
    fn up_to_date(&self, stage: &str, outputs: &[&str]) -> bool {
        if self.force {
            return false;
        }
        let m = self.load_manifest();
        let hash_ok = m.stages.get(stage).map(String::as_str)
            == Some(format!("{:016x}", self.cfg.hash()).as_str());
        hash_ok && outputs.iter().all(|o| self.stage_dir(stage).join(o).exists())
    }

    fn begin(&self, stage: &str, outputs: &[&str]) -> Result<Option<PathBuf>> {
        if self.up_to_date(stage, outputs) {
            println!("[{}] up to date, skipping (use --force to rerun)", stage);
            return Ok(None);
        }
        let dir = self.stage_dir(stage);
        std::fs::create_dir_all(&dir)?;
        println!(
            "[{}] seed={} config_hash={:016x}",
            stage,
            self.cfg.seed,
            self.cfg.hash()
        );
        Ok(Some(dir))
    }

    fn require(&self, stage: &str, file: &str) -> Result<PathBuf> {
        let p = self.stage_dir(stage).join(file);
        if !p.exists() {
            return Err(Error::invalid(format!(
                "missing artifact {}; run `polyrep {}` first",
                p.display(),
                stage
            )));
        }
        Ok(p)
    }

    fn load_dataset(&self) -> Result<(Vec<Sample>, LabelVocabulary)> {
        // synth and ingest write the same artifact; accept either
        let p = self
            .require("synth", "dataset.json")
            .or_else(|_| self.require("ingest", "dataset.json"))?;
        let art: DatasetArtifact = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        Ok((art.samples, art.vocab))
    }

    fn write_dataset(
        &self,
        dir: &Path,
        samples: &[Sample],
        vocab: &LabelVocabulary,
    ) -> Result<()> {
        let art = DatasetArtifact { samples: samples.to_vec(), vocab: vocab.clone() };
        std::fs::write(dir.join("dataset.json"), serde_json::to_string(&art)?)?;
        Ok(())
    }

    pub fn synth(&self) -> Result<()> {
        let Some(dir) = self.begin("synth", &["dataset.json"])? else {
            return Ok(());
        };
        let spec = self
            .cfg
            .data
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no data.synthetic section"))?;
        let (samples, vocab) = dataset::generate_synthetic(spec, self.cfg.seed)?;
        let (vocab, samples) =
            dataset::filter_rare_labels(&vocab, &samples, self.cfg.data.min_label_count)?;
        self.write_dataset(&dir, &samples, &vocab)?;
        self.record("synth")
    }

    pub fn ingest(&self) -> Result<()> {
        let Some(dir) = self.begin("ingest", &["dataset.json"])? else {
            return Ok(());
        };
        let manifest = self
            .cfg
            .data
            .manifest
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no data.manifest path"))?;
        let (samples, vocab) = dataset::load_manifest(manifest)?;
        let (vocab, samples) =
            dataset::filter_rare_labels(&vocab, &samples, self.cfg.data.min_label_count)?;
        self.write_dataset(&dir, &samples, &vocab)?;
        self.record("ingest")
    }

    pub fn triplets(&self) -> Result<()> {
        let Some(dir) = self.begin("triplets", &["triplets.csv"])? else {
            return Ok(());
        };
        let (samples, vocab) = self.load_dataset()?;
        let (trips, skipped) = pipeline::triplets(&samples, &vocab, &self.cfg)?;
        sampler::write_triplets_csv(&trips, &vocab, &dir.join("triplets.csv"))?;
        let mut w = csv::Writer::from_path(dir.join("skipped.csv"))?;
        w.write_record(["anchor_id", "reason"])?;
        for (id, reason) in &skipped {
            w.write_record([id, reason])?;
        }
        w.flush()?;
        println!("[triplets] {} triplets, {} anchors skipped", trips.len(), skipped.len());
        self.record("triplets")
    }

    fn load_triplets(&self, vocab: &LabelVocabulary) -> Result<Vec<Triplet>> {
        let p = self.require("triplets", "triplets.csv")?;
        let mut rdr = csv::Reader::from_path(p)?;
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let name = rec.get(3).unwrap_or_default();
            let negative_label = vocab
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::invalid(format!("unknown negative label {:?}", name)))?;
            out.push(Triplet {
                anchor: rec.get(0).unwrap_or_default().to_string(),
                positive: rec.get(1).unwrap_or_default().to_string(),
                negative: rec.get(2).unwrap_or_default().to_string(),
                negative_label,
            });
        }
        Ok(out)
    }

    pub fn preprocess(&self) -> Result<()> {
        let Some(dir) = self.begin("preprocess", &["images.json"])? else {
            return Ok(());
        };
        let (samples, _) = self.load_dataset()?;
        let images = pipeline::preprocess(&samples, &self.cfg, None)?;
        std::fs::write(dir.join("images.json"), serde_json::to_string(&images)?)?;
        self.record("preprocess")
    }

    fn load_images(&self) -> Result<Vec<ThreeChannelImage>> {
        let p = self.require("preprocess", "images.json")?;
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    pub fn train_siamese(&self) -> Result<()> {
        let Some(dir) = self.begin("train-siamese", &["params.bin", "history.csv"])? else {
            return Ok(());
        };
        let (samples, vocab) = self.load_dataset()?;
        let images = self.load_images()?;
        let trips = self.load_triplets(&vocab)?;
        let out = pipeline::train_siamese(&samples, &vocab, &images, &trips, &self.cfg)?;
        siamese::save_params(&out.net, &dir.join("params.bin"))?;
        siamese::write_history_csv(&out.history, &dir.join("history.csv"))?;
        if let Some(last) = out.history.last() {
            println!(
                "[train-siamese] {} epochs, final val loss {:.6}",
                out.history.len(),
                last.val_loss
            );
        }
        self.record("train-siamese")
    }

    pub fn embed(&self) -> Result<()> {
        let Some(dir) = self.begin("embed", &["siamese.csv"])? else {
            return Ok(());
        };
        let (samples, _) = self.load_dataset()?;
        let images = self.load_images()?;
        let params = self.require("train-siamese", "params.bin")?;
        let net = siamese::load_params(&params)?;
        let block = pipeline::embed(&samples, &images, &net)?;
        block.write_csv(&dir.join("siamese.csv"))?;
        self.record("embed")
    }

    pub fn radiomics(&self) -> Result<()> {
        let Some(dir) = self.begin("radiomics", &["radiomics.csv"])? else {
            return Ok(());
        };
        let (samples, _) = self.load_dataset()?;
        let block = polyrep_core::radiomics::extract_block(&samples, &self.cfg.radiomics)?;
        block.write_csv(&dir.join("radiomics.csv"))?;
        self.record("radiomics")
    }

    pub fn reduce(&self) -> Result<()> {
        let Some(dir) = self.begin("reduce", &["selfsup.csv"])? else {
            return Ok(());
        };
        let (samples, vocab) = self.load_dataset()?;
        let block = pipeline::selfsup_block(&samples, &vocab, &self.cfg)?.ok_or_else(|| {
            Error::invalid(
                "config enables no external embeddings; set fusion.external_embeddings \
                 or fusion.synthesize_external",
            )
        })?;
        block.write_csv(&dir.join("selfsup.csv"))?;
        self.record("reduce")
    }

    fn load_blocks(&self, wanted: &[String]) -> Result<(Vec<Sample>, LabelVocabulary, Vec<FeatureBlock>)> {
        let (samples, vocab) = self.load_dataset()?;
        let mut blocks = Vec::new();
        for name in wanted {
            let block = match name.as_str() {
                "siamese" => read_block(
                    &self.require("embed", "siamese.csv")?,
                    "siamese",
                    Provenance::Siamese,
                )?,
                "selfsup" => read_block(
                    &self.require("reduce", "selfsup.csv")?,
                    "selfsup",
                    Provenance::Selfsup,
                )?,
                "radiomics" => read_block(
                    &self.require("radiomics", "radiomics.csv")?,
                    "radiomics",
                    Provenance::Radiomics,
                )?,
                "tabular" => pipeline::tabular_block(&samples)?,
                other => return Err(Error::invalid(format!("unknown block {:?}", other))),
            };
            blocks.push(block);
        }
        Ok((samples, vocab, blocks))
    }

    pub fn fuse(&self) -> Result<()> {
        let Some(dir) = self.begin("fuse", &["polyrep.json", "fused.csv"])? else {
            return Ok(());
        };
        let wanted = self.cfg.fusion.blocks.clone();
        let (samples, vocab, blocks) = self.load_blocks(&wanted)?;
        let poly = pipeline::fuse(&samples, &vocab, &blocks, &self.cfg, None)?;
        std::fs::write(dir.join("polyrep.json"), serde_json::to_string(&poly)?)?;
        write_fused_csv(&poly, &dir.join("fused.csv"))?;
        // best-effort PCA visualization when enough rows exist
        let side = self
            .cfg
            .explain
            .pca_side
            .min((poly.n_rows() as f64).sqrt() as usize);
        if side >= 2 && poly.n_cols() >= 3 {
            let block = FeatureBlock::new(
                "fused",
                poly.ids.clone(),
                poly.columns.clone(),
                poly.fused.clone(),
                Provenance::Tabular,
            )?;
            let (channels, warnings) = explain::visualize_features(&block, side)?;
            for w in warnings {
                println!("[fuse] warning: {}", w);
            }
            explain::write_visualization_png(&channels, &dir.join("visualization.png"))?;
        }
        self.record("fuse")
    }

    fn load_polyrep(&self) -> Result<Polyrepresentation> {
        let p = self.require("fuse", "polyrep.json")?;
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    /// `blocks` narrows evaluation to a subset of the fused blocks;
    /// None evaluates the configured fusion.
    pub fn train_eval(&self, blocks: Option<&[String]>) -> Result<()> {
        let Some(dir) = self.begin("train-eval", &["metrics.json", "metrics.csv"])? else {
            return Ok(());
        };
        let report = match blocks {
            None => {
                let poly = self.load_polyrep()?;
                let folds =
                    dataset::make_folds(poly.n_rows(), self.cfg.data.n_folds, self.cfg.seed)?;
                mlab::cross_validate(&poly, &folds, &self.cfg.classifier)?
            }
            Some(wanted) => {
                let (samples, vocab, blocks) = self.load_blocks(&wanted.to_vec())?;
                let poly =
                    pipeline::fuse(&samples, &vocab, &blocks, &self.cfg, Some(wanted))?;
                let folds =
                    dataset::make_folds(poly.n_rows(), self.cfg.data.n_folds, self.cfg.seed)?;
                mlab::cross_validate(&poly, &folds, &self.cfg.classifier)?
            }
        };
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
        write_metrics_csv(&report, &dir.join("metrics.csv"))?;
        println!(
            "[train-eval] mean subset accuracy {:.4}, F1 macro {:.4}",
            report.mean.subset_accuracy, report.mean.f1_macro
        );
        self.record("train-eval")
    }

    pub fn importance(&self) -> Result<()> {
        let Some(dir) = self.begin("importance", &["importance.csv"])? else {
            return Ok(());
        };
        let poly = self.load_polyrep()?;
        let folds = dataset::make_folds(poly.n_rows(), self.cfg.data.n_folds, self.cfg.seed)?;
        let rows = explain::block_importance(
            &poly,
            &folds,
            &self.cfg.classifier,
            self.cfg.explain.n_repeats,
            self.cfg.seed,
        )?;
        explain::write_importance_csv(&rows, &dir.join("importance.csv"))?;
        for r in &rows {
            println!(
                "[importance] {}: {:+.2}% (std {:.2})",
                r.block, r.mean_pct_change, r.std
            );
        }
        self.record("importance")
    }

    pub fn ablate_channels(&self) -> Result<()> {
        let Some(dir) = self.begin("ablate-channels", &["ablation.csv"])? else {
            return Ok(());
        };
        let (samples, vocab) = self.load_dataset()?;
        let rows = explain::channel_ablation(&samples, &vocab, &self.cfg)?;
        explain::write_ablation_csv(&rows, &dir.join("ablation.csv"))?;
        for r in &rows {
            let ch = r.channel.map_or("none".to_string(), |c| c.to_string());
            println!("[ablate-channels] channel {}: {:+.2}%", ch, r.pct_accuracy_change);
        }
        self.record("ablate-channels")
    }

    pub fn gradcheck(&self) -> Result<()> {
        let Some(dir) = self.begin("gradcheck", &["gradcheck.json"])? else {
            return Ok(());
        };
        // a deliberately tiny encoder keeps the finite-difference sweep fast
        let enc = polyrep_core::siamese::EncoderConfig {
            input_hw: 8,
            channels_in: 3,
            patch: 8,
            layer_widths: vec![4],
            embedding_dim: 4,
            n_labels: 2,
            seed: self.cfg.seed,
            l2_normalize: false,
        };
        let tcfg = self.cfg.siamese.train.clone();
        let mut max_err = 0.0f64;
        for s in 0..20 {
            let e = siamese::gradcheck(&enc, &tcfg, self.cfg.seed.wrapping_add(s))?;
            max_err = max_err.max(e);
        }
        println!("[gradcheck] max relative error over 20 seeds: {:.3e}", max_err);
        std::fs::write(
            dir.join("gradcheck.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "seeds": 20,
                "max_relative_error": max_err,
            }))?,
        )?;
        if max_err >= 1e-4 {
            return Err(Error::invalid(format!("gradcheck failed: {:.3e} >= 1e-4", max_err)));
        }
        self.record("gradcheck")
    }

    pub fn report(&self) -> Result<()> {
        let Some(dir) = self.begin("report", &["report.csv"])? else {
            return Ok(());
        };
        let available = self.cfg.fusion.blocks.clone();
        let (samples, vocab, blocks) = self.load_blocks(&available)?;
        let folds = dataset::make_folds(samples.len(), self.cfg.data.n_folds, self.cfg.seed)?;

        let mut columns: Vec<(String, MetricsEntry)> = Vec::new();
        for (name, wanted) in REPORT_CONFIGS {
            if !wanted.iter().all(|w| available.iter().any(|a| a == w)) {
                println!("[report] skipping {:?}: block(s) not configured", name);
                continue;
            }
            let wanted: Vec<String> = wanted.iter().map(|s| s.to_string()).collect();
            let poly = pipeline::fuse(&samples, &vocab, &blocks, &self.cfg, Some(&wanted))?;
            let rep = mlab::cross_validate(&poly, &folds, &self.cfg.classifier)?;
            columns.push((name.to_string(), rep.mean));
        }

        let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
        let mut header = vec!["metric".to_string()];
        header.extend(columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        // the seven Table-5 metrics; AUC is reported by train-eval instead
        for (mi, metric) in METRIC_NAMES.iter().enumerate().take(7) {
            let mut rec = vec![metric.to_string()];
            rec.extend(columns.iter().map(|(_, e)| format!("{:.4}", e.as_vec()[mi])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        println!("[report] {} configurations written", columns.len());
        self.record("report")
    }

    pub fn e2e(&self) -> Result<()> {
        if self.cfg.data.synthetic.is_some() {
            self.synth()?;
        } else {
            self.ingest()?;
        }
        self.triplets()?;
        self.preprocess()?;
        self.train_siamese()?;
        self.embed()?;
        self.radiomics()?;
        if self.cfg.fusion.blocks.iter().any(|b| b == "selfsup") {
            self.reduce()?;
        }
        self.fuse()?;
        self.train_eval(None)?;
        self.importance()?;
        Ok(())
    }

    pub fn run_stage(&self, stage: &str, blocks: Option<&[String]>) -> Result<()> {
        match stage {
            "synth" => self.synth(),
            "ingest" => self.ingest(),
            "triplets" => self.triplets(),
            "preprocess" => self.preprocess(),
            "train-siamese" => self.train_siamese(),
            "embed" => self.embed(),
            "radiomics" => self.radiomics(),
            "reduce" => self.reduce(),
            "fuse" => self.fuse(),
            "train-eval" => self.train_eval(blocks),
            "ablate-channels" => self.ablate_channels(),
            "importance" => self.importance(),
            "gradcheck" => self.gradcheck(),
            "report" => self.report(),
            "e2e" => self.e2e(),
            other => Err(Error::invalid(format!("unknown stage {:?}", other))),
        }
    }
}

/// Read a feature block back from its CSV artifact.
pub fn read_block(path: &Path, name: &str, provenance: Provenance) -> Result<FeatureBlock> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("id") {
        return Err(Error::invalid(format!("{}: first column must be id", path.display())));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        ids.push(rec.get(0).unwrap_or_default().to_string());
        for v in rec.iter().skip(1) {
            data.push(v.parse::<f64>().map_err(|_| {
                Error::invalid(format!("{}: bad float {:?}", path.display(), v))
            })?);
        }
    }
    FeatureBlock::new(name, ids, columns, data, provenance)
}

fn write_fused_csv(poly: &Polyrepresentation, path: &Path) -> Result<()> {
    let block = FeatureBlock::new(
        "fused",
        poly.ids.clone(),
        poly.columns.clone(),
        poly.fused.clone(),
        Provenance::Tabular,
    )?;
    block.write_csv(path)
}

fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["metric".to_string()];
    header.extend((0..report.per_fold.len()).map(|i| format!("fold{}", i)));
    header.push("mean".to_string());
    w.write_record(&header)?;
    for (mi, metric) in METRIC_NAMES.iter().enumerate() {
        let mut rec = vec![metric.to_string()];
        rec.extend(report.per_fold.iter().map(|e| format!("{}", e.as_vec()[mi])));
        rec.push(format!("{}", report.mean.as_vec()[mi]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
