//! Integration tests for the staged runner: artifact layout, skip-on-rerun,
//! missing-upstream errors, overrides, and run-to-run determinism.

use polyrep_cli::{read_block, Runner};
use polyrep_core::config::PipelineConfig;
use polyrep_core::fusion::Provenance;

fn tiny_config() -> PipelineConfig {
    let text = r#"{
        "seed": 11,
        "data": {
            "synthetic": {
                "image_size": 16,
                "n_samples": 30,
                "labels": [
                    {"name": "tex", "carrier": {"type": "texture"}},
                    {"name": "pat", "carrier": {"type": "pattern"}}
                ]
            },
            "n_folds": 3
        },
        "preprocess": {"side": 16},
        "siamese": {
            "encoder": {"layer_widths": [8, 4], "embedding_dim": 4, "patch": 8},
            "train": {"max_epochs": 2, "lr0": 0.001}
        },
        "fusion": {"knn_k": 3, "blocks": ["siamese", "radiomics", "tabular"]},
        "classifier": {"n_rounds": 10, "min_samples_leaf": 2},
        "explain": {"n_repeats": 2, "pca_side": 4}
    }"#;
    PipelineConfig::from_json(text).unwrap()
}

#[test]
fn e2e_produces_declared_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Runner::new(tiny_config(), tmp.path(), "t", false);
    r.e2e().unwrap();
    for rel in [
        "synth/dataset.json",
        "triplets/triplets.csv",
        "preprocess/images.json",
        "train-siamese/params.bin",
        "train-siamese/history.csv",
        "embed/siamese.csv",
        "radiomics/radiomics.csv",
        "fuse/fused.csv",
        "fuse/polyrep.json",
        "train-eval/metrics.json",
        "train-eval/metrics.csv",
        "importance/importance.csv",
        "manifest.json",
    ] {
        assert!(tmp.path().join("t").join(rel).exists(), "missing {}", rel);
    }
}

#[test]
fn unchanged_stage_is_noop_and_force_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Runner::new(tiny_config(), tmp.path(), "t", false);
    r.synth().unwrap();
    let p = tmp.path().join("t/synth/dataset.json");
    let t0 = std::fs::metadata(&p).unwrap().modified().unwrap();
    std::thread::sleep(std::time::Duration::from_millis(20));
    r.synth().unwrap();
    assert_eq!(std::fs::metadata(&p).unwrap().modified().unwrap(), t0, "stage reran");
    let f = Runner::new(tiny_config(), tmp.path(), "t", true);
    f.synth().unwrap();
    assert_ne!(std::fs::metadata(&p).unwrap().modified().unwrap(), t0, "force did not rerun");
}

#[test]
fn config_change_invalidates_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Runner::new(tiny_config(), tmp.path(), "t", false);
    r.synth().unwrap();
    let p = tmp.path().join("t/synth/dataset.json");
    let t0 = std::fs::metadata(&p).unwrap().modified().unwrap();
    std::thread::sleep(std::time::Duration::from_millis(20));
    let changed = tiny_config().with_override("seed=12").unwrap();
    Runner::new(changed, tmp.path(), "t", false).synth().unwrap();
    assert_ne!(std::fs::metadata(&p).unwrap().modified().unwrap(), t0);
}

#[test]
fn missing_upstream_names_prior_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Runner::new(tiny_config(), tmp.path(), "t", false);
    let err = r.triplets().unwrap_err().to_string();
    assert!(err.contains("polyrep synth") || err.contains("polyrep ingest"), "{}", err);
    let err = r.fuse().unwrap_err().to_string();
    assert!(err.contains("polyrep"), "{}", err);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    Runner::new(tiny_config(), tmp.path(), "a", false).e2e().unwrap();
    Runner::new(tiny_config(), tmp.path(), "b", false).e2e().unwrap();
    for rel in ["train-eval/metrics.json", "fuse/fused.csv", "importance/importance.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(rel)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(rel)).unwrap();
        assert_eq!(a, b, "{} differs between runs", rel);
    }
}

#[test]
fn block_csv_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Runner::new(tiny_config(), tmp.path(), "t", false);
    r.synth().unwrap();
    r.radiomics().unwrap();
    let p = tmp.path().join("t/radiomics/radiomics.csv");
    let block = read_block(&p, "radiomics", Provenance::Radiomics).unwrap();
    assert_eq!(block.n_rows(), 30);
    assert_eq!(block.n_cols(), 33);
}

#[test]
fn train_eval_all_blocks_beats_tabular_only() {
    let tmp = tempfile::tempdir().unwrap();
    let r = Runner::new(tiny_config(), tmp.path(), "t", false);
    r.e2e().unwrap();
    let read_f1 = |path: &std::path::Path| {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        v["mean"]["f1_macro"].as_f64().unwrap()
    };
    let all = read_f1(&tmp.path().join("t/train-eval/metrics.json"));
    let f = Runner::new(tiny_config(), tmp.path(), "t", true);
    f.train_eval(Some(&["tabular".to_string()])).unwrap();
    let tab = read_f1(&tmp.path().join("t/train-eval/metrics.json"));
    assert!(all >= tab, "all-blocks {} < tabular-only {}", all, tab);
}

#[test]
fn report_renders_available_configurations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config()
        .with_override("fusion.synthesize_external=true")
        .unwrap()
        .with_override(r#"fusion.blocks=["siamese","selfsup","radiomics","tabular"]"#)
        .unwrap();
    let r = Runner::new(cfg, tmp.path(), "t", false);
    r.e2e().unwrap();
    r.report().unwrap();
    let text = std::fs::read_to_string(tmp.path().join("t/report/report.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 7, "6 configurations + metric column");
    assert_eq!(lines.count(), 7, "seven metric rows");
}

#[test]
fn strict_config_rejects_unknown_key() {
    assert!(PipelineConfig::from_json(r#"{"classifier": {"rounds": 5}}"#).is_err());
}
