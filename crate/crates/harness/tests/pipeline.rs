mod common;

use common::{tiny_config, tiny_dataset};
use deco_data::split_leave_one_domain_out;
use deco_harness::checkpoint;
use deco_harness::report::{self, ResultRow};
use deco_harness::train::EpochLog;
use deco_harness::{evaluate, run_protocol, train, HarnessError, Protocol, RunOptions};

fn curves(log: &[EpochLog]) -> Vec<(u64, u64)> {
    log.iter().map(|e| (e.ce.to_bits(), e.total.to_bits())).collect()
}

fn param_bits(model: &deco_harness::TrainedModel) -> Vec<u64> {
    model
        .params
        .entries()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn flags_off_ignore_augmentation_settings() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 3);
    let split = split_leave_one_domain_out(&data.manifest, 0).unwrap();
    let mut erm = tiny_config(Protocol::Dg);
    for k in ["adr", "prototype", "pixel-loss"] {
        erm.set(k, "off").unwrap();
    }
    let mut other = erm.clone();
    for (k, v) in [("alpha-c", "2"), ("gamma-d", "0.7"), ("tau", "0.5"), ("convention", "eq3-literal")] {
        other.set(k, v).unwrap();
    }
    let (a, la) = train(&erm, &data, &split.train).unwrap();
    let (b, lb) = train(&other, &data, &split.train).unwrap();
    assert_eq!(curves(&la), curves(&lb));
    assert_eq!(param_bits(&a), param_bits(&b));
    assert!(la.iter().all(|e| e.phase == "erm" && e.alignment.is_none()));
}

#[test]
fn zero_alignment_weight_reduces_to_adr_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 3);
    let split = split_leave_one_domain_out(&data.manifest, 1).unwrap();
    let mut adr = tiny_config(Protocol::Dg);
    adr.set("prototype", "off").unwrap();
    adr.set("pixel-loss", "off").unwrap();
    let mut pix = adr.clone();
    pix.set("pixel-loss", "on").unwrap();
    pix.set("alpha-max", "0").unwrap();
    let (a, la) = train(&adr, &data, &split.train).unwrap();
    let (b, lb) = train(&pix, &data, &split.train).unwrap();
    assert_eq!(curves(&la), curves(&lb));
    assert_eq!(param_bits(&a), param_bits(&b));
}

#[test]
fn prototype_without_adr_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 2);
    let mut cfg = tiny_config(Protocol::Dg);
    cfg.set("adr", "off").unwrap();
    let all: Vec<usize> = (0..data.len()).collect();
    assert!(matches!(train(&cfg, &data, &all), Err(HarnessError::Config(_))));
}

#[test]
fn single_class_training_set_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 3);
    let class0: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == 0).collect();
    let cfg = tiny_config(Protocol::Dg);
    assert!(matches!(train(&cfg, &data, &class0), Err(HarnessError::Degenerate(_))));
}

#[test]
fn training_logs_phases_and_finite_losses() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 3);
    let split = split_leave_one_domain_out(&data.manifest, 2).unwrap();
    let cfg = tiny_config(Protocol::Dg);
    let (model, log) = train(&cfg, &data, &split.train).unwrap();
    let epochs: Vec<usize> = log.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![0, 1, 2]);
    assert_eq!(log[0].phase, "erm");
    assert!(log[1..].iter().all(|e| e.phase == "deco" && e.alignment.is_some()));
    assert!(log.iter().all(|e| e.ce.is_finite() && e.total.is_finite()));
    assert!(log.last().unwrap().class_prototypes > 0);
    let m = evaluate(&model, &data, &split.test).unwrap();
    assert!((0.0..=100.0).contains(&m.auc) && (0.0..=100.0).contains(&m.f1));
    assert_eq!(m.n, split.test.len());
    assert!(matches!(evaluate(&model, &data, &[]), Err(HarnessError::EmptyTestSet)));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(&dir.path().join("data"), 3);
    let split = split_leave_one_domain_out(&data.manifest, 3).unwrap();
    let cfg = tiny_config(Protocol::Dg);
    let (mut model, _) = train(&cfg, &data, &split.train).unwrap();
    model.fold = Some(3);
    let path = dir.path().join("checkpoint.bin");
    checkpoint::save(&path, &model).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.fold, Some(3));
    assert_eq!(param_bits(&back), param_bits(&model));
    assert_eq!(evaluate(&back, &data, &split.test).unwrap(), evaluate(&model, &data, &split.test).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(HarnessError::Checkpoint { .. })));
}

fn values(rows: &[ResultRow]) -> Vec<impl PartialEq + std::fmt::Debug> {
    rows.iter().map(ResultRow::values).collect()
}

#[test]
fn dg_protocol_rows_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(&dir.path().join("data"), 3);
    let mut cfg = tiny_config(Protocol::Dg);
    cfg.set("epochs", "2").unwrap();
    let ckpt = dir.path().join("ckpt");
    std::fs::create_dir_all(&ckpt).unwrap();
    let opts = RunOptions {
        checkpoint_dir: Some(ckpt),
        ..Default::default()
    };
    let report = run_protocol(&cfg, &data, &[5], &opts).unwrap();
    assert_eq!(report.folds.len(), 4);
    let rows = report::rows(&report);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4].role, "average");
    let mean = rows[..4].iter().map(|r| r.auc).sum::<f64>() / 4.0;
    assert!((rows[4].auc - mean).abs() < 1e-12);
    assert!(rows[..4].iter().all(|r| r.role == "held-out" && r.seed == 5));
    for f in &report.folds {
        assert!(f.checkpoint.as_ref().unwrap().exists());
    }

    let out = dir.path().join("out");
    report::write_all(&out, &report).unwrap();
    let parsed = report::read_csv(&out.join(report::RESULTS_CSV)).unwrap();
    assert_eq!(parsed, rows);
    let summary = report::summarize(&parsed);
    assert!(summary.lines().any(|l| l.starts_with("dg") && l.contains("full") && l.contains("average")));
    let jsonl = std::fs::read_to_string(out.join(report::RESULTS_JSONL)).unwrap();
    assert_eq!(jsonl.lines().count(), 4);
    let logs = std::fs::read_to_string(out.join(report::LOG_JSONL)).unwrap();
    assert_eq!(logs.lines().count(), 8);
    for line in logs.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(std::path::Path::new(v["checkpoint"].as_str().unwrap()).exists());
    }

    let again = run_protocol(&cfg, &data, &[5], &RunOptions::default()).unwrap();
    report::write_all(&out, &again).unwrap();
    let parsed = report::read_csv(&out.join(report::RESULTS_CSV)).unwrap();
    assert_eq!(parsed.len(), 10);
    assert_eq!(values(&parsed[..5]), values(&parsed[5..]));
}

#[test]
fn esdg_protocol_trains_on_one_domain() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 3);
    let mut cfg = tiny_config(Protocol::Esdg);
    cfg.set("epochs", "2").unwrap();
    let opts = RunOptions {
        domains: Some(vec![0, 2]),
        ..Default::default()
    };
    let report = run_protocol(&cfg, &data, &[0, 1], &opts).unwrap();
    assert_eq!(report.folds.len(), 4);
    assert_eq!(report.role(), "source");
    assert!(report.folds.iter().all(|f| f.metrics.n == 45));
    assert_eq!(report::rows(&report).len(), 6);
    let again = run_protocol(&cfg, &data, &[0, 1], &opts).unwrap();
    let m = |r: &deco_harness::ProtocolReport| r.folds.iter().map(|f| f.metrics).collect::<Vec<_>>();
    assert_eq!(m(&report), m(&again));
}
