#![allow(dead_code)]

use std::path::Path;

use deco_data::{generate_dataset, load_dataset, Dataset, GeneratorConfig};
use deco_harness::{ExperimentConfig, Protocol};

pub fn tiny_dataset(root: &Path, per_cell: usize) -> Dataset {
    let cfg = GeneratorConfig {
        per_cell,
        image_size: 32,
        seed: 3,
        ..Default::default()
    };
    generate_dataset(root, &cfg).unwrap();
    load_dataset(root).unwrap()
}

/// A backbone and schedule small enough for debug-build tests.
pub fn tiny_config(protocol: Protocol) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(protocol);
    for (k, v) in [
        ("epochs", "3"),
        ("warm-start-epochs", "1"),
        ("batch-size", "8"),
        ("learning-rate", "3e-3"),
        ("stage-widths", "4,8"),
        ("stage-strides", "2,2"),
        ("stage-kernels", "3,3"),
        ("ramp-epochs", "1"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}
