//! Leave-one-domain-out and single-source protocol drivers.

use std::path::{Path, PathBuf};

use deco_data::{split_leave_one_domain_out, split_single_source, Dataset};

use crate::checkpoint;
use crate::config::{ablation_variants, ExperimentConfig, Protocol};
use crate::error::{HarnessError, Result};
use crate::metrics::Metrics;
use crate::train::{evaluate, train, EpochLog};

/// One train/evaluate cycle.
#[derive(Debug, Clone)]
pub struct FoldResult {
    /// Held-out domain (dg) or source domain (esdg).
    pub domain: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub log: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ProtocolReport {
    pub config: ExperimentConfig,
    pub folds: Vec<FoldResult>,
}

impl ProtocolReport {
    pub fn protocol(&self) -> Protocol {
        self.config.protocol
    }

    /// Per-fold role of the domain column.
    pub fn role(&self) -> &'static str {
        match self.config.protocol {
            Protocol::Dg => "held-out",
            Protocol::Esdg => "source",
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.folds.iter().map(|f| f.seed).collect();
        s.dedup();
        s
    }

    /// Arithmetic mean over the folds of one seed.
    pub fn seed_average(&self, seed: u64) -> Metrics {
        let rows: Vec<Metrics> = self.folds.iter().filter(|f| f.seed == seed).map(|f| f.metrics).collect();
        Metrics::mean(&rows)
    }

    /// Mean over every fold of every seed.
    pub fn average(&self) -> Metrics {
        Metrics::mean(&self.folds.iter().map(|f| f.metrics).collect::<Vec<_>>())
    }
}

/// Options shared by the protocol drivers.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Checkpoints go to `<dir>/<run_id>-d<domain>-s<seed>.bin`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Restricts the cycles to these domains.
    pub domains: Option<Vec<usize>>,
    /// Called after every cycle.
    pub progress: Option<fn(&ExperimentConfig, &FoldResult)>,
}

/// Runs every fold of `cfg.protocol` once per seed.
pub fn run_protocol(cfg: &ExperimentConfig, data: &Dataset, seeds: &[u64], opts: &RunOptions) -> Result<ProtocolReport> {
    let domains = data.manifest.params.domains;
    if cfg.protocol == Protocol::Dg && domains < 2 {
        return Err(HarnessError::Degenerate(format!(
            "leave-one-domain-out needs at least two domains, dataset has {domains}"
        )));
    }
    let fold_domains: Vec<usize> = opts.domains.clone().unwrap_or_else(|| (0..domains).collect());
    let mut folds = Vec::new();
    for &seed in seeds {
        let cfg = ExperimentConfig { seed, ..cfg.clone() };
        for &d in &fold_domains {
            let split = match cfg.protocol {
                Protocol::Dg => split_leave_one_domain_out(&data.manifest, d)?,
                Protocol::Esdg => split_single_source(&data.manifest, d)?,
            };
            let (mut model, log) = train(&cfg, data, &split.train)?;
            model.fold = Some(d);
            let metrics = evaluate(&model, data, &split.test)?;
            let checkpoint = match &opts.checkpoint_dir {
                Some(dir) => {
                    let path = checkpoint_path(dir, &cfg, d);
                    checkpoint::save(&path, &model)?;
                    Some(path)
                }
                None => None,
            };
            let fold = FoldResult {
                domain: d,
                seed,
                metrics,
                log,
                checkpoint,
            };
            if let Some(f) = opts.progress {
                f(&cfg, &fold);
            }
            folds.push(fold);
        }
    }
    Ok(ProtocolReport {
        config: ExperimentConfig {
            seed: seeds.first().copied().unwrap_or(cfg.seed),
            ..cfg.clone()
        },
        folds,
    })
}

pub fn checkpoint_path(dir: &Path, cfg: &ExperimentConfig, domain: usize) -> PathBuf {
    dir.join(format!("{}-d{domain}-s{}.bin", cfg.run_id(), cfg.seed))
}

/// Every ablation flag combination over the same seeds.
pub fn run_ablation(
    base: &ExperimentConfig,
    data: &Dataset,
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<Vec<ProtocolReport>> {
    ablation_variants(base)
        .iter()
        .map(|cfg| run_protocol(cfg, data, seeds, opts))
        .collect()
}
