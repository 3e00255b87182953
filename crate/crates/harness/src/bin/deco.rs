use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use deco_data::{generate_dataset, load_dataset, split_leave_one_domain_out, split_single_source, GeneratorConfig};
use deco_harness::config::{parse_pairs, ExperimentConfig};
use deco_harness::protocol::{run_ablation, run_protocol, FoldResult, RunOptions};
use deco_harness::report::{self, ResultRow};
use deco_harness::{checkpoint, gradsuite, train, evaluate, Protocol};

#[derive(Parser)]
#[command(name = "deco", version, about = "Feature-disentanglement domain generalization on synthetic fundus data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-domain dataset.
    GenerateData(GenerateArgs),
    /// Train one model and write checkpoint.bin and log.jsonl.
    Train(TrainArgs),
    /// Evaluate a checkpoint and append to results.csv.
    Eval(EvalArgs),
    /// Leave-one-domain-out protocol.
    Dg(ProtocolArgs),
    /// Train-on-single-domain protocol.
    Esdg(ProtocolArgs),
    /// The six ablation flag combinations under one protocol.
    Ablate(ProtocolArgs),
    /// Central-difference verification of every differentiable op.
    Gradcheck(GradArgs),
    /// Summarize results.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    domains: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    per_cell: usize,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    /// balanced | long-tail:<ratio> | domain-tail:<ratio>
    #[arg(long, default_value = "balanced")]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Plain-text `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    warm_start_epochs: Option<String>,
    #[arg(long)]
    alpha_c: Option<String>,
    #[arg(long)]
    alpha_d: Option<String>,
    #[arg(long)]
    gamma_c: Option<String>,
    #[arg(long)]
    gamma_d: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    alpha_max: Option<String>,
    #[arg(long)]
    insertion_layer: Option<String>,
    /// on | off
    #[arg(long)]
    adr: Option<String>,
    /// on | off
    #[arg(long)]
    prototype: Option<String>,
    /// on | off
    #[arg(long)]
    pixel_loss: Option<String>,
    /// swap-both | eq3-literal
    #[arg(long)]
    convention: Option<String>,
    /// Leave e = λ·w unclamped.
    #[arg(long)]
    no_clamp: bool,
    /// Skip mean-one normalization of the data-aware weights.
    #[arg(long)]
    raw_weights: bool,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    /// File values first, then flags; `protocol_hint` applies when neither names one.
    fn resolve(&self, protocol_hint: Option<Protocol>) -> Result<ExperimentConfig> {
        let mut pairs = Vec::new();
        if let Some(hint) = protocol_hint {
            pairs.push(("protocol".to_string(), hint.as_str().to_string()));
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            pairs.extend(parse_pairs(&text)?);
        }
        let flags: [(&str, &Option<String>); 17] = [
            ("protocol", &self.protocol),
            ("epochs", &self.epochs),
            ("learning-rate", &self.learning_rate),
            ("weight-decay", &self.weight_decay),
            ("batch-size", &self.batch_size),
            ("warm-start-epochs", &self.warm_start_epochs),
            ("alpha_c", &self.alpha_c),
            ("alpha_d", &self.alpha_d),
            ("gamma_c", &self.gamma_c),
            ("gamma_d", &self.gamma_d),
            ("tau", &self.tau),
            ("alpha-max", &self.alpha_max),
            ("insertion-layer", &self.insertion_layer),
            ("adr", &self.adr),
            ("prototype", &self.prototype),
            ("pixel-loss", &self.pixel_loss),
            ("convention", &self.convention),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                pairs.push((k.to_string(), v.clone()));
            }
        }
        if let Some(seed) = self.seed {
            pairs.push(("seed".into(), seed.to_string()));
        }
        if self.no_clamp {
            pairs.push(("clamp".into(), "false".into()));
        }
        if self.raw_weights {
            pairs.push(("weight-normalization".into(), "raw".into()));
        }
        for s in &self.set {
            let (k, v) = s.split_once('=').with_context(|| format!("--set expects key=value, got {s:?}"))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        // the protocol entry that wins must come first so its defaults apply
        if let Some(p) = pairs.iter().rev().find(|(k, _)| k == "protocol").cloned() {
            pairs.retain(|(k, _)| k != "protocol");
            pairs.insert(0, p);
        }
        Ok(ExperimentConfig::from_pairs(&pairs)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Held-out domain (dg) or source domain (esdg); all samples when absent.
    #[arg(long)]
    fold: Option<usize>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving results.csv; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict evaluation to these domains (comma separated).
    #[arg(long, value_delimiter = ',')]
    domains: Option<Vec<usize>>,
}

#[derive(Args)]
struct ProtocolArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seeds to average over (comma separated); defaults to the config seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Only these fold domains (comma separated).
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<usize>>,
    /// Skip writing per-fold checkpoints.
    #[arg(long)]
    no_checkpoints: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding results.csv.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateData(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Dg(a) => protocol_cmd(a, Some(Protocol::Dg), false),
        Command::Esdg(a) => protocol_cmd(a, Some(Protocol::Esdg), false),
        Command::Ablate(a) => protocol_cmd(a, None, true),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = GeneratorConfig {
        domains: a.domains,
        classes: a.classes,
        per_cell: a.per_cell,
        profile: a.profile.parse()?,
        image_size: a.image_size,
        seed: a.seed,
    };
    let m = generate_dataset(&a.out, &cfg)?;
    println!("wrote {} images to {}", m.records.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve(None)?;
    let data = load_dataset(&a.data)?;
    let indices = match a.fold {
        Some(d) => match cfg.protocol {
            Protocol::Dg => split_leave_one_domain_out(&data.manifest, d)?.train,
            Protocol::Esdg => split_single_source(&data.manifest, d)?.train,
        },
        None => (0..data.len()).collect(),
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let start = Instant::now();
    let (mut model, log) = train(&cfg, &data, &indices)?;
    model.fold = a.fold;
    let ckpt = a.out.join("checkpoint.bin");
    checkpoint::save(&ckpt, &model)?;
    let fold = FoldResult {
        domain: a.fold.unwrap_or(0),
        seed: cfg.seed,
        metrics: deco_harness::Metrics { auc: 0.0, acc: 0.0, f1: 0.0, n: 0 },
        log,
        checkpoint: Some(ckpt.clone()),
    };
    let records = report::log_records(&deco_harness::ProtocolReport {
        config: cfg.clone(),
        folds: vec![fold.clone()],
    });
    report::append_lines(&a.out.join(report::LOG_JSONL), &records)?;
    for e in &fold.log {
        println!(
            "epoch {:>3} {:<4} ce {:.4} align {} total {:.4}",
            e.epoch,
            e.phase,
            e.ce,
            e.alignment.map_or("-".to_string(), |v| format!("{v:.4}")),
            e.total
        );
    }
    println!(
        "trained {} ({} samples) in {:.1}s -> {}",
        cfg.run_id(),
        indices.len(),
        start.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let indices: Vec<usize> = match (&a.domains, model.fold) {
        (Some(ds), _) => (0..data.len()).filter(|&i| ds.contains(&data.domain(i))).collect(),
        (None, Some(d)) => match model.config.protocol {
            Protocol::Dg => split_leave_one_domain_out(&data.manifest, d)?.test,
            Protocol::Esdg => split_single_source(&data.manifest, d)?.test,
        },
        (None, None) => (0..data.len()).collect(),
    };
    let m = evaluate(&model, &data, &indices)?;
    println!("auc {:.2} acc {:.2} f1 {:.2} (n = {})", m.auc, m.acc, m.f1, m.n);
    let out = a
        .out
        .or_else(|| a.checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    let cfg = &model.config;
    let row = ResultRow {
        run_id: cfg.run_id(),
        protocol: cfg.protocol.as_str().into(),
        variant: cfg.variant_name(),
        seed: cfg.seed,
        role: "eval".into(),
        domain: match (&a.domains, model.fold) {
            (Some(ds), _) => ds.iter().map(usize::to_string).collect::<Vec<_>>().join("+"),
            (None, Some(d)) => d.to_string(),
            (None, None) => "all".into(),
        },
        auc: m.auc,
        acc: m.acc,
        f1: m.f1,
        n_test: m.n,
        timestamp: report::now(),
        config: report::config_echo(cfg),
    };
    report::append_csv(&out.join(report::RESULTS_CSV), &[row])?;
    Ok(())
}

fn progress(cfg: &ExperimentConfig, f: &FoldResult) {
    eprintln!(
        "[{} {} seed {}] domain {}: auc {:.2} acc {:.2} f1 {:.2}",
        cfg.protocol.as_str(),
        cfg.variant_name(),
        f.seed,
        f.domain,
        f.metrics.auc,
        f.metrics.acc,
        f.metrics.f1
    );
}

fn protocol_cmd(a: ProtocolArgs, protocol: Option<Protocol>, ablate: bool) -> Result<()> {
    let cfg = a.cfg.resolve(protocol)?;
    let data = load_dataset(&a.data)?;
    let seeds = a.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    if seeds.is_empty() {
        bail!("--seeds needs at least one value");
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let checkpoint_dir = (!a.no_checkpoints).then(|| a.out.join("checkpoints"));
    if let Some(dir) = &checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let opts = RunOptions {
        checkpoint_dir,
        domains: a.folds.clone(),
        progress: Some(progress),
    };
    let start = Instant::now();
    let reports = if ablate {
        run_ablation(&cfg, &data, &seeds, &opts)?
    } else {
        vec![run_protocol(&cfg, &data, &seeds, &opts)?]
    };
    for r in &reports {
        report::write_all(&a.out, r)?;
        let avg = r.average();
        println!(
            "{:<14} auc {:.2} acc {:.2} f1 {:.2}",
            r.config.variant_name(),
            avg.auc,
            avg.acc,
            avg.f1
        );
    }
    println!("{:.1}s, results in {}", start.elapsed().as_secs_f64(), a.out.display());
    Ok(())
}

fn gradcheck_cmd(a: GradArgs) -> Result<()> {
    let start = Instant::now();
    let suite = gradsuite::run(a.seeds);
    for (name, err) in suite.by_name() {
        let mark = if err < a.tolerance { "ok  " } else { "FAIL" };
        println!("{mark} {name:<32} {err:.3e}");
    }
    let failures = suite.failures(a.tolerance);
    println!(
        "{} checks over {} seeds, {} failures, {:.1}s",
        suite.cases.len(),
        a.seeds,
        failures.len(),
        start.elapsed().as_secs_f64()
    );
    if !failures.is_empty() {
        bail!("gradient check failed");
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let path = a.out.join(report::RESULTS_CSV);
    let rows = report::read_csv(&path)?;
    let text = report::summarize(&rows);
    print!("{text}");
    std::fs::write(a.out.join("summary.txt"), &text)?;
    Ok(())
}
