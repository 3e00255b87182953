//! Experiment configuration: plain-text `key = value` files, CLI overrides
//! and a canonical rendering that feeds the run id.

use std::fmt::Write as _;
use std::str::FromStr;

use deco_core::disentangle::Convention;
use deco_core::loss::{AlphaSchedule, LossConfig};
use deco_core::model::BackboneConfig;
use deco_core::prototypes::{BankMode, WeightConfig, WeightNormalization};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Dg,
    Esdg,
}

impl FromStr for Protocol {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dg" => Ok(Self::Dg),
            "esdg" => Ok(Self::Esdg),
            other => Err(HarnessError::Config(format!("unknown protocol {other:?} (dg | esdg)"))),
        }
    }
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Dg => "dg",
            Self::Esdg => "esdg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub warm_start_epochs: usize,
    pub alpha_c: f64,
    pub alpha_d: f64,
    pub gamma_c: f64,
    pub gamma_d: f64,
    pub tau: f64,
    pub alpha_max: f64,
    pub alpha_schedule: AlphaSchedule,
    pub ramp_epochs: usize,
    pub insertion_layer: usize,
    pub adr: bool,
    pub prototype: bool,
    pub pixel_loss: bool,
    pub seed: u64,
    pub protocol: Protocol,
    pub convention: Convention,
    pub clamp: bool,
    pub weight_normalization: WeightNormalization,
    pub bank_mode: String,
    pub bank_momentum: f64,
    pub eps: f64,
    pub normalize_features: bool,
    /// Std of the multiplicative statistic jitter used by pixel-loss without adr.
    pub jitter_std: f64,
    pub stage_widths: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub stage_kernels: Vec<usize>,
    pub blocks_per_stage: usize,
}

impl ExperimentConfig {
    pub fn defaults(protocol: Protocol) -> Self {
        let esdg = protocol == Protocol::Esdg;
        Self {
            epochs: 100,
            learning_rate: 5e-4,
            weight_decay: 1e-4,
            batch_size: 32,
            warm_start_epochs: if esdg { 35 } else { 30 },
            alpha_c: if esdg { 0.55 } else { 0.5 },
            alpha_d: if esdg { 0.4 } else { 0.5 },
            gamma_c: 0.2,
            gamma_d: 0.2,
            tau: 0.1,
            alpha_max: 1.0,
            alpha_schedule: AlphaSchedule::LinearRamp,
            ramp_epochs: 10,
            insertion_layer: 1,
            adr: true,
            prototype: true,
            pixel_loss: true,
            seed: 0,
            protocol,
            convention: Convention::SwapBoth,
            clamp: true,
            weight_normalization: WeightNormalization::MeanOne,
            bank_mode: "ema".into(),
            bank_momentum: 0.9,
            eps: 1e-5,
            normalize_features: true,
            jitter_std: 0.1,
            stage_widths: vec![16, 32, 64],
            stage_strides: vec![2, 2, 1],
            stage_kernels: vec![3, 3, 3],
            blocks_per_stage: 1,
        }
    }

    /// Builds a config from `(key, value)` pairs; a `protocol` entry picks
    /// the defaults the remaining keys override.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let protocol = pairs
            .iter()
            .rev()
            .find(|(k, _)| normalize_key(k) == "protocol")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(Protocol::Dg);
        let mut cfg = Self::defaults(protocol);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let value = value.trim();
        let bad = |what: &str| HarnessError::Config(format!("{key}: expected {what}, got {value:?}"));
        let uint = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let real = || value.parse::<f64>().map_err(|_| bad("a number"));
        let flag = || match value {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            _ => Err(bad("a boolean")),
        };
        let list = || -> Result<Vec<usize>> {
            value
                .split(',')
                .map(|p| p.trim().parse::<usize>().map_err(|_| bad("a comma-separated integer list")))
                .collect()
        };
        match key.as_str() {
            "epochs" => self.epochs = uint()?,
            "learning-rate" => self.learning_rate = real()?,
            "weight-decay" => self.weight_decay = real()?,
            "batch-size" => self.batch_size = uint()?,
            "warm-start-epochs" => self.warm_start_epochs = uint()?,
            "alpha_c" => self.alpha_c = real()?,
            "alpha_d" => self.alpha_d = real()?,
            "gamma_c" => self.gamma_c = real()?,
            "gamma_d" => self.gamma_d = real()?,
            "tau" => self.tau = real()?,
            "alpha-max" => self.alpha_max = real()?,
            "alpha-schedule" => self.alpha_schedule = value.parse().map_err(HarnessError::Config)?,
            "ramp-epochs" => self.ramp_epochs = uint()?,
            "insertion-layer" => self.insertion_layer = uint()?,
            "adr" => self.adr = flag()?,
            "prototype" => self.prototype = flag()?,
            "pixel-loss" => self.pixel_loss = flag()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
            "protocol" => {
                let p: Protocol = value.parse()?;
                if p != self.protocol {
                    return Err(HarnessError::Config(
                        "protocol must be chosen before other keys are applied".into(),
                    ));
                }
            }
            "convention" => self.convention = value.parse().map_err(HarnessError::Config)?,
            "clamp" => self.clamp = flag()?,
            "weight-normalization" => self.weight_normalization = value.parse().map_err(HarnessError::Config)?,
            "bank-mode" => {
                BankMode::parse(value, self.bank_momentum).map_err(HarnessError::Config)?;
                self.bank_mode = value.to_string();
            }
            "bank-momentum" => self.bank_momentum = real()?,
            "eps" => self.eps = real()?,
            "normalize-features" => self.normalize_features = flag()?,
            "jitter-std" => self.jitter_std = real()?,
            "stage-widths" => self.stage_widths = list()?,
            "stage-strides" => self.stage_strides = list()?,
            "stage-kernels" => self.stage_kernels = list()?,
            "blocks-per-stage" => self.blocks_per_stage = uint()?,
            other => return Err(HarnessError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.warm_start_epochs >= self.epochs {
            return fail(format!(
                "warm-start-epochs ({}) must be below epochs ({})",
                self.warm_start_epochs, self.epochs
            ));
        }
        for (name, v) in [
            ("learning-rate", self.learning_rate),
            ("alpha_c", self.alpha_c),
            ("alpha_d", self.alpha_d),
            ("tau", self.tau),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("weight-decay", self.weight_decay),
            ("gamma_c", self.gamma_c),
            ("gamma_d", self.gamma_d),
            ("alpha-max", self.alpha_max),
            ("eps", self.eps),
            ("jitter-std", self.jitter_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.batch_size < 2 {
            return fail("batch-size must be at least 2".into());
        }
        if self.prototype && !self.adr {
            return fail("prototype requires adr".into());
        }
        if !(0.0..1.0).contains(&self.bank_momentum) {
            return fail(format!("bank-momentum must lie in [0, 1), got {}", self.bank_momentum));
        }
        self.backbone(num_classes).validate()?;
        Ok(())
    }

    pub fn backbone(&self, num_classes: usize) -> BackboneConfig {
        BackboneConfig {
            input_channels: 3,
            stage_widths: self.stage_widths.clone(),
            stage_strides: self.stage_strides.clone(),
            stage_kernels: self.stage_kernels.clone(),
            blocks_per_stage: self.blocks_per_stage,
            insertion_layer: self.insertion_layer,
            num_classes,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            alpha_max: self.alpha_max,
            schedule: self.alpha_schedule,
            ramp_epochs: self.ramp_epochs,
            warm_start_epochs: self.warm_start_epochs,
            normalize_features: self.normalize_features,
            eps: self.eps,
        }
    }

    pub fn weights(&self) -> WeightConfig {
        WeightConfig {
            gamma_c: self.gamma_c,
            gamma_d: self.gamma_d,
            normalization: self.weight_normalization,
            clamp: self.clamp,
        }
    }

    pub fn bank(&self) -> BankMode {
        BankMode::parse(&self.bank_mode, self.bank_momentum).expect("validated on set")
    }

    /// Every key in a fixed order, `key = value` per line.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("protocol", self.protocol.as_str().into()),
            ("epochs", self.epochs.to_string()),
            ("learning-rate", self.learning_rate.to_string()),
            ("weight-decay", self.weight_decay.to_string()),
            ("batch-size", self.batch_size.to_string()),
            ("warm-start-epochs", self.warm_start_epochs.to_string()),
            ("alpha_c", self.alpha_c.to_string()),
            ("alpha_d", self.alpha_d.to_string()),
            ("gamma_c", self.gamma_c.to_string()),
            ("gamma_d", self.gamma_d.to_string()),
            ("tau", self.tau.to_string()),
            ("alpha-max", self.alpha_max.to_string()),
            ("alpha-schedule", self.alpha_schedule.as_str().into()),
            ("ramp-epochs", self.ramp_epochs.to_string()),
            ("insertion-layer", self.insertion_layer.to_string()),
            ("adr", self.adr.to_string()),
            ("prototype", self.prototype.to_string()),
            ("pixel-loss", self.pixel_loss.to_string()),
            ("seed", self.seed.to_string()),
            ("convention", self.convention.as_str().into()),
            ("clamp", self.clamp.to_string()),
            ("weight-normalization", self.weight_normalization.as_str().into()),
            ("bank-mode", self.bank_mode.clone()),
            ("bank-momentum", self.bank_momentum.to_string()),
            ("eps", self.eps.to_string()),
            ("normalize-features", self.normalize_features.to_string()),
            ("jitter-std", self.jitter_std.to_string()),
            ("stage-widths", join(&self.stage_widths)),
            ("stage-strides", join(&self.stage_strides)),
            ("stage-kernels", join(&self.stage_kernels)),
            ("blocks-per-stage", self.blocks_per_stage.to_string()),
        ]
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse_canonical(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical rendering.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Short name of the flag combination.
    pub fn variant_name(&self) -> String {
        match (self.adr, self.prototype, self.pixel_loss) {
            (false, false, false) => "erm".into(),
            (true, false, false) => "adr".into(),
            (false, false, true) => "pixel".into(),
            (true, true, false) => "adr+prototype".into(),
            (true, false, true) => "adr+pixel".into(),
            (true, true, true) => "full".into(),
            (false, true, _) => "invalid".into(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, v) in self.entries() {
            let value = match serde_json::from_str::<serde_json::Value>(&v) {
                Ok(j @ (serde_json::Value::Number(_) | serde_json::Value::Bool(_))) => j,
                _ => serde_json::Value::String(v),
            };
            map.insert(k.to_string(), value);
        }
        serde_json::Value::Object(map)
    }
}

/// Underscore and hyphen spellings are accepted for every key; the
/// canonical forms follow the documented names.
fn normalize_key(key: &str) -> String {
    let k = key.trim().to_ascii_lowercase();
    match k.as_str() {
        "alpha-c" => "alpha_c".into(),
        "alpha-d" => "alpha_d".into(),
        "gamma-c" => "gamma_c".into(),
        "gamma-d" => "gamma_d".into(),
        "alpha_c" | "alpha_d" | "gamma_c" | "gamma_d" => k,
        _ => k.replace('_', "-"),
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", i + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// The six ablation flag combinations, from ERM to the full model.
pub fn ablation_variants(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    [
        (false, false, false),
        (true, false, false),
        (false, false, true),
        (true, true, false),
        (true, false, true),
        (true, true, true),
    ]
    .into_iter()
    .map(|(adr, prototype, pixel_loss)| ExperimentConfig {
        adr,
        prototype,
        pixel_loss,
        ..base.clone()
    })
    .collect()
}
