//! Training loop (warm start, then the recombination phase) and evaluation.

use std::time::Instant;

use deco_core::disentangle::{self, Convention};
use deco_core::loss::{cross_entropy, semantic_features, total_loss};
use deco_core::model::{self, BackboneConfig, Parameters};
use deco_core::prototypes::{
    effective_coefficient, enhance_semantic_batch, enhance_stats_batch, synthesize_batch, ClassPrototypeBank,
    CountMatrix, DataAwareWeights, DomainPrototypeBank, InterpolationSampler, LambdaKind,
};
use deco_core::{Graph, SeededRng, Tensor, TensorError, Var};
use deco_data::{Batch, BatchIterator, Dataset};
use serde::Serialize;

use crate::config::{ExperimentConfig, Protocol};
use crate::error::{HarnessError, Result};
use crate::metrics::Metrics;
use crate::optim::AdamW;

const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_LAMBDA: u64 = 3;
const STREAM_JITTER: u64 = 4;

/// Everything needed to evaluate or resume a trained model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ExperimentConfig,
    pub backbone: BackboneConfig,
    pub image_size: usize,
    pub domains: usize,
    /// Protocol fold the model was trained for, if any.
    pub fold: Option<usize>,
    pub params: Parameters,
    pub class_bank: ClassPrototypeBank,
    pub domain_bank: DomainPrototypeBank,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: &'static str,
    pub ce: f64,
    pub alignment: Option<f64>,
    pub total: f64,
    pub alpha: f64,
    pub batches: usize,
    pub class_prototypes: usize,
    pub domain_prototypes: usize,
    pub seconds: f64,
}

struct StepOutcome {
    ce: f64,
    alignment: Option<f64>,
    total: f64,
    alpha: f64,
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    backbone: BackboneConfig,
    data: &'a Dataset,
    weights: DataAwareWeights,
    class_bank: ClassPrototypeBank,
    domain_bank: DomainPrototypeBank,
    sampler: InterpolationSampler,
    jitter: SeededRng,
}

/// Trains on `train` (indices into `data`) and returns the final-epoch model
/// with its per-epoch log.
pub fn train(cfg: &ExperimentConfig, data: &Dataset, train: &[usize]) -> Result<(TrainedModel, Vec<EpochLog>)> {
    let classes = data.manifest.params.classes;
    let domains = data.manifest.params.domains;
    cfg.validate(classes)?;
    let backbone = cfg.backbone(classes);
    let labels = data.labels(train);
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(HarnessError::Degenerate(format!(
            "training set has a single class ({})",
            labels.first().copied().unwrap_or(0)
        )));
    }
    let present_domains = {
        let mut d = data.domains(train);
        d.sort_unstable();
        d.dedup();
        d.len()
    };
    if cfg.adr && cfg.protocol == Protocol::Dg && present_domains < 2 {
        return Err(HarnessError::Degenerate(
            "recombination under dg needs at least two training domains".into(),
        ));
    }
    if train.len() < cfg.batch_size {
        return Err(HarnessError::Config(format!(
            "batch-size {} exceeds the {} training samples",
            cfg.batch_size,
            train.len()
        )));
    }

    let size = data.image_size();
    let [c, h, w] = backbone.feature_shape(backbone.insertion_layer, size, size)?;
    let mut init_rng = SeededRng::derive(cfg.seed, STREAM_INIT);
    let mut params = model::init_parameters(&backbone, &mut init_rng)?;
    let mut opt = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay);
    let items: Vec<(usize, usize)> = train.iter().map(|&i| (i, data.domain(i))).collect();
    let mut batches = BatchIterator::new(items, cfg.batch_size, SeededRng::derive(cfg.seed, STREAM_ORDER))?;

    let counts: CountMatrix = data.counts(train);
    let mut trainer = Trainer {
        cfg,
        backbone: backbone.clone(),
        data,
        weights: DataAwareWeights::compute(&counts, &cfg.weights()),
        class_bank: ClassPrototypeBank::new(classes, &[c, h, w], cfg.bank()),
        domain_bank: DomainPrototypeBank::new(domains, c, cfg.bank()),
        sampler: InterpolationSampler::new(cfg.alpha_c, cfg.alpha_d, SeededRng::derive(cfg.seed, STREAM_LAMBDA))?,
        jitter: SeededRng::derive(cfg.seed, STREAM_JITTER),
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let deco_phase = epoch >= cfg.warm_start_epochs && (cfg.adr || cfg.pixel_loss);
        let mut sums = (0.0, 0.0, 0.0);
        let mut aligned = false;
        let mut alpha = 0.0;
        let epoch_batches = batches.epoch();
        for (b, batch) in epoch_batches.iter().enumerate() {
            let out = trainer
                .step(&mut params, &mut opt, batch, epoch, deco_phase)
                .map_err(|e| non_finite(e, epoch, b, batch, data))?;
            sums.0 += out.ce;
            sums.2 += out.total;
            if let Some(a) = out.alignment {
                sums.1 += a;
                aligned = true;
            }
            alpha = out.alpha;
        }
        if !params.is_finite() {
            return Err(HarnessError::NonFinite {
                epoch,
                batch: epoch_batches.len(),
                detail: "parameters became non-finite".into(),
            });
        }
        let n = epoch_batches.len() as f64;
        log.push(EpochLog {
            epoch,
            phase: if deco_phase { "deco" } else { "erm" },
            ce: sums.0 / n,
            alignment: aligned.then(|| sums.1 / n),
            total: sums.2 / n,
            alpha,
            batches: epoch_batches.len(),
            class_prototypes: (0..classes).filter(|&k| trainer.class_bank.prototype(k).is_some()).count(),
            domain_prototypes: (0..domains).filter(|&d| trainer.domain_bank.mean(d).is_some()).count(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    Ok((
        TrainedModel {
            config: cfg.clone(),
            backbone,
            image_size: size,
            domains,
            fold: None,
            params,
            class_bank: trainer.class_bank,
            domain_bank: trainer.domain_bank,
        },
        log,
    ))
}

/// Wraps step failures, adding batch diagnostics to non-finite errors.
fn non_finite(err: HarnessError, epoch: usize, batch: usize, b: &Batch, data: &Dataset) -> HarnessError {
    match err {
        HarnessError::Tensor(TensorError::NonFinite { .. })
        | HarnessError::Prototype(deco_core::prototypes::PrototypeError::Tensor(TensorError::NonFinite { .. })) => {
            HarnessError::NonFinite {
                epoch,
                batch,
                detail: format!(
                    "{err}; samples {:?}, labels {:?}, domains {:?}",
                    b.indices,
                    data.labels(&b.indices),
                    data.domains(&b.indices)
                ),
            }
        }
        other => other,
    }
}

impl Trainer<'_> {
    fn step(
        &mut self,
        params: &mut Parameters,
        opt: &mut AdamW,
        batch: &Batch,
        epoch: usize,
        deco_phase: bool,
    ) -> Result<StepOutcome> {
        let cfg = self.cfg;
        let x_t = self.data.tensor(&batch.indices)?;
        let labels = self.data.labels(&batch.indices);
        let domains = self.data.domains(&batch.indices);
        let g = Graph::new();
        let pv = params.attach(&g);
        let x = g.constant(x_t);
        let r = model::forward_to_layer(x, &pv, &self.backbone)?;

        let outcome;
        let root;
        if !deco_phase {
            let logits = model::classify(model::forward_from_layer(r, &pv, &self.backbone)?, &pv)?;
            let ce = cross_entropy(logits, &labels)?;
            outcome = StepOutcome {
                ce: ce.value().item()?,
                alignment: None,
                total: ce.value().item()?,
                alpha: 0.0,
            };
            root = ce;
        } else {
            let dec = disentangle::decouple(r, cfg.eps)?;
            let r_aug = if cfg.adr {
                self.recombine(dec, &labels, &domains, &batch.pairing)?
            } else {
                self.jitter_stats(dec)?
            };
            let feat_aug = model::forward_from_layer(r_aug, &pv, &self.backbone)?;
            let logits_aug = model::classify(feat_aug, &pv)?;
            let loss_cfg = cfg.loss();
            if cfg.pixel_loss && loss_cfg.alpha(epoch) > 0.0 {
                let feat_orig = model::forward_from_layer(r, &pv, &self.backbone)?;
                let z_aug = semantic_features(feat_aug, cfg.eps, cfg.normalize_features)?;
                let z_orig = semantic_features(feat_orig, cfg.eps, cfg.normalize_features)?;
                let parts = total_loss(logits_aug, &labels, z_aug, z_orig, epoch, &loss_cfg)?;
                outcome = StepOutcome {
                    ce: parts.ce.value().item()?,
                    alignment: parts.alignment.map(|a| a.value().item()).transpose()?,
                    total: parts.total.value().item()?,
                    alpha: parts.alpha,
                };
                root = parts.total;
            } else {
                let ce = cross_entropy(logits_aug, &labels)?;
                outcome = StepOutcome {
                    ce: ce.value().item()?,
                    alignment: None,
                    total: ce.value().item()?,
                    alpha: 0.0,
                };
                root = ce;
            }
        }

        let grads = g.backward(root)?;
        let grad_tensors: Vec<Tensor> = pv.vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
        if cfg.adr {
            self.update_banks(r, &labels, &domains)?;
        }
        opt.step(params, &grad_tensors);
        Ok(outcome)
    }

    /// Folds the batch's detached content maps and statistics into the banks.
    fn update_banks(&mut self, r: Var<'_>, labels: &[usize], domains: &[usize]) -> Result<()> {
        let stats = disentangle::spatial_stats(&r.value(), self.cfg.eps)?;
        let z = disentangle::instance_normalize(&r.value(), &stats)?;
        self.class_bank.update(z.tensor(), labels)?;
        self.domain_bank.update(&stats.mu, &stats.sigma, domains)?;
        Ok(())
    }

    fn coefficient(&mut self, kind: LambdaKind, weight: Option<f64>, initialized: bool) -> Result<f64> {
        let lambda = self.sampler.sample(kind)?;
        Ok(match weight {
            Some(w) if self.cfg.prototype && initialized => effective_coefficient(lambda, w, self.cfg.clamp),
            _ => 1.0,
        })
    }

    /// Content of sample `i` on the (prototype-enhanced) statistics of its
    /// partner `pairing[i]`.
    fn recombine<'g>(
        &mut self,
        dec: disentangle::Decoupled<'g>,
        labels: &[usize],
        domains: &[usize],
        pairing: &[usize],
    ) -> Result<Var<'g>> {
        let n = labels.len();
        let mut e_c = Vec::with_capacity(n);
        let mut e_d = Vec::with_capacity(n);
        let mut e_own = Vec::with_capacity(n);
        for i in 0..n {
            let init = self.class_bank.prototype(labels[i]).is_some();
            e_c.push(self.coefficient(LambdaKind::Class, self.weights.class[labels[i]], init)?);
            let dj = domains[pairing[i]];
            let init = self.domain_bank.mean(dj).is_some();
            e_d.push(self.coefficient(LambdaKind::Domain, self.weights.domain[dj], init)?);
        }
        let partner_domains: Vec<usize> = pairing.iter().map(|&j| domains[j]).collect();
        let z_hat = enhance_semantic_batch(dec.z, labels, &self.class_bank, &e_c)?;
        let mu_j = dec.mu.index_select(pairing)?;
        let sigma_j = dec.sigma.index_select(pairing)?;
        let (mu_hat, sigma_hat) = enhance_stats_batch(mu_j, sigma_j, &partner_domains, &self.domain_bank, &e_d)?;
        let sigma_hat = match self.cfg.convention {
            Convention::SwapBoth => sigma_hat,
            Convention::DonorMeanOnly => {
                for i in 0..n {
                    let init = self.domain_bank.std(domains[i]).is_some();
                    e_own.push(self.coefficient(LambdaKind::Domain, self.weights.domain[domains[i]], init)?);
                }
                enhance_stats_batch(dec.mu, dec.sigma, domains, &self.domain_bank, &e_own)?.1
            }
        };
        Ok(synthesize_batch(z_hat, mu_hat, sigma_hat)?)
    }

    /// Own content on independently jittered own statistics.
    fn jitter_stats<'g>(&mut self, dec: disentangle::Decoupled<'g>) -> Result<Var<'g>> {
        let shape = dec.mu.shape();
        let s = self.cfg.jitter_std;
        let rng = &mut self.jitter;
        let fm = Tensor::from_fn(&shape, |_| 1.0 + s * rng.normal());
        let fs = Tensor::from_fn(&shape, |_| (1.0 + s * rng.normal()).max(0.05));
        let g = dec.mu.graph();
        let mu = dec.mu.mul(g.constant(fm))?;
        let sigma = dec.sigma.mul(g.constant(fs))?;
        Ok(synthesize_batch(dec.z, mu, sigma)?)
    }
}

/// Row-major `N×K` class probabilities on the original path.
pub fn predict(model: &TrainedModel, data: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    const CHUNK: usize = 64;
    let k = model.backbone.num_classes;
    let mut probs = Vec::with_capacity(indices.len() * k);
    for chunk in indices.chunks(CHUNK) {
        let g = Graph::new();
        let pv = model.params.attach_frozen(&g);
        let x = g.constant(data.tensor(chunk)?);
        let logits = model::forward(x, &pv, &model.backbone)?.value();
        for row in logits.data().chunks(k) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            probs.extend(exps.iter().map(|e| e / z));
        }
    }
    Ok(probs)
}

pub fn evaluate(model: &TrainedModel, data: &Dataset, indices: &[usize]) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    if data.image_size() != model.image_size || data.manifest.params.classes != model.backbone.num_classes {
        return Err(HarnessError::Config(format!(
            "model expects {}px images with {} classes, dataset has {}px and {}",
            model.image_size,
            model.backbone.num_classes,
            data.image_size(),
            data.manifest.params.classes
        )));
    }
    let probs = predict(model, data, indices)?;
    Metrics::from_probs(&probs, model.backbone.num_classes, &data.labels(indices))
}
