//! Class and domain prototype banks, data-aware interpolation weights and
//! prototype-enhanced synthesis.
//!
//! Prototypes are running statistics, never parameters: the batch graph
//! functions insert them as constants so no gradient reaches the banks.

use std::str::FromStr;

use thiserror::Error;

use crate::disentangle::{reassemble, reassemble_var, SemanticMap};
use crate::error::TensorError;
use crate::graph::Var;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrototypeError {
    #[error("{kind} {index} has zero training examples")]
    ZeroCount { kind: &'static str, index: usize },
    #[error("{kind} prototype {index} is not initialized")]
    Uninitialized { kind: &'static str, index: usize },
    #[error("{kind} index {index} out of range ({len})")]
    OutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },
    #[error("Beta shape must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("invalid count matrix: {0}")]
    InvalidCounts(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = PrototypeError> = std::result::Result<T, E>;

/// `n[d][c]`: training examples of class `c` in domain `d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    domains: usize,
    classes: usize,
    counts: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(domains: usize, classes: usize) -> Self {
        Self {
            domains,
            classes,
            counts: vec![0; domains * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || classes == 0 || rows.iter().any(|r| r.len() != classes) {
            return Err(PrototypeError::InvalidCounts(
                "rows must be non-empty and of equal length".into(),
            ));
        }
        Ok(Self {
            domains: rows.len(),
            classes,
            counts: rows.concat(),
        })
    }

    pub fn domains(&self) -> usize {
        self.domains
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, domain: usize, class: usize) -> u64 {
        self.counts[domain * self.classes + class]
    }

    pub fn increment(&mut self, domain: usize, class: usize) {
        self.counts[domain * self.classes + class] += 1;
    }

    pub fn row(&self, domain: usize) -> &[u64] {
        &self.counts[domain * self.classes..(domain + 1) * self.classes]
    }

    /// `n_{★,c}`
    pub fn class_total(&self, class: usize) -> u64 {
        (0..self.domains).map(|d| self.get(d, class)).sum()
    }

    /// `n_{d,★}`
    pub fn domain_total(&self, domain: usize) -> u64 {
        self.row(domain).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row-major `d, c` values.
    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightNormalization {
    /// Divide the raw weight by the number of present classes (domains).
    #[default]
    MeanOne,
    Raw,
}

impl FromStr for WeightNormalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean-one" => Ok(Self::MeanOne),
            "raw" => Ok(Self::Raw),
            other => Err(format!("unknown weight normalization {other:?} (mean-one | raw)")),
        }
    }
}

impl WeightNormalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MeanOne => "mean-one",
            Self::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    pub gamma_c: f64,
    pub gamma_d: f64,
    pub normalization: WeightNormalization,
    pub clamp: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            gamma_c: 0.2,
            gamma_d: 0.2,
            normalization: WeightNormalization::MeanOne,
            clamp: true,
        }
    }
}

/// Shared form of both weights: `Σ_g Σ_k n^γ / Σ_k n_target^γ` over groups
/// `g`, where `groups[g]` lists the counts of group `g`.
fn group_weight(
    target: usize,
    groups: &[Vec<u64>],
    gamma: f64,
    normalization: WeightNormalization,
    kind: &'static str,
) -> Result<f64> {
    if target >= groups.len() {
        return Err(PrototypeError::OutOfRange {
            kind,
            index: target,
            len: groups.len(),
        });
    }
    let mass = |g: &[u64]| g.iter().fold(0.0, |acc, &n| acc + (n as f64).powf(gamma));
    if groups[target].iter().sum::<u64>() == 0 {
        return Err(PrototypeError::ZeroCount { kind, index: target });
    }
    let own = mass(&groups[target]);
    let all = groups.iter().fold(0.0, |acc, g| acc + mass(g));
    let raw = all / own;
    Ok(match normalization {
        WeightNormalization::Raw => raw,
        WeightNormalization::MeanOne => {
            let present = groups.iter().filter(|g| g.iter().sum::<u64>() > 0).count();
            raw / present as f64
        }
    })
}

fn class_groups(counts: &CountMatrix) -> Vec<Vec<u64>> {
    (0..counts.classes)
        .map(|c| (0..counts.domains).map(|d| counts.get(d, c)).collect())
        .collect()
}

fn domain_groups(counts: &CountMatrix) -> Vec<Vec<u64>> {
    (0..counts.domains).map(|d| counts.row(d).to_vec()).collect()
}

/// Class-aware weight `w_c`; rarer classes get larger weights.
pub fn class_weight(class: usize, counts: &CountMatrix, cfg: &WeightConfig) -> Result<f64> {
    group_weight(class, &class_groups(counts), cfg.gamma_c, cfg.normalization, "class")
}

/// Domain-aware weight `w_d`; rarer domains get larger weights.
pub fn domain_weight(domain: usize, counts: &CountMatrix, cfg: &WeightConfig) -> Result<f64> {
    group_weight(domain, &domain_groups(counts), cfg.gamma_d, cfg.normalization, "domain")
}

/// All weights of a training set; `None` for classes/domains without data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataAwareWeights {
    pub class: Vec<Option<f64>>,
    pub domain: Vec<Option<f64>>,
}

impl DataAwareWeights {
    pub fn compute(counts: &CountMatrix, cfg: &WeightConfig) -> Self {
        let cg = class_groups(counts);
        let dg = domain_groups(counts);
        Self {
            class: (0..counts.classes)
                .map(|c| group_weight(c, &cg, cfg.gamma_c, cfg.normalization, "class").ok())
                .collect(),
            domain: (0..counts.domains)
                .map(|d| group_weight(d, &dg, cfg.gamma_d, cfg.normalization, "domain").ok())
                .collect(),
        }
    }
}

/// `e = λ·w`, clamped to [0, 1] when requested.
pub fn effective_coefficient(lambda: f64, weight: f64, clamp: bool) -> f64 {
    let e = lambda * weight;
    if clamp {
        e.clamp(0.0, 1.0)
    } else {
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BankMode {
    /// Running sum / count: the exact mean of everything seen.
    Exact,
    /// `p ← m·p + (1 − m)·batch_mean`, initialized on first sight.
    Ema { momentum: f64 },
}

impl BankMode {
    pub fn parse(mode: &str, momentum: f64) -> Result<Self, String> {
        match mode {
            "exact" => Ok(Self::Exact),
            "ema" if momentum > 0.0 && momentum < 1.0 => Ok(Self::Ema { momentum }),
            "ema" => Err(format!("ema momentum must be in (0, 1), got {momentum}")),
            other => Err(format!("unknown bank mode {other:?} (exact | ema)")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Ema { .. } => "ema",
        }
    }
}

/// One running mean per key, each of a fixed shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningBank {
    shape: Vec<usize>,
    mode: BankMode,
    sums: Vec<Option<Tensor>>,
    means: Vec<Option<Tensor>>,
    counts: Vec<u64>,
}

impl RunningBank {
    pub fn new(keys: usize, shape: &[usize], mode: BankMode) -> Self {
        Self {
            shape: shape.to_vec(),
            mode,
            sums: vec![None; keys],
            means: vec![None; keys],
            counts: vec![0; keys],
        }
    }

    pub fn keys(&self) -> usize {
        self.means.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mode(&self) -> BankMode {
        self.mode
    }

    pub fn get(&self, key: usize) -> Option<&Tensor> {
        self.means.get(key).and_then(Option::as_ref)
    }

    pub fn count(&self, key: usize) -> u64 {
        self.counts[key]
    }

    /// Folds one batch of `(key, value)` items into the bank.
    pub fn update(&mut self, items: &[(usize, &[f64])], kind: &'static str) -> Result<()> {
        let len: usize = self.shape.iter().product();
        for &(key, v) in items {
            if key >= self.keys() {
                return Err(PrototypeError::OutOfRange {
                    kind,
                    index: key,
                    len: self.keys(),
                });
            }
            if v.len() != len {
                return Err(TensorError::ShapeMismatch {
                    op: "bank_update",
                    lhs: self.shape.clone(),
                    rhs: vec![v.len()],
                }
                .into());
            }
        }
        match self.mode {
            BankMode::Exact => {
                for &(key, v) in items {
                    let sum = self.sums[key].get_or_insert_with(|| Tensor::zeros(&self.shape));
                    add_slice(sum, v);
                    self.counts[key] += 1;
                    let n = self.counts[key] as f64;
                    self.means[key] = Some(sum.map(|s| s / n));
                }
            }
            BankMode::Ema { momentum } => {
                for key in 0..self.keys() {
                    let members: Vec<&[f64]> =
                        items.iter().filter(|(k, _)| *k == key).map(|&(_, v)| v).collect();
                    if members.is_empty() {
                        continue;
                    }
                    let mut acc = Tensor::zeros(&self.shape);
                    for v in &members {
                        add_slice(&mut acc, v);
                    }
                    let batch_mean = acc.map(|s| s / members.len() as f64);
                    self.counts[key] += members.len() as u64;
                    self.means[key] = Some(match self.means[key].take() {
                        None => batch_mean,
                        Some(prev) => prev.zip_map(&batch_mean, "ema", |p, b| {
                            momentum * p + (1.0 - momentum) * b
                        })?,
                    });
                }
            }
        }
        Ok(())
    }

    /// Entries as named tensors under `prefix`; uninitialized keys are skipped.
    pub fn to_named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let counts = Tensor::from_fn(&[self.keys()], |k| self.counts[k] as f64);
        out.push((format!("{prefix}.count"), counts));
        for (k, m) in self.means.iter().enumerate() {
            if let Some(m) = m {
                out.push((format!("{prefix}.mean.{k}"), m.clone()));
            }
        }
        out
    }

    /// Restores entries written by [`RunningBank::to_named`]. Exact-mode sums
    /// are rebuilt as `mean · count`.
    pub fn load_named(&mut self, prefix: &str, tensors: &[(String, Tensor)]) -> Result<()> {
        let find = |name: String| tensors.iter().find(|(n, _)| *n == name).map(|(_, t)| t);
        let counts = find(format!("{prefix}.count")).ok_or_else(|| {
            PrototypeError::InvalidCounts(format!("missing {prefix}.count"))
        })?;
        if counts.len() != self.keys() {
            return Err(PrototypeError::InvalidCounts(format!(
                "{prefix}.count has {} entries, expected {}",
                counts.len(),
                self.keys()
            )));
        }
        for k in 0..self.keys() {
            self.counts[k] = counts.data()[k] as u64;
            self.means[k] = match find(format!("{prefix}.mean.{k}")) {
                Some(t) => Some(t.reshape(&self.shape)?),
                None => None,
            };
            self.sums[k] = self.means[k]
                .as_ref()
                .map(|m| m.mul_scalar(self.counts[k] as f64));
        }
        Ok(())
    }
}

fn add_slice(acc: &mut Tensor, v: &[f64]) {
    let t = Tensor::new(acc.shape().to_vec(), v.to_vec()).expect("length checked by caller");
    acc.add_assign(&t);
}

/// `p_c`: mean semantic map per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypeBank {
    bank: RunningBank,
}

impl ClassPrototypeBank {
    /// `shape` is the per-sample feature shape `C×H×W`.
    pub fn new(classes: usize, shape: &[usize], mode: BankMode) -> Self {
        Self {
            bank: RunningBank::new(classes, shape, mode),
        }
    }

    pub fn prototype(&self, class: usize) -> Option<&Tensor> {
        self.bank.get(class)
    }

    pub fn inner(&self) -> &RunningBank {
        &self.bank
    }

    pub fn inner_mut(&mut self) -> &mut RunningBank {
        &mut self.bank
    }

    /// Folds a batch of semantic maps `z` (`N×C×H×W`) with labels.
    pub fn update(&mut self, z: &Tensor, labels: &[usize]) -> Result<()> {
        let items = split_rows(z, labels, self.bank.shape())?;
        self.bank.update(&items, "class")
    }
}

/// `u_d`, `v_d`: mean spatial statistics per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPrototypeBank {
    u: RunningBank,
    v: RunningBank,
}

impl DomainPrototypeBank {
    pub fn new(domains: usize, channels: usize, mode: BankMode) -> Self {
        Self {
            u: RunningBank::new(domains, &[channels], mode),
            v: RunningBank::new(domains, &[channels], mode),
        }
    }

    pub fn mean(&self, domain: usize) -> Option<&Tensor> {
        self.u.get(domain)
    }

    pub fn std(&self, domain: usize) -> Option<&Tensor> {
        self.v.get(domain)
    }

    pub fn banks(&self) -> (&RunningBank, &RunningBank) {
        (&self.u, &self.v)
    }

    pub fn banks_mut(&mut self) -> (&mut RunningBank, &mut RunningBank) {
        (&mut self.u, &mut self.v)
    }

    /// Folds per-sample `mu`, `sigma` (`N×C`, or `N×C×1×1`) with domain ids.
    pub fn update(&mut self, mu: &Tensor, sigma: &Tensor, domains: &[usize]) -> Result<()> {
        let shape = self.u.shape().to_vec();
        let items = split_rows(mu, domains, &shape)?;
        self.u.update(&items, "domain")?;
        let items = split_rows(sigma, domains, &shape)?;
        self.v.update(&items, "domain")
    }
}

fn split_rows<'a>(
    t: &'a Tensor,
    keys: &[usize],
    row_shape: &[usize],
) -> Result<Vec<(usize, &'a [f64])>> {
    let row_len: usize = row_shape.iter().product();
    if t.shape()[0] != keys.len() || t.len() != keys.len() * row_len {
        return Err(PrototypeError::Tensor(TensorError::ShapeMismatch {
            op: "bank_update",
            lhs: t.shape().to_vec(),
            rhs: [&[keys.len()][..], row_shape].concat(),
        }));
    }
    Ok(keys
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, &t.data()[i * row_len..(i + 1) * row_len]))
        .collect())
}

/// `ẑ = e·z + (1 − e)·p_c` for a single instance.
pub fn enhance_semantic(
    z: &SemanticMap,
    class: usize,
    bank: &ClassPrototypeBank,
    lambda_c: f64,
    w_c: f64,
    clamp: bool,
) -> Result<SemanticMap> {
    let p = bank
        .prototype(class)
        .ok_or(PrototypeError::Uninitialized { kind: "class", index: class })?;
    let zt = z.tensor();
    if zt.len() != p.len() {
        return Err(TensorError::ShapeMismatch {
            op: "enhance_semantic",
            lhs: zt.shape().to_vec(),
            rhs: p.shape().to_vec(),
        }
        .into());
    }
    let e = effective_coefficient(lambda_c, w_c, clamp);
    let data = zt
        .data()
        .iter()
        .zip(p.data())
        .map(|(&z, &p)| e * z + (1.0 - e) * p)
        .collect();
    Ok(SemanticMap(Tensor::new(zt.shape().to_vec(), data)?))
}

/// `μ̂ = e·μ + (1 − e)·u_d`, `σ̂ = e·σ + (1 − e)·v_d` for a single instance.
pub fn enhance_domain_stats(
    mu: &Tensor,
    sigma: &Tensor,
    domain: usize,
    bank: &DomainPrototypeBank,
    lambda_d: f64,
    w_d: f64,
    clamp: bool,
) -> Result<(Tensor, Tensor)> {
    let uninit = PrototypeError::Uninitialized { kind: "domain", index: domain };
    let u = bank.mean(domain).ok_or(uninit.clone())?;
    let v = bank.std(domain).ok_or(uninit)?;
    let e = effective_coefficient(lambda_d, w_d, clamp);
    let mix = |x: &Tensor, proto: &Tensor| -> Result<Tensor> {
        if x.len() != proto.len() {
            return Err(TensorError::ShapeMismatch {
                op: "enhance_domain_stats",
                lhs: x.shape().to_vec(),
                rhs: proto.shape().to_vec(),
            }
            .into());
        }
        let data = x
            .data()
            .iter()
            .zip(proto.data())
            .map(|(&a, &b)| e * a + (1.0 - e) * b)
            .collect();
        Ok(Tensor::new(x.shape().to_vec(), data)?)
    };
    Ok((mix(mu, u)?, mix(sigma, v)?))
}

/// `r̂' = σ̂_j·ẑ_i + μ̂_j`, labelled with the content donor's label.
pub fn synthesize(
    z_hat_i: &SemanticMap,
    label_i: usize,
    mu_hat_j: &Tensor,
    sigma_hat_j: &Tensor,
) -> Result<(Tensor, usize)> {
    Ok((reassemble(z_hat_i, mu_hat_j, sigma_hat_j)?, label_i))
}

/// Batch form of [`enhance_semantic`] on the graph. `coeffs[i]` is the
/// effective coefficient of sample `i`; samples whose prototype is missing
/// must carry `1.0` (they pass through unchanged).
pub fn enhance_semantic_batch<'g>(
    z: Var<'g>,
    labels: &[usize],
    bank: &ClassPrototypeBank,
    coeffs: &[f64],
) -> Result<Var<'g>> {
    let shape = z.shape();
    let n = shape[0];
    let per: usize = shape[1..].iter().product();
    let mut scale = Vec::with_capacity(n * per);
    let mut offset = Vec::with_capacity(n * per);
    for i in 0..n {
        let e = coeffs[i];
        scale.extend(std::iter::repeat_n(e, per));
        match bank.prototype(labels[i]) {
            Some(p) if e != 1.0 => offset.extend(p.data().iter().map(|&v| (1.0 - e) * v)),
            Some(_) => offset.extend(std::iter::repeat_n(0.0, per)),
            None if e == 1.0 => offset.extend(std::iter::repeat_n(0.0, per)),
            None => {
                return Err(PrototypeError::Uninitialized {
                    kind: "class",
                    index: labels[i],
                })
            }
        }
    }
    let g = z.graph();
    let scale = g.constant(Tensor::new(shape.clone(), scale)?);
    let offset = g.constant(Tensor::new(shape, offset)?);
    Ok(z.mul(scale)?.add(offset)?)
}

/// Batch form of [`enhance_domain_stats`]: `mu`, `sigma` are `N×C×1×1`
/// and `domains[i]` names the domain whose prototypes sample `i` mixes with.
pub fn enhance_stats_batch<'g>(
    mu: Var<'g>,
    sigma: Var<'g>,
    domains: &[usize],
    bank: &DomainPrototypeBank,
    coeffs: &[f64],
) -> Result<(Var<'g>, Var<'g>)> {
    let shape = mu.shape();
    let g = mu.graph();
    let (su, ou) = affine_towards(&shape, domains, coeffs, |d| bank.mean(d))?;
    let (sv, ov) = affine_towards(&shape, domains, coeffs, |d| bank.std(d))?;
    let mu_hat = mu.mul(g.constant(su))?.add(g.constant(ou))?;
    let sigma_hat = sigma.mul(g.constant(sv))?.add(g.constant(ov))?;
    Ok((mu_hat, sigma_hat))
}

fn affine_towards<'a>(
    shape: &[usize],
    domains: &[usize],
    coeffs: &[f64],
    source: impl Fn(usize) -> Option<&'a Tensor>,
) -> Result<(Tensor, Tensor)> {
    let per: usize = shape[1..].iter().product();
    let mut scale = Vec::with_capacity(shape[0] * per);
    let mut offset = Vec::with_capacity(shape[0] * per);
    for (i, &d) in domains.iter().enumerate() {
        let e = coeffs[i];
        scale.extend(std::iter::repeat_n(e, per));
        match source(d) {
            Some(p) if e != 1.0 => offset.extend(p.data().iter().map(|&v| (1.0 - e) * v)),
            None if e != 1.0 => return Err(PrototypeError::Uninitialized { kind: "domain", index: d }),
            _ => offset.extend(std::iter::repeat_n(0.0, per)),
        }
    }
    Ok((Tensor::new(shape.to_vec(), scale)?, Tensor::new(shape.to_vec(), offset)?))
}

/// Graph form of [`synthesize`].
pub fn synthesize_batch<'g>(z_hat: Var<'g>, mu_hat: Var<'g>, sigma_hat: Var<'g>) -> Result<Var<'g>> {
    Ok(reassemble_var(z_hat, mu_hat, sigma_hat)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaKind {
    Class,
    Domain,
}

/// Draws `λ_c ~ Beta(α_c, α_c)` and `λ_d ~ Beta(α_d, α_d)`.
#[derive(Debug, Clone)]
pub struct InterpolationSampler {
    pub alpha_c: f64,
    pub alpha_d: f64,
    rng: SeededRng,
}

impl InterpolationSampler {
    pub fn new(alpha_c: f64, alpha_d: f64, rng: SeededRng) -> Result<Self> {
        for a in [alpha_c, alpha_d] {
            if !(a > 0.0) || !a.is_finite() {
                return Err(PrototypeError::InvalidAlpha(a));
            }
        }
        Ok(Self { alpha_c, alpha_d, rng })
    }

    pub fn sample(&mut self, kind: LambdaKind) -> Result<f64> {
        let a = match kind {
            LambdaKind::Class => self.alpha_c,
            LambdaKind::Domain => self.alpha_d,
        };
        Ok(self.rng.beta(a, a)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(gamma: f64, normalization: WeightNormalization) -> WeightConfig {
        WeightConfig {
            gamma_c: gamma,
            gamma_d: gamma,
            normalization,
            clamp: true,
        }
    }

    #[test]
    fn class_weight_two_classes() {
        let counts = CountMatrix::from_rows(&[vec![9, 1]]).unwrap();
        // direct evaluation: t = [9^0.2, 1], raw = Σt / t
        let t0 = 9f64.powf(0.2);
        let raw = [(t0 + 1.0) / t0, t0 + 1.0];
        let c = cfg(0.2, WeightNormalization::Raw);
        for k in 0..2 {
            let w = class_weight(k, &counts, &c).unwrap();
            assert!((w - raw[k]).abs() < 1e-12);
        }
        assert!((raw[0] - 1.6444).abs() < 1e-4 && (raw[1] - 2.5518).abs() < 1e-4);
        let c = cfg(0.2, WeightNormalization::MeanOne);
        let w0 = class_weight(0, &counts, &c).unwrap();
        let w1 = class_weight(1, &counts, &c).unwrap();
        assert!((w0 - 0.8222).abs() < 1e-4 && (w1 - 1.2759).abs() < 1e-4);
    }

    #[test]
    fn balanced_and_flat_weights() {
        let balanced = CountMatrix::from_rows(&[vec![5, 5, 5], vec![7, 7, 7]]).unwrap();
        for k in 0..3 {
            let w = class_weight(k, &balanced, &cfg(0.7, WeightNormalization::MeanOne)).unwrap();
            assert!((w - 1.0).abs() < 1e-12);
        }
        let skewed = CountMatrix::from_rows(&[vec![50, 3, 1], vec![9, 2, 4]]).unwrap();
        let ws: Vec<f64> = (0..3)
            .map(|k| class_weight(k, &skewed, &cfg(0.0, WeightNormalization::MeanOne)).unwrap())
            .collect();
        assert!(ws.iter().all(|&w| (w - ws[0]).abs() < 1e-12));
    }

    #[test]
    fn domain_weights() {
        let single = CountMatrix::from_rows(&[vec![3, 4, 5]]).unwrap();
        let w = domain_weight(0, &single, &cfg(0.2, WeightNormalization::MeanOne)).unwrap();
        assert!((w - 1.0).abs() < 1e-12);

        let same = CountMatrix::from_rows(&[vec![3, 4], vec![4, 3]]).unwrap();
        let c = cfg(0.2, WeightNormalization::MeanOne);
        assert!((domain_weight(0, &same, &c).unwrap() - domain_weight(1, &same, &c).unwrap()).abs() < 1e-12);

        let uneven = CountMatrix::from_rows(&[vec![100; 5], vec![10; 5]]).unwrap();
        assert!(domain_weight(1, &uneven, &c).unwrap() > domain_weight(0, &uneven, &c).unwrap());
    }

    #[test]
    fn zero_count_rejected() {
        let counts = CountMatrix::from_rows(&[vec![3, 0], vec![2, 0], vec![0, 0]]).unwrap();
        let c = WeightConfig::default();
        assert!(matches!(class_weight(1, &counts, &c), Err(PrototypeError::ZeroCount { .. })));
        assert!(matches!(domain_weight(2, &counts, &c), Err(PrototypeError::ZeroCount { .. })));
        let all = DataAwareWeights::compute(&counts, &c);
        assert!(all.class[1].is_none() && all.domain[2].is_none());
        assert!(all.domain[0].is_some());
    }

    #[test]
    fn class_bank_means() {
        let mut bank = ClassPrototypeBank::new(3, &[1, 1, 2], BankMode::Exact);
        let z1 = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        bank.update(&z1, &[2]).unwrap();
        assert_eq!(bank.prototype(2).unwrap().data(), &[1.0, 2.0]);
        let z2 = Tensor::new(vec![1, 1, 1, 2], vec![3.0, -2.0]).unwrap();
        bank.update(&z2, &[2]).unwrap();
        assert_eq!(bank.prototype(2).unwrap().data(), &[2.0, 0.0]);
        assert!(bank.prototype(0).is_none());
        assert!(bank.update(&Tensor::ones(&[1, 1, 1, 3]), &[0]).is_err());
        assert!(bank.update(&z1, &[3]).is_err());
    }

    #[test]
    fn ema_bank() {
        let mut bank = RunningBank::new(1, &[1], BankMode::Ema { momentum: 0.9 });
        bank.update(&[(0, &[2.0][..]), (0, &[4.0][..])], "class").unwrap();
        assert_eq!(bank.get(0).unwrap().data(), &[3.0]);
        bank.update(&[(0, &[13.0][..])], "class").unwrap();
        assert!((bank.get(0).unwrap().data()[0] - 4.0).abs() < 1e-12);
        assert_eq!(bank.count(0), 3);
    }

    #[test]
    fn domain_bank_single_and_pair() {
        let mut bank = DomainPrototypeBank::new(2, 2, BankMode::Exact);
        let mu = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let sigma = Tensor::new(vec![2, 2], vec![0.5, 1.0, 1.5, 2.0]).unwrap();
        bank.update(&mu.index_select(&[0]).unwrap(), &sigma.index_select(&[0]).unwrap(), &[1])
            .unwrap();
        assert_eq!(bank.mean(1).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(bank.std(1).unwrap().data(), &[0.5, 1.0]);
        bank.update(&mu.index_select(&[1]).unwrap(), &sigma.index_select(&[1]).unwrap(), &[1])
            .unwrap();
        assert_eq!(bank.mean(1).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(bank.std(1).unwrap().data(), &[1.0, 1.5]);
    }

    #[test]
    fn enhance_endpoints() {
        let mut bank = ClassPrototypeBank::new(1, &[1, 1, 1], BankMode::Exact);
        bank.update(&Tensor::zeros(&[1, 1, 1, 1]), &[0]).unwrap();
        let z = SemanticMap(Tensor::full(&[1, 1, 1], 2.0));
        let half = enhance_semantic(&z, 0, &bank, 0.75, 1.0, true).unwrap();
        assert_eq!(half.tensor().data(), &[1.5]);
        assert_eq!(enhance_semantic(&z, 0, &bank, 1.0, 1.0, true).unwrap(), z);
        assert_eq!(enhance_semantic(&z, 0, &bank, 0.0, 1.0, true).unwrap().tensor().data(), &[0.0]);
        // clamp caps λ·w at 1
        assert_eq!(enhance_semantic(&z, 0, &bank, 0.9, 2.0, true).unwrap(), z);
        let empty = ClassPrototypeBank::new(2, &[1, 1, 1], BankMode::Exact);
        assert!(matches!(
            enhance_semantic(&z, 1, &empty, 0.5, 1.0, true),
            Err(PrototypeError::Uninitialized { .. })
        ));
    }

    #[test]
    fn enhance_stats_examples() {
        let mut bank = DomainPrototypeBank::new(1, 1, BankMode::Exact);
        bank.update(&Tensor::full(&[1, 1], 2.0), &Tensor::full(&[1, 1], 0.5), &[0]).unwrap();
        let mu = Tensor::full(&[1], 4.0);
        let sigma = Tensor::full(&[1], 1.5);
        let (m, s) = enhance_domain_stats(&mu, &sigma, 0, &bank, 0.5, 1.0, true).unwrap();
        assert_eq!(m.data(), &[3.0]);
        assert_eq!(s.data(), &[1.0]);
        let (m, s) = enhance_domain_stats(&mu, &sigma, 0, &bank, 1.0, 1.0, true).unwrap();
        assert_eq!((m.data(), s.data()), (mu.data(), sigma.data()));
        let (m, s) = enhance_domain_stats(&mu, &sigma, 0, &bank, 0.0, 1.0, true).unwrap();
        assert_eq!((m.data(), s.data()), (&[2.0][..], &[0.5][..]));
        let empty = DomainPrototypeBank::new(1, 1, BankMode::Exact);
        assert!(enhance_domain_stats(&mu, &sigma, 0, &empty, 0.5, 1.0, true).is_err());
    }

    #[test]
    fn synthesize_examples() {
        let zero = SemanticMap(Tensor::zeros(&[1, 2, 2, 2]));
        let mu = Tensor::new(vec![1, 2], vec![1.5, -1.0]).unwrap();
        let sigma = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let (out, label) = synthesize(&zero, 4, &mu, &sigma).unwrap();
        assert_eq!(label, 4);
        assert_eq!(out.data(), &[1.5, 1.5, 1.5, 1.5, -1.0, -1.0, -1.0, -1.0]);

        let z = SemanticMap(Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64 - 3.0));
        let (out, _) = synthesize(&z, 0, &Tensor::zeros(&[1, 2]), &Tensor::ones(&[1, 2])).unwrap();
        assert_eq!(&out, z.tensor());
    }

    #[test]
    fn sampler_rejects_bad_alpha() {
        assert!(InterpolationSampler::new(0.0, 0.5, SeededRng::new(1)).is_err());
        assert!(InterpolationSampler::new(0.5, -1.0, SeededRng::new(1)).is_err());
    }

    #[test]
    fn bank_snapshot_round_trip() {
        let mut bank = RunningBank::new(3, &[2], BankMode::Exact);
        bank.update(&[(0, &[1.0, 2.0][..]), (2, &[3.0, 5.0][..]), (0, &[3.0, 4.0][..])], "class")
            .unwrap();
        let named = bank.to_named("b");
        let mut restored = RunningBank::new(3, &[2], BankMode::Exact);
        restored.load_named("b", &named).unwrap();
        assert_eq!(restored, bank);
    }
}
