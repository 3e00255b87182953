//! Image-level cross-entropy plus the contrastive alignment of semantic
//! (instance-normalized) final-layer features.

use std::str::FromStr;

use crate::disentangle::decouple;
use crate::error::{Result, TensorError};
use crate::graph::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaSchedule {
    ConstantAfterWarmStart,
    #[default]
    LinearRamp,
}

impl FromStr for AlphaSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "constant-after-warmstart" => Ok(Self::ConstantAfterWarmStart),
            "linear-ramp" => Ok(Self::LinearRamp),
            other => Err(format!(
                "unknown alpha schedule {other:?} (constant-after-warmstart | linear-ramp)"
            )),
        }
    }
}

impl AlphaSchedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ConstantAfterWarmStart => "constant-after-warmstart",
            Self::LinearRamp => "linear-ramp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha_max: f64,
    pub schedule: AlphaSchedule,
    pub ramp_epochs: usize,
    pub warm_start_epochs: usize,
    /// L2-normalize flattened semantic features before the dot products.
    pub normalize_features: bool,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha_max: 1.0,
            schedule: AlphaSchedule::LinearRamp,
            ramp_epochs: 10,
            warm_start_epochs: 30,
            normalize_features: true,
            eps: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.alpha_max >= 0.0) {
            return Err(TensorError::Invalid {
                op: "loss_config",
                detail: format!("need tau > 0 and alpha-max >= 0, got {} / {}", self.tau, self.alpha_max),
            });
        }
        Ok(())
    }

    /// Alignment weight for a zero-based epoch index.
    pub fn alpha(&self, epoch: usize) -> f64 {
        if epoch < self.warm_start_epochs {
            return 0.0;
        }
        match self.schedule {
            AlphaSchedule::ConstantAfterWarmStart => self.alpha_max,
            AlphaSchedule::LinearRamp => {
                let done = (epoch - self.warm_start_epochs + 1) as f64;
                let frac = if self.ramp_epochs == 0 {
                    1.0
                } else {
                    (done / self.ramp_epochs as f64).min(1.0)
                };
                self.alpha_max * frac
            }
        }
    }
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= shape[1]) {
        return Err(TensorError::IndexOutOfRange {
            index: bad,
            len: shape[1],
        });
    }
    let lse = logits.logsumexp_rows(None)?;
    let picked = logits.gather_cols(labels)?;
    lse.sub(picked)?.mean_all()
}

/// Instance-normalized final features flattened to `N×D`, optionally scaled
/// to unit L2 norm per row.
pub fn semantic_features<'g>(features: Var<'g>, eps: f64, normalize: bool) -> Result<Var<'g>> {
    let z = decouple(features, eps)?.z.flatten_rows()?;
    if !normalize {
        return Ok(z);
    }
    l2_normalize_rows(z)
}

pub fn l2_normalize_rows<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    let sq = x.square()?.sum_keepdim(&[1])?;
    if sq.value().data().contains(&0.0) {
        return Err(TensorError::Domain {
            op: "l2_normalize_rows",
            detail: "zero-norm row".into(),
        });
    }
    let norm = sq.sqrt()?;
    x.div(norm.expand_to(&shape)?)
}

/// Contrastive alignment over a pool of `2M` vectors. Anchor `i` is
/// augmented sample `i`; its positive is original `i`; the denominator runs
/// over every pool member except the anchor itself. Returns the mean over
/// anchors.
pub fn semantic_alignment<'g>(z_aug: Var<'g>, z_orig: Var<'g>, tau: f64) -> Result<Var<'g>> {
    if !(tau > 0.0) {
        return Err(TensorError::Invalid {
            op: "semantic_alignment",
            detail: format!("tau must be positive, got {tau}"),
        });
    }
    let shape = z_aug.shape();
    if shape.len() != 2 || shape != z_orig.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "semantic_alignment",
            lhs: shape,
            rhs: z_orig.shape(),
        });
    }
    let m = shape[0];
    let to_orig = z_aug.matmul(z_orig.transpose()?)?;
    let to_aug = z_aug.matmul(z_aug.transpose()?)?;
    let logits = Var::concat(&[to_orig, to_aug], 1)?.mul_scalar(1.0 / tau)?;
    let mut mask = vec![true; m * 2 * m];
    for i in 0..m {
        mask[i * 2 * m + m + i] = false;
    }
    let lse = logits.logsumexp_rows(Some(mask))?;
    let diag: Vec<usize> = (0..m).collect();
    let positive = logits.gather_cols(&diag)?;
    lse.sub(positive)?.mean_all()
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<'g> {
    pub total: Var<'g>,
    pub ce: Var<'g>,
    pub alignment: Option<Var<'g>>,
    pub alpha: f64,
}

/// `CE(logits_aug, y) + α(epoch)·alignment(z_aug, z_orig)`; the alignment
/// term is skipped entirely while `α = 0`.
pub fn total_loss<'g>(
    logits_aug: Var<'g>,
    labels: &[usize],
    z_aug: Var<'g>,
    z_orig: Var<'g>,
    epoch: usize,
    cfg: &LossConfig,
) -> Result<LossParts<'g>> {
    let ce = cross_entropy(logits_aug, labels)?;
    let alpha = cfg.alpha(epoch);
    if alpha == 0.0 {
        return Ok(LossParts {
            total: ce,
            ce,
            alignment: None,
            alpha,
        });
    }
    if z_aug.shape()[0] != labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "total_loss",
            lhs: z_aug.shape(),
            rhs: vec![labels.len()],
        });
    }
    let align = semantic_alignment(z_aug, z_orig, cfg.tau)?;
    let total = ce.add(align.mul_scalar(alpha)?)?;
    Ok(LossParts {
        total,
        ce,
        alignment: Some(align),
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn ce_examples() {
        let g = Graph::new();
        let uniform = g.constant(Tensor::zeros(&[3, 5]));
        let l = cross_entropy(uniform, &[0, 2, 4]).unwrap().value().item().unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);

        let two = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let l = cross_entropy(two, &[1]).unwrap().value().item().unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.31326).abs() < 1e-5);

        let mut last = f64::INFINITY;
        for mag in [1.0, 5.0, 20.0, 100.0] {
            let t = g.constant(Tensor::new(vec![1, 3], vec![0.0, mag, 0.0]).unwrap());
            let l = cross_entropy(t, &[1]).unwrap().value().item().unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-30);
        assert!(cross_entropy(g.constant(Tensor::zeros(&[1, 2])), &[2]).is_err());
    }

    #[test]
    fn alignment_single_pair_is_zero() {
        let g = Graph::new();
        let a = g.constant(Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap());
        let o = g.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        assert_eq!(semantic_alignment(a, o, 0.1).unwrap().value().item().unwrap(), 0.0);
    }

    #[test]
    fn alignment_two_orthogonal_negatives() {
        // anchor a0 = e0, positive o0 = e0, negatives o1 = e1 and a1 = e2
        let g = Graph::new();
        let aug = g.constant(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let orig = g.constant(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let l = semantic_alignment(aug, orig, 1.0).unwrap().value().item().unwrap();
        // anchor 0: ln(1 + 2/e); anchor 1 sees a1·o1 = 0 as positive, a1·o0 = 0, a1·a0 = 0
        let anchor0 = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((anchor0 - 0.55144).abs() < 1e-5);
        let anchor1 = 3f64.ln();
        assert!((l - 0.5 * (anchor0 + anchor1)).abs() < 1e-12);
    }

    #[test]
    fn alpha_schedule() {
        let cfg = LossConfig {
            warm_start_epochs: 3,
            ramp_epochs: 4,
            alpha_max: 2.0,
            ..Default::default()
        };
        assert_eq!(cfg.alpha(0), 0.0);
        assert_eq!(cfg.alpha(2), 0.0);
        assert_eq!(cfg.alpha(3), 0.5);
        assert_eq!(cfg.alpha(6), 2.0);
        assert_eq!(cfg.alpha(50), 2.0);
        let c = LossConfig {
            schedule: AlphaSchedule::ConstantAfterWarmStart,
            ..cfg
        };
        assert_eq!(c.alpha(3), 2.0);
    }

    #[test]
    fn total_loss_components() {
        let g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 5]));
        let z = g.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let warm = LossConfig {
            warm_start_epochs: 2,
            ..Default::default()
        };
        let parts = total_loss(logits, &[0], z, z, 0, &warm).unwrap();
        assert!(parts.alignment.is_none());
        assert_eq!(parts.total.value().item().unwrap(), parts.ce.value().item().unwrap());
        let off = LossConfig {
            alpha_max: 0.0,
            warm_start_epochs: 0,
            ..Default::default()
        };
        let parts = total_loss(logits, &[0], z, z, 7, &off).unwrap();
        assert!(parts.alignment.is_none());
    }

    #[test]
    fn zero_norm_rejected() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        assert!(l2_normalize_rows(x).is_err());
    }
}
