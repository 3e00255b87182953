//! Splitting feature maps into instance-normalized content and per-channel
//! spatial statistics, and recombining content with another instance's
//! statistics.
//!
//! The graph functions operate on NCHW [`Var`]s and keep `mu`/`sigma` as
//! `N×C×1×1` so they broadcast over space. The tensor functions are thin
//! wrappers that evaluate the same graph on constants and report statistics
//! as `N×C`.

use std::str::FromStr;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-sample, per-channel spatial mean and standard deviation (`N×C`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub eps: f64,
}

/// Instance-normalized feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap(pub Tensor);

impl SemanticMap {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Which statistics the recombined map takes from the donor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// `σ(r_j)·z(r_i) + μ(r_j)`.
    #[default]
    SwapBoth,
    /// `σ(r_i)·z(r_i) + μ(r_j)`: only the mean moves.
    DonorMeanOnly,
}

impl FromStr for Convention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "swap-both" => Ok(Self::SwapBoth),
            "eq3-literal" => Ok(Self::DonorMeanOnly),
            other => Err(format!("unknown convention {other:?} (swap-both | eq3-literal)")),
        }
    }
}

impl Convention {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SwapBoth => "swap-both",
            Self::DonorMeanOnly => "eq3-literal",
        }
    }
}

/// Graph-side decomposition of a feature map.
#[derive(Debug, Clone, Copy)]
pub struct Decoupled<'g> {
    pub z: Var<'g>,
    pub mu: Var<'g>,
    pub sigma: Var<'g>,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(TensorError::Invalid {
            op: "spatial_stats",
            detail: format!("eps must be finite and non-negative, got {eps}"),
        });
    }
    Ok(())
}

fn check_nchw(shape: &[usize], op: &'static str) -> Result<()> {
    if shape.len() != 4 {
        return Err(TensorError::RankMismatch {
            op,
            expected: 4,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

/// `mu = mean_hw(r)`, `sigma = sqrt(var_hw(r) + eps)` with population variance.
pub fn spatial_stats_var<'g>(r: Var<'g>, eps: f64) -> Result<(Var<'g>, Var<'g>)> {
    check_eps(eps)?;
    let shape = r.shape();
    check_nchw(&shape, "spatial_stats")?;
    let mu = r.mean_keepdim(&[2, 3])?;
    let centered = r.sub(mu.expand_to(&shape)?)?;
    let var = centered.square()?.mean_keepdim(&[2, 3])?;
    let sigma = var.add_scalar(eps)?.sqrt()?;
    Ok((mu, sigma))
}

/// `(r − mu) / sigma` with statistics broadcast over space.
pub fn normalize_var<'g>(r: Var<'g>, mu: Var<'g>, sigma: Var<'g>) -> Result<Var<'g>> {
    let shape = r.shape();
    r.sub(mu.expand_to(&shape)?)?.div(sigma.expand_to(&shape)?)
}

pub fn decouple<'g>(r: Var<'g>, eps: f64) -> Result<Decoupled<'g>> {
    let (mu, sigma) = spatial_stats_var(r, eps)?;
    let z = normalize_var(r, mu, sigma)?;
    Ok(Decoupled { z, mu, sigma })
}

/// `sigma · z + mu`; `mu`/`sigma` may be `N×C` or `N×C×1×1`.
pub fn reassemble_var<'g>(z: Var<'g>, mu: Var<'g>, sigma: Var<'g>) -> Result<Var<'g>> {
    let shape = z.shape();
    check_nchw(&shape, "reassemble")?;
    let stat_shape = [shape[0], shape[1], 1, 1];
    let lift = |v: Var<'g>| -> Result<Var<'g>> {
        let s = v.shape();
        if s.iter().product::<usize>() != shape[0] * shape[1] || (s.len() != 2 && s.len() != 4) {
            return Err(TensorError::ShapeMismatch {
                op: "reassemble",
                lhs: shape.clone(),
                rhs: s,
            });
        }
        if s[..2] != shape[..2] {
            return Err(TensorError::ShapeMismatch {
                op: "reassemble",
                lhs: shape.clone(),
                rhs: s,
            });
        }
        v.reshape(&stat_shape)?.expand_to(&shape)
    };
    z.mul(lift(sigma)?)?.add(lift(mu)?)
}

/// Content of `r_i` carried on statistics of `r_j`.
pub fn recombine_var<'g>(
    r_i: Var<'g>,
    r_j: Var<'g>,
    convention: Convention,
    eps: f64,
) -> Result<Var<'g>> {
    if r_i.shape() != r_j.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "recombine",
            lhs: r_i.shape(),
            rhs: r_j.shape(),
        });
    }
    let own = decouple(r_i, eps)?;
    let (mu_j, sigma_j) = spatial_stats_var(r_j, eps)?;
    let sigma = match convention {
        Convention::SwapBoth => sigma_j,
        Convention::DonorMeanOnly => own.sigma,
    };
    reassemble_var(own.z, mu_j, sigma)
}

fn to_nc(v: Var<'_>) -> Result<Tensor> {
    let s = v.shape();
    v.value().reshape(&[s[0], s[1]])
}

pub fn spatial_stats(r: &Tensor, eps: f64) -> Result<FeatureStats> {
    let g = Graph::new();
    let (mu, sigma) = spatial_stats_var(g.constant(r.clone()), eps)?;
    Ok(FeatureStats {
        mu: to_nc(mu)?,
        sigma: to_nc(sigma)?,
        eps,
    })
}

pub fn instance_normalize(r: &Tensor, stats: &FeatureStats) -> Result<SemanticMap> {
    check_nchw(r.shape(), "instance_normalize")?;
    let g = Graph::new();
    let nc = [r.shape()[0], r.shape()[1], 1, 1];
    let mu = g.constant(stats.mu.reshape(&nc)?);
    let sigma = g.constant(stats.sigma.reshape(&nc)?);
    let z = normalize_var(g.constant(r.clone()), mu, sigma)?;
    Ok(SemanticMap(z.value().as_ref().clone()))
}

pub fn reassemble(z: &SemanticMap, mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    let out = reassemble_var(
        g.constant(z.0.clone()),
        g.constant(mu.clone()),
        g.constant(sigma.clone()),
    )?;
    Ok(out.value().as_ref().clone())
}

pub fn recombine(r_i: &Tensor, r_j: &Tensor, convention: Convention, eps: f64) -> Result<Tensor> {
    let g = Graph::new();
    let out = recombine_var(g.constant(r_i.clone()), g.constant(r_j.clone()), convention, eps)?;
    Ok(out.value().as_ref().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f64]) -> Tensor {
        Tensor::new(vec![1, 1, 2, 2], values.to_vec()).unwrap()
    }

    #[test]
    fn stats_of_small_map() {
        let s = spatial_stats(&map(&[1.0, 3.0, 5.0, 7.0]), 0.0).unwrap();
        assert_eq!(s.mu.data(), &[4.0]);
        assert!((s.sigma.data()[0] - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.mu.shape(), &[1, 1]);
    }

    #[test]
    fn constant_map_stats_use_eps() {
        let s = spatial_stats(&Tensor::full(&[1, 2, 3, 3], 2.5), 1e-5).unwrap();
        assert!(s.mu.data().iter().all(|&m| (m - 2.5).abs() < 1e-15));
        assert!(s.sigma.data().iter().all(|&v| (v - 1e-5f64.sqrt()).abs() < 1e-15));
        let z = instance_normalize(&Tensor::full(&[1, 2, 3, 3], 2.5), &s).unwrap();
        assert!(z.0.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn std_scales_with_factor() {
        let r = map(&[-3.0, -1.0, 1.0, 3.0]);
        let s1 = spatial_stats(&r, 0.0).unwrap();
        let s2 = spatial_stats(&r.mul_scalar(2.5), 0.0).unwrap();
        assert!((s2.sigma.data()[0] - 2.5 * s1.sigma.data()[0]).abs() < 1e-12);
    }

    #[test]
    fn normalize_small_map() {
        let r = map(&[1.0, 3.0, 5.0, 7.0]);
        let z = instance_normalize(&r, &spatial_stats(&r, 0.0).unwrap()).unwrap();
        let s5 = 5f64.sqrt();
        let expect = map(&[-3.0 / s5, -1.0 / s5, 1.0 / s5, 3.0 / s5]);
        assert!(z.0.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn reassemble_examples() {
        let s5 = 5f64.sqrt();
        let z = SemanticMap(map(&[-3.0 / s5, -1.0 / s5, 1.0 / s5, 3.0 / s5]));
        let mu = Tensor::new(vec![1, 1], vec![10.0]).unwrap();
        let sigma = Tensor::new(vec![1, 1], vec![s5]).unwrap();
        let out = reassemble(&z, &mu, &sigma).unwrap();
        assert!(out.max_abs_diff(&map(&[7.0, 9.0, 11.0, 13.0])).unwrap() < 1e-12);

        let zero = SemanticMap(Tensor::zeros(&[1, 1, 2, 2]));
        let out = reassemble(
            &zero,
            &Tensor::new(vec![1, 1], vec![3.0]).unwrap(),
            &Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.data(), &[3.0; 4]);

        let bad = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(reassemble(&zero, &bad, &bad).is_err());
    }

    #[test]
    fn recombine_examples() {
        let r_i = map(&[1.0, 3.0, 5.0, 7.0]);
        let r_j = map(&[0.0, 0.0, 0.0, 20.0]);
        let out = recombine(&r_i, &r_j, Convention::SwapBoth, 0.0).unwrap();
        // donor: mu = 5, population variance = (3·25 + 225)/4 = 75
        let s5 = 5f64.sqrt();
        let z = [-3.0 / s5, -1.0 / s5, 1.0 / s5, 3.0 / s5];
        let expect = map(&z.map(|v| 5.0 + 75f64.sqrt() * v));
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);

        let literal = recombine(&r_i, &r_j, Convention::DonorMeanOnly, 0.0).unwrap();
        let expect = map(&z.map(|v| 5.0 + s5 * v));
        assert!(literal.max_abs_diff(&expect).unwrap() < 1e-12);

        let flat = Tensor::full(&[1, 1, 2, 2], 5.0);
        let donor = map(&[1.0, 2.0, 2.0, 3.0]);
        let out = recombine(&flat, &donor, Convention::SwapBoth, 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 2.0).abs() < 1e-9));

        assert!(recombine(&r_i, &Tensor::ones(&[1, 1, 3, 3]), Convention::SwapBoth, 0.0).is_err());
    }

    #[test]
    fn negative_eps_rejected() {
        assert!(spatial_stats(&map(&[1.0, 2.0, 3.0, 4.0]), -1.0).is_err());
        assert!(spatial_stats(&Tensor::ones(&[2, 2]), 0.0).is_err());
    }

    #[test]
    fn convention_strings() {
        for c in [Convention::SwapBoth, Convention::DonorMeanOnly] {
            assert_eq!(c.as_str().parse::<Convention>().unwrap(), c);
        }
        assert!("other".parse::<Convention>().is_err());
    }
}
