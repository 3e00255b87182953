//! Gradient verification suite over every differentiable op and the full
//! training objective, shared by the `gradcheck` command and the
//! acceptance tests.

use deco_core::disentangle::{decouple, reassemble_var, recombine_var, spatial_stats_var, Convention};
use deco_core::gradcheck::grad_check;
use deco_core::loss::{cross_entropy, l2_normalize_rows, semantic_alignment, semantic_features};
use deco_core::model::{classify, forward_from_layer, forward_to_layer, init_parameters, BackboneConfig, ParamVars, Parameters};
use deco_core::prototypes::{
    enhance_semantic_batch, enhance_stats_batch, synthesize_batch, BankMode, ClassPrototypeBank, DomainPrototypeBank,
    PrototypeError,
};
use deco_core::{Graph, Result, SeededRng, Tensor, TensorError, Var};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn worst(&self) -> Option<&CaseResult> {
        self.cases.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn failures(&self, tol: f64) -> Vec<&CaseResult> {
        self.cases.iter().filter(|c| !(c.max_rel_error < tol)).collect()
    }

    /// Worst error per case name, in first-seen order.
    pub fn by_name(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for c in &self.cases {
            match out.iter_mut().find(|(n, _)| *n == c.name) {
                Some((_, e)) => *e = e.max(c.max_rel_error),
                None => out.push((c.name.clone(), c.max_rel_error)),
            }
        }
        out
    }
}

fn pe<T>(r: std::result::Result<T, PrototypeError>) -> Result<T> {
    r.map_err(|e| TensorError::Invalid {
        op: "prototypes",
        detail: e.to_string(),
    })
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(shape, |_| rng.normal())
}

fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    randn(shape, seed).map(|v| if v >= 0.0 { v + 0.2 } else { v - 0.2 })
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform(0.5, 2.0))
}

fn project<'g>(y: Var<'g>, seed: u64) -> Result<Var<'g>> {
    let w = randn(&y.shape(), seed ^ 0x5eed);
    y.mul(y.graph().constant(w))?.sum_all()
}

struct Runner<'a> {
    report: &'a mut SuiteReport,
    seed: u64,
}

impl Runner<'_> {
    fn check<F>(&mut self, name: &str, point: &Tensor, f: F)
    where
        F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
    {
        let max_rel_error = match grad_check(f, point, STEP) {
            Ok(r) => r.max_rel_error,
            Err(_) => f64::INFINITY,
        };
        self.report.cases.push(CaseResult {
            name: name.to_string(),
            seed: self.seed,
            max_rel_error,
        });
    }
}

fn primitive_ops(r: &mut Runner<'_>) {
    let s = r.seed;
    let x = randn(&[3, 4], s);
    let other = randn(&[3, 4], s + 100);
    let denom = away_from_zero(&[3, 4], s + 200);
    r.check("add", &x, |g, x| project(x.add(g.constant(other.clone()))?, s));
    r.check("sub", &x, |g, x| project(g.constant(other.clone()).sub(x)?, s));
    r.check("mul", &x, |_, x| project(x.mul(x)?, s));
    r.check("div numerator", &x, |g, x| project(x.div(g.constant(denom.clone()))?, s));
    r.check("div denominator", &denom, |g, d| project(g.constant(other.clone()).div(d)?, s));
    r.check("scalar ops", &x, |_, x| project(x.add_scalar(1.5)?.mul_scalar(-0.7)?.div_scalar(3.0)?.neg()?, s));
    r.check("square", &x, |_, x| project(x.square()?, s));
    r.check("relu", &away_from_zero(&[3, 4], s + 1), |_, x| project(x.relu()?, s));
    r.check("exp", &x, |_, x| project(x.exp()?, s));
    r.check("log", &positive(&[3, 4], s), |_, x| project(x.log()?, s));
    r.check("sqrt", &positive(&[3, 4], s), |_, x| project(x.sqrt()?, s));

    let t = randn(&[2, 3, 4], s);
    r.check("sum", &t, |_, x| project(x.sum_keepdim(&[1])?.sum(&[0])?, s));
    r.check("mean", &t, |_, x| project(x.mean(&[1, 2])?, s));
    r.check("sum_all", &t, |_, x| x.square()?.sum_all());
    r.check("mean_all", &t, |_, x| x.square()?.mean_all());
    r.check("expand_to", &randn(&[2, 1, 4], s + 2), |_, x| project(x.expand_to(&[2, 3, 4])?, s));
    r.check("reshape", &t, |_, x| project(x.reshape(&[6, 4])?.flatten_rows()?, s));
    r.check("global_avg_pool", &randn(&[2, 3, 3, 2], s), |_, x| project(x.global_avg_pool()?, s));

    let b = randn(&[4, 2], s + 50);
    r.check("matmul", &x, |g, x| project(x.matmul(g.constant(b.clone()))?, s));
    r.check("matmul self", &x, |_, x| project(x.matmul(x.transpose()?)?, s));
    r.check("concat", &x, |g, x| project(Var::concat(&[x, g.constant(other.clone()), x], 1)?, s));
    r.check("index_select", &x, |_, x| project(x.index_select(&[2, 0, 2, 1])?, s));
    let w = randn(&[4, 3], s + 70);
    r.check("linear", &w, |g, w| project(g.constant(x.clone()).linear(w, g.constant(randn(&[3], 8)))?, s));

    let logits = randn(&[3, 5], s).mul_scalar(3.0);
    let mask: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
    r.check("logsumexp", &logits, |_, x| project(x.logsumexp_rows(None)?, s));
    r.check("masked logsumexp", &logits, |_, x| project(x.logsumexp_rows(Some(mask.clone()))?, s));
    r.check("gather_cols", &logits, |_, x| project(x.gather_cols(&[4, 0, 2])?, s));

    let configs = [(1usize, 0usize, 3usize), (1, 1, 3), (2, 1, 3), (2, 0, 2), (3, 1, 4)];
    let (stride, pad, k) = configs[s as usize % configs.len()];
    let input = randn(&[2, 2, 6, 6], s);
    let kernel = randn(&[3, 2, k, k], s + 11);
    r.check("conv2d input", &input, |g, x| project(x.conv2d(g.constant(kernel.clone()), stride, pad)?, s));
    r.check("conv2d kernel", &kernel, |g, k| project(g.constant(input.clone()).conv2d(k, stride, pad)?, s));
    r.check("channel bias", &randn(&[3], s + 12), |g, bias| {
        project(g.constant(input.clone()).conv2d(g.constant(kernel.clone()), stride, pad)?.add_channel_bias(bias)?, s)
    });
}

fn pipeline_ops(r: &mut Runner<'_>) {
    let s = r.seed;
    let feat = randn(&[2, 3, 3, 3], s);
    let donor = randn(&[2, 3, 3, 3], s + 40);
    r.check("spatial stats", &feat, |_, x| {
        let (mu, sigma) = spatial_stats_var(x, 1e-5)?;
        project(mu.add(sigma)?, s)
    });
    r.check("instance normalize", &feat, |_, x| project(decouple(x, 1e-5)?.z, s));
    let mu = randn(&[2, 3], s + 2);
    let sigma = positive(&[2, 3], s + 3);
    r.check("reassemble", &feat, |g, x| {
        project(reassemble_var(x, g.constant(mu.clone()), g.constant(sigma.clone()))?, s)
    });
    r.check("reassemble stats", &sigma, |g, x| {
        project(reassemble_var(g.constant(feat.clone()), x.add_scalar(0.1)?, x)?, s)
    });
    for conv in [Convention::SwapBoth, Convention::DonorMeanOnly] {
        let name = format!("recombine ({})", conv.as_str());
        r.check(&name, &feat, |g, x| project(recombine_var(x, g.constant(donor.clone()), conv, 1e-5)?, s));
        r.check(&format!("{name} donor"), &donor, |g, x| {
            project(recombine_var(g.constant(feat.clone()), x, conv, 1e-5)?, s)
        });
    }

    let mut cb = ClassPrototypeBank::new(3, &[2, 3, 3], BankMode::Exact);
    cb.update(&randn(&[3, 2, 3, 3], s + 500), &[0, 1, 2]).expect("matching shapes");
    let mut db = DomainPrototypeBank::new(2, 2, BankMode::Exact);
    db.update(&randn(&[2, 2], s + 501), &positive(&[2, 2], s + 502), &[0, 1])
        .expect("matching shapes");
    let z = randn(&[2, 2, 3, 3], s);
    let m = randn(&[2, 2, 1, 1], s + 5);
    let v = positive(&[2, 2, 1, 1], s + 6);
    r.check("enhance semantic", &z, |_, x| project(pe(enhance_semantic_batch(x, &[2, 0], &cb, &[0.3, 0.9]))?, s));
    r.check("enhance stats", &v, |g, x| {
        let (a, b) = pe(enhance_stats_batch(g.constant(m.clone()), x, &[1, 0], &db, &[0.4, 0.8]))?;
        project(a.add(b)?, s)
    });
    r.check("synthesize", &z, |g, x| {
        project(pe(synthesize_batch(x, g.constant(m.clone()), g.constant(v.clone())))?, s)
    });

    let rows = randn(&[3, 6], s);
    r.check("l2 normalize", &rows, |_, x| project(l2_normalize_rows(x)?, s));
    r.check("semantic features", &randn(&[3, 2, 2, 3], s), |_, x| project(semantic_features(x, 1e-5, true)?, s));
    r.check("cross entropy", &randn(&[3, 5], s), |_, x| cross_entropy(x, &[1, 3, 3]));
    r.check("alignment", &rows, |_, x| {
        let n = l2_normalize_rows(x)?;
        semantic_alignment(n, n.index_select(&[2, 0, 1])?, 0.1)
    });
}

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        stage_widths: vec![3, 4, 4],
        stage_strides: vec![2, 1, 1],
        stage_kernels: vec![3, 3, 3],
        num_classes: 3,
        ..Default::default()
    }
}

/// CE on the recombined path plus the weighted alignment term for a
/// 2-sample batch with swapped partners.
fn objective<'g>(
    pv: &ParamVars<'g>,
    x: Var<'g>,
    cfg: &BackboneConfig,
    banks: &(ClassPrototypeBank, DomainPrototypeBank),
    coeffs: (&[f64], &[f64]),
) -> Result<Var<'g>> {
    let labels = [2usize, 0];
    let pair = [1usize, 0];
    let r = forward_to_layer(x, pv, cfg)?;
    let parts = decouple(r, 1e-5)?;
    let z_hat = pe(enhance_semantic_batch(parts.z, &labels, &banks.0, coeffs.0))?;
    let (mu_hat, sigma_hat) = pe(enhance_stats_batch(
        parts.mu.index_select(&pair)?,
        parts.sigma.index_select(&pair)?,
        &[1, 0],
        &banks.1,
        coeffs.1,
    ))?;
    let aug = pe(synthesize_batch(z_hat, mu_hat, sigma_hat))?;
    let f_aug = forward_from_layer(aug, pv, cfg)?;
    let f_orig = forward_from_layer(r, pv, cfg)?;
    let ce = cross_entropy(classify(f_aug, pv)?, &labels)?;
    let za = semantic_features(f_aug, 1e-5, true)?;
    let zo = semantic_features(f_orig, 1e-5, true)?;
    ce.add(semantic_alignment(za, zo, 0.1)?.mul_scalar(0.8)?)
}

/// Small random biases keep pre-activations off the ReLU kink.
fn with_random_biases(params: Parameters, seed: u64) -> Parameters {
    Parameters::from_entries(
        params
            .entries()
            .iter()
            .enumerate()
            .map(|(i, (name, t))| {
                let t = if name.ends_with(".bias") {
                    randn(t.shape(), seed * 31 + i as u64).mul_scalar(0.1)
                } else {
                    t.clone()
                };
                (name.clone(), t)
            })
            .collect(),
    )
}

fn full_objective(r: &mut Runner<'_>) {
    let s = r.seed;
    let cfg = tiny_backbone();
    let params = with_random_biases(
        init_parameters(&cfg, &mut SeededRng::new(s)).expect("valid backbone"),
        s,
    );
    let x = positive(&[2, 3, 6, 6], s + 1000);
    let mut cb = ClassPrototypeBank::new(3, &[3, 3, 3], BankMode::Exact);
    cb.update(&randn(&[3, 3, 3, 3], s + 3), &[0, 1, 2]).expect("matching shapes");
    let mut db = DomainPrototypeBank::new(2, 3, BankMode::Exact);
    db.update(&randn(&[2, 3], s + 4), &positive(&[2, 3], s + 5), &[0, 1])
        .expect("matching shapes");
    let banks = (cb, db);
    let coeffs: (&[f64], &[f64]) = (&[0.6, 0.85], &[0.3, 0.7]);
    r.check("objective input", &x, |g, xv| {
        let pv = params.attach_frozen(g);
        objective(&pv, xv, &cfg, &banks, coeffs)
    });
    for (k, (name, t)) in params.entries().iter().enumerate() {
        r.check(&format!("objective {name}"), t, |g, p| {
            let mut pv = params.attach_frozen(g);
            pv.vars[k] = p;
            objective(&pv, g.constant(x.clone()), &cfg, &banks, coeffs)
        });
    }
}

/// Runs every case once per seed in `0..seeds`.
pub fn run(seeds: u64) -> SuiteReport {
    let mut report = SuiteReport::default();
    for seed in 0..seeds {
        let mut r = Runner {
            report: &mut report,
            seed,
        };
        primitive_ops(&mut r);
        pipeline_ops(&mut r);
        full_objective(&mut r);
    }
    report
}
