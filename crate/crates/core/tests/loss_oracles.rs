use deco_core::loss::{cross_entropy, l2_normalize_rows, semantic_alignment, total_loss, LossConfig};
use deco_core::{Graph, SeededRng, Tensor};

fn unit_rows(m: usize, d: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn brute_alignment(aug: &[Vec<f64>], orig: &[Vec<f64>], tau: f64) -> f64 {
    let m = aug.len();
    let pool: Vec<&Vec<f64>> = orig.iter().chain(aug.iter()).collect();
    let mut total = 0.0;
    for i in 0..m {
        let pos = (dot(&aug[i], &orig[i]) / tau).exp();
        let mut den = 0.0;
        for (k, v) in pool.iter().enumerate() {
            if k == m + i {
                continue;
            }
            den += (dot(&aug[i], v) / tau).exp();
        }
        total += -(pos / den).ln();
    }
    total / m as f64
}

fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
}

fn alignment(aug: &[Vec<f64>], orig: &[Vec<f64>], tau: f64) -> f64 {
    let g = Graph::new();
    semantic_alignment(g.constant(to_tensor(aug)), g.constant(to_tensor(orig)), tau)
        .unwrap()
        .value()
        .item()
        .unwrap()
}

#[test]
fn matches_double_loop_for_small_batches() {
    for seed in 0..20 {
        let mut rng = SeededRng::new(seed);
        for m in 1..=4 {
            let aug = unit_rows(m, 6, &mut rng);
            let orig = unit_rows(m, 6, &mut rng);
            for tau in [0.1, 0.5, 1.0] {
                let got = alignment(&aug, &orig, tau);
                let want = brute_alignment(&aug, &orig, tau);
                assert!((got - want).abs() <= 1e-12, "M={m} tau={tau}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn single_pair_is_exactly_zero() {
    let mut rng = SeededRng::new(3);
    for _ in 0..10 {
        let a = unit_rows(1, 5, &mut rng);
        let o = unit_rows(1, 5, &mut rng);
        assert_eq!(alignment(&a, &o, 0.1), 0.0);
    }
}

#[test]
fn permuting_negatives_is_invariant() {
    let mut rng = SeededRng::new(4);
    let aug = unit_rows(4, 5, &mut rng);
    let orig = unit_rows(4, 5, &mut rng);
    let base = alignment(&aug, &orig, 0.2);
    // a joint permutation of (aug, orig) pairs permutes both anchors and negatives
    let perm = [2usize, 0, 3, 1];
    let pa: Vec<_> = perm.iter().map(|&i| aug[i].clone()).collect();
    let po: Vec<_> = perm.iter().map(|&i| orig[i].clone()).collect();
    assert!((alignment(&pa, &po, 0.2) - base).abs() < 1e-12);
}

#[test]
fn decreases_when_positive_similarity_rises() {
    // anchor e0; negatives fixed at e1/e2; positive rotates towards e0
    let neg_orig = vec![0.0, 1.0, 0.0];
    let neg_aug = vec![0.0, 0.0, 1.0];
    let mut last = f64::INFINITY;
    for step in 0..=10 {
        let theta = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 10.0);
        let pos = vec![theta.cos(), 0.0, theta.sin()];
        let got = alignment(&[vec![1.0, 0.0, 0.0], neg_aug.clone()], &[pos, neg_orig.clone()], 0.5);
        assert!(got < last);
        last = got;
    }
}

#[test]
fn documented_values() {
    let g = Graph::new();
    let ce = cross_entropy(g.constant(Tensor::zeros(&[4, 5])), &[0, 1, 2, 3]).unwrap();
    assert!((ce.value().item().unwrap() - 5f64.ln()).abs() <= 1e-9);

    // CE = ln 5 from uniform logits, alignment ln(1 + 2/e) from one anchor
    // whose positive has similarity 1 and two orthogonal negatives
    let logits = g.constant(Tensor::zeros(&[1, 5]));
    let cfg = LossConfig {
        tau: 1.0,
        warm_start_epochs: 0,
        ramp_epochs: 0,
        alpha_max: 1.0,
        ..Default::default()
    };
    let aug = g.constant(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap());
    let orig = g.constant(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap());
    let single = total_loss(logits, &[0], aug, orig, 0, &cfg).unwrap();
    assert!((single.total.value().item().unwrap() - 5f64.ln()).abs() < 1e-12);

    let aug2 = g.constant(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let orig2 = g.constant(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
    let align = semantic_alignment(aug2.index_select(&[0, 1]).unwrap(), orig2, 1.0).unwrap();
    let anchor0 = (1.0 + 2.0 / std::f64::consts::E).ln();
    let want = 0.5 * (anchor0 + 3f64.ln());
    assert!((align.value().item().unwrap() - want).abs() < 1e-12);
    assert!((5f64.ln() + anchor0 - 2.16088).abs() < 1e-5);
}

#[test]
fn unnormalized_inputs_are_rejected_only_when_zero() {
    let g = Graph::new();
    let ok = l2_normalize_rows(g.constant(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap())).unwrap();
    assert_eq!(ok.value().data(), &[0.6, 0.8]);
    assert!(l2_normalize_rows(g.constant(Tensor::zeros(&[1, 2]))).is_err());
    assert!(semantic_alignment(g.constant(Tensor::zeros(&[1, 2])), g.constant(Tensor::zeros(&[2, 2])), 0.1).is_err());
}
