use deco_core::prototypes::{
    class_weight, domain_weight, BankMode, ClassPrototypeBank, CountMatrix, DomainPrototypeBank, InterpolationSampler,
    LambdaKind, WeightConfig, WeightNormalization,
};
use deco_core::{SeededRng, Tensor};

fn randn(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

#[test]
fn class_bank_matches_brute_force_mean_throughout_stream() {
    let mut rng = SeededRng::new(11);
    let shape = [2, 3, 3];
    let per = 18;
    let mut bank = ClassPrototypeBank::new(4, &shape, BankMode::Exact);
    let mut seen: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 4];
    let mut total = 0;
    while total < 60 {
        let n = 1 + rng.below(5);
        let z = randn(&[n, 2, 3, 3], &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
        bank.update(&z, &labels).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            seen[y].push(z.data()[i * per..(i + 1) * per].to_vec());
        }
        total += n;
        for c in 0..4 {
            match bank.prototype(c) {
                None => assert!(seen[c].is_empty()),
                Some(p) => {
                    for k in 0..per {
                        let mean = seen[c].iter().map(|v| v[k]).sum::<f64>() / seen[c].len() as f64;
                        assert!((p.data()[k] - mean).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn domain_bank_matches_brute_force_mean_throughout_stream() {
    let mut rng = SeededRng::new(12);
    let mut bank = DomainPrototypeBank::new(3, 4, BankMode::Exact);
    let mut seen: Vec<Vec<(Vec<f64>, Vec<f64>)>> = vec![Vec::new(); 3];
    let mut total = 0;
    while total < 60 {
        let n = 1 + rng.below(4);
        total += n;
        let mu = randn(&[n, 4], &mut rng);
        let sigma = Tensor::from_fn(&[n, 4], |_| rng.uniform(0.1, 3.0));
        let domains: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        bank.update(&mu, &sigma, &domains).unwrap();
        for (i, &d) in domains.iter().enumerate() {
            seen[d].push((mu.data()[i * 4..i * 4 + 4].to_vec(), sigma.data()[i * 4..i * 4 + 4].to_vec()));
        }
        for d in 0..3 {
            if seen[d].is_empty() {
                assert!(bank.mean(d).is_none());
                continue;
            }
            let n = seen[d].len() as f64;
            for k in 0..4 {
                let u = seen[d].iter().map(|v| v.0[k]).sum::<f64>() / n;
                let v = seen[d].iter().map(|v| v.1[k]).sum::<f64>() / n;
                assert!((bank.mean(d).unwrap().data()[k] - u).abs() <= 1e-12);
                assert!((bank.std(d).unwrap().data()[k] - v).abs() <= 1e-12);
                assert!(bank.std(d).unwrap().data()[k] > 0.0);
            }
        }
    }
}

fn direct_class_weight(c: usize, rows: &[Vec<u64>], gamma: f64) -> f64 {
    let mut num = 0.0;
    for row in rows {
        for &n in row {
            num += (n as f64).powf(gamma);
        }
    }
    let den: f64 = rows.iter().map(|row| (row[c] as f64).powf(gamma)).sum();
    num / den
}

#[test]
fn nine_one_counts() {
    let counts = CountMatrix::from_rows(&[vec![9, 1]]).unwrap();
    let raw = WeightConfig {
        normalization: WeightNormalization::Raw,
        ..Default::default()
    };
    let mean_one = WeightConfig::default();
    for c in 0..2 {
        let direct = direct_class_weight(c, &[vec![9, 1]], 0.2);
        assert!((class_weight(c, &counts, &raw).unwrap() - direct).abs() <= 1e-9);
        assert!((class_weight(c, &counts, &mean_one).unwrap() - direct / 2.0).abs() <= 1e-9);
    }
    assert!((class_weight(0, &counts, &raw).unwrap() - 1.6444).abs() < 1e-4);
    assert!((class_weight(1, &counts, &raw).unwrap() - 2.5518).abs() < 1e-4);
    assert!((class_weight(0, &counts, &mean_one).unwrap() - 0.8222).abs() < 1e-4);
    assert!((class_weight(1, &counts, &mean_one).unwrap() - 1.2759).abs() < 1e-4);
}

fn random_counts(rng: &mut SeededRng) -> Vec<Vec<u64>> {
    let s = 1 + rng.below(4);
    let c = 2 + rng.below(4);
    (0..s).map(|_| (0..c).map(|_| 1 + rng.below(60) as u64).collect()).collect()
}

#[test]
fn gamma_zero_flattens_weights() {
    let mut rng = SeededRng::new(21);
    let cfg = WeightConfig {
        gamma_c: 0.0,
        gamma_d: 0.0,
        ..Default::default()
    };
    for _ in 0..100 {
        let rows = random_counts(&mut rng);
        let counts = CountMatrix::from_rows(&rows).unwrap();
        let w0 = class_weight(0, &counts, &cfg).unwrap();
        for c in 1..counts.classes() {
            assert!((class_weight(c, &counts, &cfg).unwrap() - w0).abs() <= 1e-12);
        }
        let d0 = domain_weight(0, &counts, &cfg).unwrap();
        for d in 1..counts.domains() {
            assert!((domain_weight(d, &counts, &cfg).unwrap() - d0).abs() <= 1e-12);
        }
    }
}

#[test]
fn weights_increase_with_rarity() {
    let mut rng = SeededRng::new(22);
    let cfg = WeightConfig::default();
    for _ in 0..100 {
        let rows = random_counts(&mut rng);
        let counts = CountMatrix::from_rows(&rows).unwrap();
        let d = rng.below(rows.len());
        let c = rng.below(rows[0].len());
        if rows[d][c] < 2 {
            continue;
        }
        let mut fewer = rows.clone();
        fewer[d][c] -= 1 + rng.below(rows[d][c] as usize - 1) as u64;
        let reduced = CountMatrix::from_rows(&fewer).unwrap();
        // holding the other groups' mass fixed, the class/domain whose own
        // mass shrank must gain weight relative to its previous value
        let before = class_weight(c, &counts, &cfg).unwrap();
        let after = class_weight(c, &reduced, &cfg).unwrap();
        assert!(after > before, "{rows:?} -> {fewer:?}: {before} vs {after}");
        let before = domain_weight(d, &counts, &cfg).unwrap();
        let after = domain_weight(d, &reduced, &cfg).unwrap();
        if rows.len() > 1 {
            assert!(after > before);
        }
    }
}

#[test]
fn balanced_domain_examples() {
    let cfg = WeightConfig::default();
    let one = CountMatrix::from_rows(&[vec![5, 2, 7]]).unwrap();
    assert!((domain_weight(0, &one, &cfg).unwrap() - 1.0).abs() < 1e-12);
    let two = CountMatrix::from_rows(&[vec![3, 8], vec![8, 3]]).unwrap();
    assert!((domain_weight(0, &two, &cfg).unwrap() - domain_weight(1, &two, &cfg).unwrap()).abs() < 1e-12);
    let skew = CountMatrix::from_rows(&[vec![100, 100], vec![10, 10]]).unwrap();
    assert!(domain_weight(1, &skew, &cfg).unwrap() > domain_weight(0, &skew, &cfg).unwrap());
}

fn moments(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn beta_one_is_uniform() {
    let mut s = InterpolationSampler::new(1.0, 1.0, SeededRng::new(31)).unwrap();
    let draws: Vec<f64> = (0..100_000).map(|_| s.sample(LambdaKind::Class).unwrap()).collect();
    let (mean, var) = moments(&draws);
    assert!((mean - 0.5).abs() < 0.01);
    assert!((var - 1.0 / 12.0).abs() < 0.005);
}

#[test]
fn beta_half_moments_and_support() {
    let mut s = InterpolationSampler::new(0.5, 0.5, SeededRng::new(32)).unwrap();
    let draws: Vec<f64> = (0..1_000_000).map(|_| s.sample(LambdaKind::Domain).unwrap()).collect();
    assert!(draws.iter().all(|&x| (0.0..=1.0).contains(&x)));
    let (mean, var) = moments(&draws);
    assert!((mean - 0.5).abs() < 0.01);
    assert!((var - 1.0 / (8.0 * 0.5 + 4.0)).abs() < 0.005);
}
