use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::keypool::{KeyBatch, KeyEntry};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `−log(exp(num/τ) / Σ exp(denᵢ/τ))` summed naively, no max shift.
fn naive_term(num: f64, dens: &[f64], tau: f64) -> f64 {
    let z: f64 = dens.iter().map(|d| (d / tau).exp()).sum();
    -((num / tau).exp() / z).ln()
}

fn batch(query: Vec<f64>, zq: Vec<f64>, label: usize, rest: &[(Vec<f64>, Vec<f64>, usize)]) -> KeyBatch {
    let q = KeyEntry::new(query, zq, label).unwrap();
    let rest: Vec<KeyEntry> = rest
        .iter()
        .map(|(h, z, l)| KeyEntry::new(h.clone(), z.clone(), *l).unwrap())
        .collect();
    KeyBatch::from_entries(&q, rest.iter()).unwrap()
}

fn tau(t: f64) -> Temperature {
    Temperature::new(t).unwrap()
}

#[test]
fn temperature_must_be_positive() {
    assert!(Temperature::new(0.0).is_err());
    assert!(Temperature::new(-1.0).is_err());
    assert!(Temperature::new(f64::NAN).is_err());
    assert_eq!(Temperature::default().get(), 0.07);
}

#[test]
fn ce_uniform_logits_is_ln_c() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros(&[1, 4]));
    let v = ce(&mut g, l, &[2], Reduction::Sum).unwrap();
    assert!((g.value(v).item() - 4f64.ln()).abs() <= 1e-12);
}

#[test]
fn ce_confident_limit_goes_to_zero() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::from_rows(&[[0.0, 800.0, 0.0]]).unwrap());
    let v = ce(&mut g, l, &[1], Reduction::Sum).unwrap();
    assert!(g.value(v).item().abs() < 1e-300);
}

#[test]
fn ce_matches_naive_softmax_and_mean_divides() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let labels = [2, 0];
    let expect: f64 = rows
        .iter()
        .zip(labels)
        .map(|(r, y)| naive_term(r[y], r, 1.0))
        .sum();
    let mut g = Graph::new();
    let l = g.constant(Tensor::from_rows(&rows).unwrap());
    let s = ce(&mut g, l, &labels, Reduction::Sum).unwrap();
    let m = ce(&mut g, l, &labels, Reduction::Mean).unwrap();
    assert!((g.value(s).item() - expect).abs() <= 1e-12);
    assert!((g.value(m).item() - expect / 2.0).abs() <= 1e-12);
    assert!(matches!(ce(&mut g, l, &[3, 0], Reduction::Sum), Err(Error::Label { .. })));
}

#[test]
fn info_nce_identical_keys_is_ln_k_plus_one() {
    let k = vec![0.6, 0.8];
    let keys = Tensor::from_rows(&[k.clone(), k.clone(), k.clone(), k.clone()]).unwrap();
    let mut g = Graph::new();
    let q = g.constant(Tensor::from_rows(&[[0.0, 1.0]]).unwrap());
    let v = info_nce(&mut g, q, &keys, 2, tau(0.07)).unwrap();
    assert!((g.value(v).item() - 4f64.ln()).abs() <= 1e-12);
    assert!(info_nce(&mut g, q, &keys, 4, tau(0.07)).is_err());
}

#[test]
fn info_nce_dominant_positive_is_near_zero() {
    // q·k₊ = 1, the others −1: margin 2/τ with τ = 0.1 → e^−20 per negative.
    let keys = Tensor::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]).unwrap();
    let mut g = Graph::new();
    let q = g.constant(Tensor::from_rows(&[[1.0, 0.0]]).unwrap());
    let v = info_nce(&mut g, q, &keys, 0, tau(0.1)).unwrap();
    assert!(g.value(v).item() < 1e-8);
}

#[test]
fn info_nce_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let q = unit(&mut rng, 5);
        let keys: Vec<Vec<f64>> = (0..4).map(|_| unit(&mut rng, 5)).collect();
        let pos = rng.random_range(0..4);
        let dens: Vec<f64> = keys.iter().map(|k| dot(&q, k)).collect();
        let expect = naive_term(dens[pos], &dens, 0.07);
        let mut g = Graph::new();
        let qn = g.constant(Tensor::from_rows(&[q]).unwrap());
        let v = info_nce(&mut g, qn, &Tensor::from_rows(&keys).unwrap(), pos, tau(0.07)).unwrap();
        assert!((g.value(v).item() - expect).abs() <= 1e-12);
    }
}

#[test]
fn cce_with_empty_bank_is_zero() {
    let h = vec![0.6, 0.8];
    let kb = batch(h.clone(), vec![1.0], 0, &[]);
    let mut g = Graph::new();
    let hq = g.constant(Tensor::from_rows(&[h]).unwrap());
    let w = g.constant(Tensor::from_rows(&[[1.0, 2.0], [0.5, -1.0]]).unwrap());
    let v = cce(&mut g, hq, &[0], w, &[kb], tau(0.07), CceVariant::Literal, Reduction::Sum).unwrap();
    assert_eq!(g.value(v).item(), 0.0);
}

#[test]
fn cce_indistinguishable_keys() {
    let h = vec![0.6, 0.8];
    let k = 4;
    let rest: Vec<_> = (0..k).map(|_| (h.clone(), vec![1.0], 1)).collect();
    let kb = batch(h.clone(), vec![1.0], 1, &rest);
    let mut g = Graph::new();
    let hq = g.constant(Tensor::from_rows(&[h]).unwrap());
    let w = g.constant(Tensor::from_rows(&[[1.0, 2.0], [0.5, -1.0]]).unwrap());
    for variant in [CceVariant::Literal, CceVariant::PerKey] {
        let v = cce(&mut g, hq, &[1], w, std::slice::from_ref(&kb), tau(0.07), variant, Reduction::Sum).unwrap();
        let kp1 = (k + 1) as f64;
        assert!((g.value(v).item() - kp1 * kp1.ln()).abs() <= 1e-12);
    }
}

/// b=2, C=3, K=4 random instance against a naive per-query evaluation.
#[test]
fn cce_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 4;
    for _ in 0..10 {
        let w: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels = [rng.random_range(0..3), rng.random_range(0..3)];
        let mut hqs = Vec::new();
        let mut banks = Vec::new();
        let mut expect_lit = 0.0;
        let mut expect_per_key = 0.0;
        for &y in &labels {
            let hq = unit(&mut rng, d);
            let slot0 = unit(&mut rng, d); // momentum key; replaced by hq in the bank
            let rest: Vec<_> = (0..4).map(|_| (unit(&mut rng, d), vec![1.0], rng.random_range(0..3))).collect();
            let mut dens = vec![dot(&w[y], &hq)];
            dens.extend(rest.iter().map(|(h, _, _)| dot(&w[y], h)));
            let s_size = 1 + rest.iter().filter(|r| r.2 == y).count();
            expect_lit += s_size as f64 * naive_term(dens[0], &dens, 0.07);
            expect_per_key += naive_term(dens[0], &dens, 0.07)
                + rest
                    .iter()
                    .zip(&dens[1..])
                    .filter(|(r, _)| r.2 == y)
                    .map(|(_, &num)| naive_term(num, &dens, 0.07))
                    .sum::<f64>();
            banks.push(batch(slot0, vec![1.0], y, &rest));
            hqs.push(hq);
        }
        let mut g = Graph::new();
        let hq = g.constant(Tensor::from_rows(&hqs).unwrap());
        let wn = g.constant(Tensor::from_rows(&w).unwrap());
        let lit = cce(&mut g, hq, &labels, wn, &banks, tau(0.07), CceVariant::Literal, Reduction::Sum).unwrap();
        let pk = cce(&mut g, hq, &labels, wn, &banks, tau(0.07), CceVariant::PerKey, Reduction::Sum).unwrap();
        assert!((g.value(lit).item() - expect_lit).abs() <= 1e-12 * expect_lit.max(1.0));
        assert!((g.value(pk).item() - expect_per_key).abs() <= 1e-12 * expect_per_key.max(1.0));
    }
}

#[test]
fn ccl_single_positive_equals_info_nce() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let zq = unit(&mut rng, 6);
    let rest: Vec<_> = (0..5).map(|i| (vec![1.0], unit(&mut rng, 6), 1 + i % 2)).collect();
    let kb = batch(vec![1.0], unit(&mut rng, 6), 0, &rest);
    let mut g = Graph::new();
    let z = g.constant(Tensor::from_rows(&[zq]).unwrap());
    let a = ccl(&mut g, z, &[0], std::slice::from_ref(&kb), tau(0.07), Reduction::Sum).unwrap();
    let b = info_nce(&mut g, z, &kb.z_keys, 0, tau(0.07)).unwrap();
    assert!((g.value(a).item() - g.value(b).item()).abs() <= 1e-12);
}

#[test]
fn ccl_uniform_case() {
    let z = vec![0.0, 1.0];
    let rest: Vec<_> = (0..3).map(|_| (vec![1.0], vec![1.0, 0.0], 2)).collect();
    let kb = batch(vec![1.0], vec![-1.0, 0.0], 2, &rest);
    let mut g = Graph::new();
    let zq = g.constant(Tensor::from_rows(&[z]).unwrap());
    let v = ccl(&mut g, zq, &[2], &[kb], tau(0.07), Reduction::Sum).unwrap();
    assert!((g.value(v).item() - 4.0 * 4f64.ln()).abs() <= 1e-12);
}

#[test]
fn ccl_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let zq = unit(&mut rng, 4);
        // K = 5 with exactly |S| = 3 (slot 0 plus two same-label keys)
        let labels = [0, 1, 0, 2, 0, 1];
        let zs: Vec<Vec<f64>> = (0..6).map(|_| unit(&mut rng, 4)).collect();
        let rest: Vec<_> = (1..6).map(|j| (vec![1.0], zs[j].clone(), labels[j])).collect();
        let kb = batch(vec![1.0], zs[0].clone(), 0, &rest);
        let dens: Vec<f64> = zs.iter().map(|k| dot(&zq, k)).collect();
        let expect: f64 = [0, 2, 4].iter().map(|&k| naive_term(dens[k], &dens, 0.07)).sum();
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_rows(&[zq]).unwrap());
        let v = ccl(&mut g, z, &[0], &[kb], tau(0.07), Reduction::Sum).unwrap();
        assert!((g.value(v).item() - expect).abs() <= 1e-12 * expect.max(1.0));
    }
}

#[test]
fn slot_zero_label_and_batch_mismatch_are_errors() {
    let kb = batch(vec![1.0], vec![1.0], 1, &[]);
    let mut g = Graph::new();
    let z = g.constant(Tensor::from_rows(&[[1.0]]).unwrap());
    assert!(matches!(
        ccl(&mut g, z, &[0], std::slice::from_ref(&kb), tau(1.0), Reduction::Sum),
        Err(Error::SlotZeroLabel { .. })
    ));
    assert!(matches!(
        ccl(&mut g, z, &[1, 1], &[kb], tau(1.0), Reduction::Sum),
        Err(Error::KeyBatchMismatch { .. })
    ));
}

#[test]
fn contrastive_terms_decrease_with_positive_similarity() {
    // Rotate the query towards its positive; everything else fixed.
    let neg = vec![(vec![1.0], vec![0.0, 1.0], 1), (vec![1.0], vec![-1.0, 0.0], 1)];
    let kb = batch(vec![1.0], vec![1.0, 0.0], 0, &neg);
    let mut last = f64::INFINITY;
    for step in 0..10 {
        let a = 1.5 - step as f64 * 0.15;
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_rows(&[[a.cos(), a.sin()]]).unwrap());
        let v = ccl(&mut g, z, &[0], std::slice::from_ref(&kb), tau(0.07), Reduction::Sum).unwrap();
        let v = g.value(v).item();
        assert!(v < last && v >= 0.0);
        last = v;
    }

    let w = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
    let others = vec![(vec![0.0, 1.0], vec![1.0], 0)];
    let mut last = f64::INFINITY;
    for step in 0..10 {
        let a = 1.5 - step as f64 * 0.15;
        let h = vec![a.cos(), a.sin()];
        let kb = batch(h.clone(), vec![1.0], 0, &others);
        let mut g = Graph::new();
        let hq = g.constant(Tensor::from_rows(&[h]).unwrap());
        let wn = g.constant(w.clone());
        let v = cce(&mut g, hq, &[0], wn, &[kb], tau(0.07), CceVariant::Literal, Reduction::Sum).unwrap();
        let v = g.value(v).item();
        assert!(v < last && v >= 0.0);
        last = v;
    }
}

#[test]
fn total_sums_enabled_terms_only() {
    let mut g = Graph::new();
    let t = g.constant(Tensor::scalar(0.75).unwrap());
    let nodes = LossNodes {
        ce: Some(t),
        cce: Some(t),
        ccl: Some(t),
    };
    let (n, terms) = bituning_total(&mut g, &nodes, &LossWeights::default()).unwrap();
    assert_eq!(g.value(n).item(), 2.25);
    assert_eq!(terms.total, 2.25);

    let ce_only = LossWeights {
        ce: 1.0,
        cce: 0.0,
        ccl: 0.0,
    };
    let (_, terms) = bituning_total(&mut g, &nodes, &ce_only).unwrap();
    assert_eq!(terms.total, 0.75);
    assert_eq!(terms.cce, None);

    let none = LossWeights {
        ce: 0.0,
        cce: 0.0,
        ccl: 0.0,
    };
    assert!(matches!(bituning_total(&mut g, &nodes, &none), Err(Error::NoLossEnabled)));
}
