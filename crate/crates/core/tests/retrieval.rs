//! Retrieval and fusion against brute-force references.

use drae_core::numerics::{Mat, Rng};
use drae_core::prag::{fuse, knowledge_stability, retrieve, Corpus, Document, FusionParams};
use proptest::prelude::*;

/// Best subset by enumerating all 2^n selections; ties keep the first mask
/// found, which is fine because optimal subsets are unique almost surely.
fn exhaustive(q: &[f64], docs: &[Document], lambda: f64) -> (Vec<String>, f64) {
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let sims: Vec<f64> = docs.iter().map(|d| cos(q, &d.embedding)).collect();
    let mut best = (0u32, 0.0f64);
    for m in 1u32..(1 << docs.len()) {
        let mut val = 0.0;
        for (i, s) in sims.iter().enumerate() {
            if m & (1 << i) != 0 {
                val += s - lambda;
            }
        }
        if val > best.1 {
            best = (m, val);
        }
    }
    let mut ids: Vec<String> = (0..docs.len()).filter(|i| best.0 & (1 << i) != 0).map(|i| docs[i].id.clone()).collect();
    ids.sort();
    (ids, best.1)
}

fn random_docs(n: usize, dim: usize, rng: &mut Rng) -> Vec<Document> {
    (0..n).map(|i| Document { id: format!("doc{i:02}"), embedding: rng.normal_vec(dim, 1.0), payload: None }).collect()
}

#[test]
fn retrieve_matches_exhaustive_search() {
    let mut rng = Rng::new(2024);
    for trial in 0..1000 {
        let n = 1 + rng.below(12);
        let dim = 2 + rng.below(6);
        let docs = random_docs(n, dim, &mut rng);
        let q = rng.normal_vec(dim, 1.0);
        let lambda = rng.uniform() * 0.6;
        let got = retrieve(&Corpus::new(docs.clone()).unwrap(), &q, lambda).unwrap();
        let (want, value) = exhaustive(&q, &docs, lambda);
        let mut ids = got.selected.clone();
        ids.sort();
        assert_eq!(ids, want, "trial {trial}");
        assert!((got.objective - value).abs() < 1e-12, "trial {trial}");
    }
}

#[test]
fn objective_recomposes_from_parts() {
    let mut rng = Rng::new(5);
    let docs = random_docs(10, 4, &mut rng);
    let r = retrieve(&Corpus::new(docs).unwrap(), &rng.normal_vec(4, 1.0), 0.1).unwrap();
    let recomputed = r.similarities.iter().sum::<f64>() - 0.1 * r.selected.len() as f64;
    assert!((r.objective - recomputed).abs() < 1e-12);
}

proptest! {
    #[test]
    fn retrieval_ignores_corpus_order(seed in any::<u64>(), lambda in 0.0f64..0.8) {
        let mut rng = Rng::new(seed);
        let mut docs = random_docs(9, 5, &mut rng);
        let q = rng.normal_vec(5, 1.0);
        let a = retrieve(&Corpus::new(docs.clone()).unwrap(), &q, lambda).unwrap();
        rng.shuffle(&mut docs);
        let b = retrieve(&Corpus::new(docs).unwrap(), &q, lambda).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fuse_is_linear_in_input(seed in any::<u64>(), s in -4.0f64..4.0) {
        let mut rng = Rng::new(seed);
        let mut p = FusionParams::init(6, 3, 2, &mut rng).unwrap();
        p.bl = Mat::random(6, 2, 1.0, &mut rng);
        let d = rng.normal_vec(3, 1.0);
        let (x1, x2) = (rng.normal_vec(6, 1.0), rng.normal_vec(6, 1.0));
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| s * a + b).collect();
        let lhs = fuse(&p, &mix, &d).unwrap();
        let (h1, h2) = (fuse(&p, &x1, &d).unwrap(), fuse(&p, &x2, &d).unwrap());
        for i in 0..6 {
            prop_assert!((lhs[i] - (s * h1[i] + h2[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn stability_is_symmetric(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (h1, h2) = (rng.normal_vec(4, 1.0), rng.normal_vec(4, 1.0));
        let ids = |rng: &mut Rng| -> Vec<String> { (0..5).filter(|_| rng.uniform() < 0.5).map(|i| format!("d{i}")).collect() };
        let (s1, s2) = (ids(&mut rng), ids(&mut rng));
        let ab = knowledge_stability(&h1, &h2, &s1, &s2).unwrap();
        let ba = knowledge_stability(&h2, &h1, &s2, &s1).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0..=2.0).contains(&ab));
    }
}
