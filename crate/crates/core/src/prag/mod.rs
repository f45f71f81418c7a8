//! Retrieval-augmented inference: corpus store, query encoding, penalised
//! subset selection, low-rank gated fusion and the knowledge-stability metric.

mod corpus;
mod fusion;

use std::collections::HashSet;

pub use corpus::{Corpus, Document};
pub use fusion::{fuse, FusionGrad, FusionParams};
pub(crate) use fusion::FusionTrace;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DraeError, Result};
use crate::numerics::{cosine_sim, norm, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Sorted by descending similarity, then ascending id.
    pub selected: Vec<String>,
    pub similarities: Vec<f64>,
    /// Mean embedding of the selection; zero when nothing is selected.
    pub aggregated: Vec<f64>,
    pub objective: f64,
}

/// Linear query encoder `q = E·x`.
pub fn encode_query(enc_weights: &Mat, x: &[f64]) -> Result<Vec<f64>> {
    let q = enc_weights.matvec(x)?;
    if q.iter().any(|v| !v.is_finite()) {
        return Err(DraeError::InvalidInput("encoded query is not finite".into()));
    }
    Ok(q)
}

/// Exact maximiser of `Σ sim(q, d) − λ·|D'|`.
///
/// The objective is modular, so the optimum keeps exactly the documents with
/// similarity strictly above `λ`.
pub fn retrieve(corpus: &Corpus, q: &[f64], lambda: f64) -> Result<RetrievalResult> {
    if !(lambda >= 0.0) {
        return Err(DraeError::InvalidParameter(format!("lambda must be non-negative, got {lambda}")));
    }
    if q.len() != corpus.dim() {
        return Err(shape_err("query", corpus.dim(), q.len()));
    }
    if norm(q) == 0.0 {
        return Err(DraeError::DegenerateVector("retrieval query has zero norm"));
    }
    let mut hits: Vec<(f64, &Document)> = Vec::new();
    for doc in corpus.documents() {
        // zero-norm documents cannot be similar to anything
        let s = match cosine_sim(q, &doc.embedding) {
            Ok(s) => s,
            Err(DraeError::DegenerateVector(_)) => continue,
            Err(e) => return Err(e),
        };
        if s > lambda {
            hits.push((s, doc));
        }
    }
    hits.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let mut aggregated = vec![0.0; corpus.dim()];
    for (_, doc) in &hits {
        for (a, e) in aggregated.iter_mut().zip(&doc.embedding) {
            *a += e;
        }
    }
    if !hits.is_empty() {
        let n = hits.len() as f64;
        for a in &mut aggregated {
            *a /= n;
        }
    }
    let similarities: Vec<f64> = hits.iter().map(|(s, _)| *s).collect();
    let objective = similarities.iter().sum::<f64>() - lambda * hits.len() as f64;
    Ok(RetrievalResult {
        selected: hits.iter().map(|(_, d)| d.id.clone()).collect(),
        similarities,
        aggregated,
        objective,
    })
}

/// Jaccard index of two id sets; two empty sets count as identical.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let sa: HashSet<&str> = a.iter().map(String::as_str).collect();
    let sb: HashSet<&str> = b.iter().map(String::as_str).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Hidden-state cosine plus selection Jaccard, in `[-1, 2]`.
pub fn knowledge_stability(h_prev: &[f64], h_cur: &[f64], sel_prev: &[String], sel_cur: &[String]) -> Result<f64> {
    Ok(cosine_sim(h_prev, h_cur)? + jaccard(sel_prev, sel_cur))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, e: &[f64]) -> Document {
        Document { id: id.into(), embedding: e.to_vec(), payload: None }
    }

    /// Documents at angle acos(s) from the first axis in the plane.
    fn corpus_with_sims(sims: &[f64]) -> Corpus {
        Corpus::new(
            sims.iter()
                .enumerate()
                .map(|(i, s)| doc(&format!("d{i}"), &[*s, (1.0 - s * s).sqrt()]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn encode_examples() {
        let x = [0.5, -2.0, 3.0];
        assert_eq!(encode_query(&Mat::identity(3), &x).unwrap(), x.to_vec());
        assert_eq!(encode_query(&Mat::zeros(2, 3), &x).unwrap(), vec![0.0, 0.0]);
        assert!(encode_query(&Mat::identity(2), &x).is_err());
    }

    #[test]
    fn retrieve_penalised_example() {
        let c = corpus_with_sims(&[0.9, 0.6, 0.4, 0.1]);
        let r = retrieve(&c, &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(r.selected, vec!["d0", "d1"]);
        assert!((r.objective - 0.5).abs() < 1e-12);
        // every one of the 16 subsets scores no higher
        let sims = [0.9, 0.6, 0.4, 0.1];
        for mask in 0u32..16 {
            let v: f64 = (0..4).filter(|i| mask >> i & 1 == 1).map(|i| sims[i] - 0.5).sum();
            assert!(v <= r.objective + 1e-12);
        }
    }

    #[test]
    fn retrieve_lambda_extremes() {
        let c = Corpus::new(vec![doc("a", &[1.0, 0.0]), doc("b", &[-1.0, 0.2]), doc("c", &[0.3, 1.0])]).unwrap();
        let r = retrieve(&c, &[1.0, 0.1], 0.0).unwrap();
        assert_eq!(r.selected, vec!["a", "c"]);
        let r = retrieve(&c, &[1.0, 0.1], 1.5).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.aggregated, vec![0.0, 0.0]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn retrieve_errors() {
        let c = corpus_with_sims(&[0.5]);
        assert!(matches!(retrieve(&c, &[0.0, 0.0], 0.1), Err(DraeError::DegenerateVector(_))));
        assert!(retrieve(&c, &[1.0], 0.1).is_err());
        assert!(retrieve(&c, &[1.0, 0.0], -0.1).is_err());
    }

    #[test]
    fn retrieve_aggregates_mean() {
        let c = Corpus::new(vec![doc("a", &[2.0, 0.0]), doc("b", &[1.0, 1.0]), doc("c", &[0.0, 1.0])]).unwrap();
        let r = retrieve(&c, &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(r.selected, vec!["a", "b"]);
        assert_eq!(r.aggregated, vec![1.5, 0.5]);
    }

    #[test]
    fn single_matching_doc() {
        let c = Corpus::new(vec![doc("q", &[0.3, -0.4])]).unwrap();
        let r = retrieve(&c, &[0.3, -0.4], 0.5).unwrap();
        assert_eq!(r.selected, vec!["q"]);
        assert!((r.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stability_examples() {
        let ab: Vec<String> = vec!["a".into(), "b".into()];
        let bc: Vec<String> = vec!["b".into(), "c".into()];
        let cd: Vec<String> = vec!["c".into(), "d".into()];
        let h = [0.3, 1.0, -2.0];
        assert!((knowledge_stability(&h, &h, &ab, &ab).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(knowledge_stability(&[1.0, 0.0], &[0.0, 1.0], &ab, &cd).unwrap(), 0.0);
        let s = knowledge_stability(&[1.0, 0.0], &[0.8, 0.6], &ab, &bc).unwrap();
        assert!((s - (0.8 + 1.0 / 3.0)).abs() < 1e-12);
        assert!(knowledge_stability(&[0.0, 0.0], &[1.0, 0.0], &ab, &ab).is_err());
    }
}
