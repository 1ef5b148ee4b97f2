use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::index::{query_terms, RetrievalIndex};
use super::IndexError;
use crate::embedding::EmbeddingVector;
use crate::soap::SoapNote;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCandidate {
    pub doc_id: String,
    pub bm25_score: f64,
    pub dense_score: f64,
    pub fused_score: Option<f64>,
    pub rerank_score: Option<f64>,
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Min-max normalizes each score family over the pool (a constant family
/// maps to 0.5) and combines them as `alpha * dense + (1 - alpha) * bm25`.
/// Output is sorted by fused score descending, doc_id ascending.
pub fn fuse(pool: Vec<RetrievalCandidate>, alpha: f64) -> Vec<RetrievalCandidate> {
    let bm25: Vec<f64> = pool.iter().map(|c| c.bm25_score).collect();
    let dense: Vec<f64> = pool.iter().map(|c| c.dense_score).collect();
    let (bn, dn) = (min_max(&bm25), min_max(&dense));
    let mut out: Vec<RetrievalCandidate> = pool
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.fused_score = Some(alpha * dn[i] + (1.0 - alpha) * bn[i]);
            c
        })
        .collect();
    out.sort_by(|a, b| {
        let (fa, fb) = (a.fused_score.unwrap_or(0.0), b.fused_score.unwrap_or(0.0));
        fb.total_cmp(&fa).then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    out
}

/// Hybrid candidate generation: the union of the BM25 top-`n_sim` and the
/// dense top-`n_sim` over documents accepted by `keep`, every union member
/// scored by both rankers, fused and cut back to `n_sim`.
pub fn hybrid_candidates(
    index: &RetrievalIndex,
    query_text: &str,
    query_vec: &EmbeddingVector,
    n_sim: usize,
    alpha: f64,
    keep: impl Fn(&SoapNote) -> bool + Sync + Send,
) -> Result<Vec<RetrievalCandidate>, IndexError> {
    let lexical = index.bm25_search(query_text, n_sim, |d| keep(&d.payload));
    let dense = index.dense_search_filtered(query_vec, n_sim, |d| keep(&d.payload))?;
    let union: BTreeSet<usize> = lexical.iter().chain(dense.iter()).map(|s| s.doc).collect();
    let terms = query_terms(query_text);
    let qn = query_vec.norm();
    let pool = union
        .into_iter()
        .map(|pos| RetrievalCandidate {
            doc_id: index.document(pos).doc_id.clone(),
            bm25_score: index.bm25_at(&terms, pos),
            dense_score: index.cosine_at(&query_vec.values, qn, pos),
            fused_score: None,
            rerank_score: None,
        })
        .collect();
    let mut fused = fuse(pool, alpha);
    fused.truncate(n_sim);
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, bm25: f64, dense: f64) -> RetrievalCandidate {
        RetrievalCandidate { doc_id: id.into(), bm25_score: bm25, dense_score: dense, fused_score: None, rerank_score: None }
    }

    #[test]
    fn opposing_families_cancel_at_half_alpha() {
        let out = fuse(vec![cand("c", 0.0, 1.0), cand("a", 2.0, 0.0), cand("b", 1.0, 0.5)], 0.5);
        let ids: Vec<_> = out.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        for c in &out {
            assert!((c.fused_score.unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_family_normalizes_to_half() {
        let out = fuse(vec![cand("a", 3.0, 0.2), cand("b", 3.0, 0.9)], 0.0);
        assert!(out.iter().all(|c| c.fused_score == Some(0.5)));
        let out = fuse(vec![cand("a", 3.0, 0.2), cand("b", 3.0, 0.9)], 1.0);
        assert_eq!(out[0].doc_id, "b");
        assert_eq!(out[0].fused_score, Some(1.0));
    }

    #[test]
    fn endpoints_select_one_family() {
        let pool = vec![cand("a", 5.0, 0.1), cand("b", 1.0, 0.9), cand("c", 3.0, 0.5)];
        let lexical: Vec<_> = fuse(pool.clone(), 0.0).into_iter().map(|c| c.doc_id).collect();
        let dense: Vec<_> = fuse(pool, 1.0).into_iter().map(|c| c.doc_id).collect();
        assert_eq!(lexical, vec!["a", "c", "b"]);
        assert_eq!(dense, vec!["b", "c", "a"]);
    }

    #[test]
    fn fused_scores_lie_in_unit_interval() {
        let pool: Vec<_> = (0..20).map(|i| cand(&format!("d{i:02}"), (i * 7 % 11) as f64, ((i * 3 % 13) as f64 / 6.5) - 1.0)).collect();
        for alpha in [0.0, 0.3, 0.5, 1.0] {
            for c in fuse(pool.clone(), alpha) {
                let f = c.fused_score.unwrap();
                assert!((0.0..=1.0).contains(&f));
            }
        }
    }
}
