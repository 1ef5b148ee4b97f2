//! Text-generation metrics over the engine tokenizer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingError, EmbeddingGateway};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, cand: usize, reference: usize) -> Self {
        if cand == 0 || reference == 0 {
            return Prf::default();
        }
        let precision = overlap as f64 / cand as f64;
        let recall = overlap as f64 / reference as f64;
        Prf { precision, recall, f1: harmonic(precision, recall) }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(cand: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    cand.iter().map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0))).sum()
}

/// Sentence BLEU-4. Zero n-gram matches for n ≥ 2 are smoothed to
/// `1 / (total + 1)`; a candidate with no unigram match scores 0.
pub fn bleu(candidate: &str, references: &[&str]) -> f64 {
    let cand = tokenize(candidate);
    if cand.is_empty() || references.is_empty() {
        return 0.0;
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let c = cand.len();
    // Closest reference length, shorter on ties.
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("at least one reference");
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand_counts = ngram_counts(&cand, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for rt in &refs {
            for (g, k) in ngram_counts(rt, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let matched = clipped_overlap(&cand_counts, &max_ref);
        let total = c.saturating_sub(n - 1);
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    let cc = ngram_counts(&cand, n);
    let rc = ngram_counts(&reference, n);
    Prf::from_counts(clipped_overlap(&cc, &rc), cc.values().sum(), rc.values().sum())
}

pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    Prf::from_counts(lcs_len(&cand, &reference), cand.len(), reference.len())
}

/// Aligns unmatched positions whose keys agree, longest runs first. Ties go
/// to the earliest candidate position, then the earliest reference position.
fn align_stage(cand: &[String], reference: &[String], cand_used: &mut [bool], ref_used: &mut [bool], pairs: &mut Vec<(usize, usize)>) {
    let (n, m) = (cand.len(), reference.len());
    loop {
        // cur[j]: length of the common unmatched run ending at (i-1, j-1).
        let mut best = (0usize, 0usize, 0usize);
        let mut prev = vec![0usize; m + 1];
        for i in 1..=n {
            let mut cur = vec![0usize; m + 1];
            for j in 1..=m {
                if !cand_used[i - 1] && !ref_used[j - 1] && cand[i - 1] == reference[j - 1] {
                    cur[j] = prev[j - 1] + 1;
                    let (len, si, sj) = (cur[j], i - cur[j], j - cur[j]);
                    if len > best.0 || (len == best.0 && (si, sj) < (best.1, best.2)) {
                        best = (len, si, sj);
                    }
                }
            }
            prev = cur;
        }
        let (len, si, sj) = best;
        if len == 0 {
            return;
        }
        for k in 0..len {
            cand_used[si + k] = true;
            ref_used[sj + k] = true;
            pairs.push((si + k, sj + k));
        }
    }
}

/// Number of maximal runs of pairs adjacent on both sides.
pub(crate) fn count_chunks(pairs: &mut [(usize, usize)]) -> usize {
    pairs.sort_unstable();
    let mut chunks = 0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if k == 0 || pairs[k - 1] != (i - 1, j.wrapping_sub(1)) {
            chunks += 1;
        }
    }
    chunks
}

pub(crate) fn meteor_from_alignment(matches: usize, chunks: usize, cand_len: usize, ref_len: usize) -> f64 {
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// METEOR with exact and Porter-stem matching stages; no synonym stage.
pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    let mut cand_used = vec![false; cand.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    align_stage(&cand, &reference, &mut cand_used, &mut ref_used, &mut pairs);
    let stem_all = |t: &[String]| t.iter().map(|w| porter_stemmer::stem(w)).collect::<Vec<_>>();
    align_stage(&stem_all(&cand), &stem_all(&reference), &mut cand_used, &mut ref_used, &mut pairs);
    let matches = pairs.len();
    let chunks = count_chunks(&mut pairs);
    meteor_from_alignment(matches, chunks, cand.len(), reference.len())
}

/// Greedy-matching BERTScore F1 over per-token embeddings, no IDF weighting
/// and no baseline rescaling.
pub fn bertscore_f1(candidate: &str, reference: &str, embedder: &EmbeddingGateway) -> Result<f64, EmbeddingError> {
    let cand = tokenize(candidate);
    let ref_tokens = tokenize(reference);
    if cand.is_empty() || ref_tokens.is_empty() {
        return Ok(0.0);
    }
    let cv = embedder.embed_tokens(candidate)?;
    let rv = embedder.embed_tokens(reference)?;
    let reference = ref_tokens;
    let sim = |i: usize, j: usize| if cand[i] == reference[j] { 1.0 } else { cosine(&cv[i].values, &rv[j].values) };
    let best = |outer: usize, inner: usize, flip: bool| -> f64 {
        (0..outer)
            .map(|a| {
                (0..inner)
                    .map(|b| if flip { sim(b, a) } else { sim(a, b) })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / outer as f64
    };
    let p = best(cand.len(), reference.len(), false).clamp(0.0, 1.0);
    let r = best(reference.len(), cand.len(), true).clamp(0.0, 1.0);
    Ok(harmonic(p, r))
}

/// The six reported scores for one generated text.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricScores {
    pub bleu: f64,
    pub meteor: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bertscore_f1: f64,
}

impl MetricScores {
    pub fn as_array(&self) -> [f64; 6] {
        [self.bleu, self.meteor, self.rouge1, self.rouge2, self.rouge_l, self.bertscore_f1]
    }

    /// Arithmetic mean per metric; `None` for an empty slice.
    pub fn mean(scores: &[MetricScores]) -> Option<MetricScores> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let sum = |f: fn(&MetricScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Some(MetricScores {
            bleu: sum(|s| s.bleu),
            meteor: sum(|s| s.meteor),
            rouge1: sum(|s| s.rouge1),
            rouge2: sum(|s| s.rouge2),
            rouge_l: sum(|s| s.rouge_l),
            bertscore_f1: sum(|s| s.bertscore_f1),
        })
    }
}

pub fn score_all(candidate: &str, reference: &str, embedder: &EmbeddingGateway) -> Result<MetricScores, EmbeddingError> {
    Ok(MetricScores {
        bleu: bleu(candidate, &[reference]),
        meteor: meteor(candidate, reference),
        rouge1: rouge_n(candidate, reference, 1).f1,
        rouge2: rouge_n(candidate, reference, 2).f1,
        rouge_l: rouge_l(candidate, reference).f1,
        bertscore_f1: bertscore_f1(candidate, reference, embedder)?,
    })
}
