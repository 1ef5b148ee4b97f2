use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{key_text, IndexError};
use crate::embedding::{cosine, norm, dot, EmbedKind, EmbeddingGateway, EmbeddingVector};
use crate::par::Execution;
use crate::soap::{SoapNote, Stage};
use crate::text::tokenize;

/// Okapi BM25 constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedDocument {
    pub doc_id: String,
    pub key_text: String,
    pub payload: SoapNote,
    pub embedding: EmbeddingVector,
}

/// A (document position, score) pair produced by the rankers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub doc: usize,
    pub score: f64,
}

/// Documents below this count are scanned on the calling thread.
const PARALLEL_SCAN_MIN_DOCS: usize = 2048;

/// Immutable lexical + dense index over one stage's retrieval keys.
///
/// Documents are held in ascending `doc_id` order, so "ascending document
/// position" and "ascending doc_id" are the same tie-break everywhere.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    stage: Stage,
    params: Bm25Params,
    docs: Vec<IndexedDocument>,
    positions: HashMap<String, usize>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lens: Vec<u32>,
    avgdl: f64,
    norms: Vec<f64>,
    dim: Option<usize>,
    exec: Execution,
}

/// Distinct query terms in first-occurrence order with their multiplicity.
pub fn query_terms(query: &str) -> Vec<(String, u32)> {
    let mut out: Vec<(String, u32)> = Vec::new();
    for tok in tokenize(query) {
        match out.iter_mut().find(|(t, _)| *t == tok) {
            Some((_, n)) => *n += 1,
            None => out.push((tok, 1)),
        }
    }
    out
}

impl RetrievalIndex {
    pub fn empty(stage: Stage) -> Self {
        RetrievalIndex::from_documents(stage, Vec::new(), Bm25Params::default()).expect("empty index is valid")
    }

    /// Builds the inverted index over already-embedded documents.
    pub fn from_documents(stage: Stage, mut docs: Vec<IndexedDocument>, params: Bm25Params) -> Result<Self, IndexError> {
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let mut seen = HashSet::new();
        for d in &docs {
            if d.key_text.trim().is_empty() {
                return Err(IndexError::EmptyKey(d.doc_id.clone()));
            }
            if !seen.insert(d.doc_id.as_str()) {
                return Err(IndexError::DuplicateDocId(d.doc_id.clone()));
            }
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            let tokens = tokenize(&d.key_text);
            doc_lens.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push(Posting { doc: i as u32, tf: n });
            }
        }
        Self::from_parts(stage, params, docs, postings, doc_lens)
    }

    pub(crate) fn from_parts(
        stage: Stage,
        params: Bm25Params,
        docs: Vec<IndexedDocument>,
        postings: BTreeMap<String, Vec<Posting>>,
        doc_lens: Vec<u32>,
    ) -> Result<Self, IndexError> {
        if doc_lens.len() != docs.len() {
            return Err(IndexError::Format("document length table does not match document count".into()));
        }
        let dim = docs.first().map(|d| d.embedding.dim());
        if let Some(expected) = dim {
            if let Some(bad) = docs.iter().find(|d| d.embedding.dim() != expected) {
                return Err(IndexError::DimMismatch { expected, got: bad.embedding.dim() });
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avgdl = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        let norms = docs.iter().map(|d| norm(&d.embedding.values)).collect();
        let positions = docs.iter().enumerate().map(|(i, d)| (d.doc_id.clone(), i)).collect();
        Ok(RetrievalIndex { stage, params, docs, positions, postings, doc_lens, avgdl, norms, dim, exec: Execution::default() })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn documents(&self) -> &[IndexedDocument] {
        &self.docs
    }

    pub fn document(&self, pos: usize) -> &IndexedDocument {
        &self.docs[pos]
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    pub fn get(&self, doc_id: &str) -> Option<&IndexedDocument> {
        self.position(doc_id).map(|i| &self.docs[i])
    }

    pub(crate) fn postings(&self) -> &BTreeMap<String, Vec<Posting>> {
        &self.postings
    }

    pub(crate) fn doc_lens(&self) -> &[u32] {
        &self.doc_lens
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn tf_weight(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let rel_len = if self.avgdl > 0.0 { doc_len as f64 / self.avgdl } else { 1.0 };
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * rel_len))
    }

    /// BM25 of `query` against one indexed document.
    pub fn bm25_score(&self, query: &str, doc_id: &str) -> Result<f64, IndexError> {
        let pos = self.position(doc_id).ok_or_else(|| IndexError::UnknownDoc(doc_id.to_string()))?;
        Ok(self.bm25_at(&query_terms(query), pos))
    }

    pub(crate) fn bm25_at(&self, terms: &[(String, u32)], pos: usize) -> f64 {
        let mut score = 0.0;
        for (term, count) in terms {
            let Some(list) = self.postings.get(term) else { continue };
            if let Ok(i) = list.binary_search_by_key(&(pos as u32), |p| p.doc) {
                let idf = self.idf(list.len());
                score += *count as f64 * idf * self.tf_weight(list[i].tf, self.doc_lens[pos]);
            }
        }
        score
    }

    /// Top-`k` documents sharing at least one term with `query`, by BM25
    /// descending and then doc_id ascending.
    pub fn bm25_search(&self, query: &str, k: usize, keep: impl Fn(&IndexedDocument) -> bool) -> Vec<Scored> {
        if k == 0 || self.docs.is_empty() {
            return Vec::new();
        }
        let terms = query_terms(query);
        let mut acc = vec![0.0f64; self.docs.len()];
        let mut hit = vec![false; self.docs.len()];
        for (term, count) in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(list.len());
            for p in list {
                let i = p.doc as usize;
                acc[i] += *count as f64 * idf * self.tf_weight(p.tf, self.doc_lens[i]);
                hit[i] = true;
            }
        }
        let mut out: Vec<Scored> = (0..self.docs.len())
            .filter(|&i| hit[i] && keep(&self.docs[i]))
            .map(|i| Scored { doc: i, score: acc[i] })
            .collect();
        rank(&mut out, k);
        out
    }

    pub(crate) fn cosine_at(&self, query: &[f64], query_norm: f64, pos: usize) -> f64 {
        let denom = query_norm * self.norms[pos];
        if denom == 0.0 {
            0.0
        } else {
            dot(query, &self.docs[pos].embedding.values) / denom
        }
    }

    fn check_dim(&self, query: &EmbeddingVector) -> Result<(), IndexError> {
        match self.dim {
            Some(expected) if expected != query.dim() => Err(IndexError::DimMismatch { expected, got: query.dim() }),
            _ => Ok(()),
        }
    }

    /// Exact top-`k` by cosine similarity over the documents accepted by `keep`.
    pub fn dense_search_filtered(
        &self,
        query: &EmbeddingVector,
        k: usize,
        keep: impl Fn(&IndexedDocument) -> bool + Sync + Send,
    ) -> Result<Vec<Scored>, IndexError> {
        self.check_dim(query)?;
        if k == 0 || self.docs.is_empty() {
            return Ok(Vec::new());
        }
        let qn = query.norm();
        let exec = if self.docs.len() >= PARALLEL_SCAN_MIN_DOCS { self.exec } else { Execution::Sequential };
        let scores = exec.map_range(self.docs.len(), |i| {
            keep(&self.docs[i]).then(|| Scored { doc: i, score: self.cosine_at(&query.values, qn, i) })
        });
        let mut out: Vec<Scored> = scores.into_iter().flatten().collect();
        rank(&mut out, k);
        Ok(out)
    }

    /// Exact top-`k` `(doc_id, cosine)` pairs, ties broken by ascending doc_id.
    pub fn dense_search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(String, f64)>, IndexError> {
        Ok(self
            .dense_search_filtered(query, k, |_| true)?
            .into_iter()
            .map(|s| (self.docs[s.doc].doc_id.clone(), s.score))
            .collect())
    }

    /// Cosine between `query` and the document at `pos`.
    pub fn dense_score(&self, query: &EmbeddingVector, pos: usize) -> f64 {
        cosine(&query.values, &self.docs[pos].embedding.values)
    }
}

/// Sorts by score descending, position ascending, and keeps the first `k`.
pub(crate) fn rank(items: &mut Vec<Scored>, k: usize) {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
    items.truncate(k);
}

/// Embeds every note's retrieval key and builds the stage index.
///
/// Notes are assumed valid for the stage's role; an embedding failure aborts
/// with the number of documents embedded so far.
pub fn build_index(notes: &[SoapNote], stage: Stage, gateway: &EmbeddingGateway) -> Result<RetrievalIndex, IndexError> {
    const CHUNK: usize = 512;
    let mut seen = HashSet::new();
    for n in notes {
        let id = n.doc_id(stage);
        if !seen.insert(id.clone()) {
            return Err(IndexError::DuplicateDocId(id));
        }
    }
    let keys: Vec<String> = notes.iter().map(|n| key_text(n, stage)).collect();
    let mut vectors = Vec::with_capacity(keys.len());
    for chunk in keys.chunks(CHUNK) {
        match gateway.embed_texts(chunk, EmbedKind::Document) {
            Ok(vs) => vectors.extend(vs),
            Err(source) => {
                return Err(IndexError::Embedding { embedded: vectors.len(), total: keys.len(), source });
            }
        }
    }
    let docs = notes
        .iter()
        .zip(keys)
        .zip(vectors)
        .map(|((note, key), embedding)| IndexedDocument {
            doc_id: note.doc_id(stage),
            key_text: key,
            payload: note.clone(),
            embedding,
        })
        .collect();
    RetrievalIndex::from_documents(stage, docs, Bm25Params::default())
}
