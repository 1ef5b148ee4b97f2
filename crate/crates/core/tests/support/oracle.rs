//! Brute-force reference implementations, written from the formulas and
//! kept free of any code shared with the library under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn ngrams(t: &[String], n: usize) -> BTreeMap<Vec<String>, usize> {
    let mut m = BTreeMap::new();
    if t.len() >= n {
        for i in 0..=t.len() - n {
            *m.entry(t[i..i + n].to_vec()).or_insert(0) += 1;
        }
    }
    m
}

fn clipped(c: &BTreeMap<Vec<String>, usize>, r: &BTreeMap<Vec<String>, usize>) -> usize {
    let mut total = 0;
    for (g, k) in c {
        if let Some(rk) = r.get(g) {
            total += (*k).min(*rk);
        }
    }
    total
}

/// Single-reference sentence BLEU-4 with add-one smoothing on zero n≥2 counts.
pub fn bleu(cand: &str, reference: &str) -> f64 {
    let c = tokens(cand);
    let r = tokens(reference);
    if c.is_empty() {
        return 0.0;
    }
    let mut product = 1.0f64;
    for n in 1..=4 {
        let m = clipped(&ngrams(&c, n), &ngrams(&r, n));
        let total: usize = ngrams(&c, n).values().sum();
        let p = if m > 0 {
            m as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        product *= p;
    }
    let bp = if c.len() >= r.len() { 1.0 } else { (1.0 - r.len() as f64 / c.len() as f64).exp() };
    bp * product.powf(0.25)
}

fn f1(overlap: usize, c: usize, r: usize) -> f64 {
    if c == 0 || r == 0 || overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c as f64;
    let rc = overlap as f64 / r as f64;
    2.0 * p * rc / (p + rc)
}

pub fn rouge_n_f1(cand: &str, reference: &str, n: usize) -> f64 {
    let c = ngrams(&tokens(cand), n);
    let r = ngrams(&tokens(reference), n);
    f1(clipped(&c, &r), c.values().sum(), r.values().sum())
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == *x))
}

/// LCS by enumerating every subset of candidate positions (short inputs only).
pub fn lcs_brute(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "brute-force LCS is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let picked: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if picked.len() > best && is_subsequence(&picked, b) {
            best = picked.len();
        }
    }
    best
}

pub fn rouge_l_f1(cand: &str, reference: &str) -> f64 {
    let c = tokens(cand);
    let r = tokens(reference);
    f1(lcs_brute(&c, &r), c.len(), r.len())
}

/// Every matching of positions with equal keys among the free positions.
fn matchings(c: &[String], r: &[String], c_free: &[bool], r_free: &[bool]) -> Vec<Vec<(usize, usize)>> {
    fn go(i: usize, c: &[String], r: &[String], c_free: &[bool], r_used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if i == c.len() {
            out.push(cur.clone());
            return;
        }
        go(i + 1, c, r, c_free, r_used, cur, out);
        if !c_free[i] {
            return;
        }
        for j in 0..r.len() {
            if !r_used[j] && c[i] == r[j] {
                r_used[j] = true;
                cur.push((i, j));
                go(i + 1, c, r, c_free, r_used, cur, out);
                cur.pop();
                r_used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut r_used: Vec<bool> = r_free.iter().map(|f| !f).collect();
    go(0, c, r, c_free, &mut r_used, &mut Vec::new(), &mut out);
    out
}

pub fn chunks(pairs: &[(usize, usize)]) -> usize {
    let mut p = pairs.to_vec();
    p.sort();
    let mut n = 0;
    for k in 0..p.len() {
        if k == 0 || !(p[k].0 == p[k - 1].0 + 1 && p[k].1 == p[k - 1].1 + 1) {
            n += 1;
        }
    }
    n
}

/// METEOR with an exhaustive aligner: each stage keeps only its
/// maximum-cardinality matchings, and among complete alignments the one with
/// the fewest chunks wins.
pub fn meteor(cand: &str, reference: &str, stem: impl Fn(&str) -> String) -> f64 {
    let c = tokens(cand);
    let r = tokens(reference);
    let cs: Vec<String> = c.iter().map(|w| stem(w)).collect();
    let rs: Vec<String> = r.iter().map(|w| stem(w)).collect();
    let keep_max = |v: Vec<Vec<(usize, usize)>>| {
        let best = v.iter().map(Vec::len).max().unwrap_or(0);
        v.into_iter().filter(|m| m.len() == best).collect::<Vec<_>>()
    };
    let mut best: Option<(usize, usize)> = None; // (matches, chunks)
    for exact in keep_max(matchings(&c, &r, &vec![true; c.len()], &vec![true; r.len()])) {
        let mut c_free = vec![true; c.len()];
        let mut r_free = vec![true; r.len()];
        for &(i, j) in &exact {
            c_free[i] = false;
            r_free[j] = false;
        }
        for stemmed in keep_max(matchings(&cs, &rs, &c_free, &r_free)) {
            let all: Vec<_> = exact.iter().chain(&stemmed).copied().collect();
            let cand_score = (all.len(), chunks(&all));
            best = Some(match best {
                None => cand_score,
                Some(b) if cand_score.0 > b.0 || (cand_score.0 == b.0 && cand_score.1 < b.1) => cand_score,
                Some(b) => b,
            });
        }
    }
    let (m, ch) = best.unwrap_or((0, 0));
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c.len() as f64;
    let rr = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rr / (rr + 9.0 * p);
    fmean * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3))
}

/// BM25 by scanning every document for every query term.
pub fn bm25(docs: &[Vec<String>], query: &[String], doc: usize) -> f64 {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut seen: Vec<&String> = Vec::new();
    let mut score = 0.0;
    for t in query {
        if seen.contains(&t) {
            continue;
        }
        seen.push(t);
        let count = query.iter().filter(|q| *q == t).count() as f64;
        let tf = docs[doc].iter().filter(|w| *w == t).count() as f64;
        if tf == 0.0 {
            continue;
        }
        let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let rel = if avgdl > 0.0 { docs[doc].len() as f64 / avgdl } else { 1.0 };
        score += count * idf * (tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * rel)));
    }
    score
}

/// Top-k `(id, score)` by a full scan; documents with no matching term are
/// left out. Ties go to the smaller id.
pub fn bm25_topk(ids: &[String], docs: &[Vec<String>], query: &[String], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = (0..docs.len())
        .filter(|&d| query.iter().any(|q| docs[d].contains(q)))
        .map(|d| (ids[d].clone(), bm25(docs, query, d)))
        .collect();
    sort_desc(&mut all);
    all.truncate(k);
    all
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    for x in a {
        na += x * x;
    }
    for x in b {
        nb += x * x;
    }
    let d = na.sqrt() * nb.sqrt();
    if d == 0.0 {
        0.0
    } else {
        dot / d
    }
}

pub fn dense_topk(ids: &[String], vecs: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = ids.iter().cloned().zip(vecs.iter().map(|v| cosine(q, v))).collect();
    sort_desc(&mut all);
    all.truncate(k);
    all
}

pub fn sort_desc(v: &mut [(String, f64)]) {
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
}

/// Token-overlap F1 on clipped multisets.
pub fn overlap_f1(q: &str, d: &str) -> f64 {
    let q = tokens(q);
    let d = tokens(d);
    let qm = ngrams(&q, 1);
    let dm = ngrams(&d, 1);
    f1(clipped(&qm, &dm), q.len(), d.len())
}

/// Greedy BERTScore F1 from an explicit similarity matrix `sim[i][j]`
/// (candidate token i against reference token j).
pub fn bertscore_from_matrix(sim: &[Vec<f64>]) -> f64 {
    if sim.is_empty() || sim[0].is_empty() {
        return 0.0;
    }
    let rows = sim.len();
    let cols = sim[0].len();
    let p = sim.iter().map(|row| row.iter().cloned().fold(f64::MIN, f64::max)).sum::<f64>() / rows as f64;
    let r = (0..cols).map(|j| (0..rows).map(|i| sim[i][j]).fold(f64::MIN, f64::max)).sum::<f64>() / cols as f64;
    let (p, r) = (p.clamp(0.0, 1.0), r.clamp(0.0, 1.0));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
