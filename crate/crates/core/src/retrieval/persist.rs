//! On-disk layout of one stage index:
//!
//! * `postings.mpi`: header line, then one JSON object with the BM25
//!   constants, per-document lengths and the term → postings map.
//! * `documents.mpd`: header line, then one JSON document per line.
//! * `vectors.mpv`: 8-byte magic, little-endian `u64` count and dim, then
//!   `count * dim` little-endian `f64` values.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::index::{Bm25Params, IndexedDocument, Posting, RetrievalIndex};
use super::IndexError;
use crate::embedding::EmbeddingVector;
use crate::soap::{SoapNote, Stage};

const POSTINGS_HEADER: &str = "medplan-postings v1";
const DOCUMENTS_HEADER: &str = "medplan-documents v1";
const VECTORS_MAGIC: &[u8; 8] = b"MPVEC\x00\x00\x01";

#[derive(Serialize, Deserialize)]
struct PostingsFile {
    stage: Stage,
    params: Bm25Params,
    doc_lens: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

#[derive(Serialize, Deserialize)]
struct DocumentLine {
    doc_id: String,
    key_text: String,
    provider_tag: String,
    payload: SoapNote,
}

fn format_err(msg: impl Into<String>) -> IndexError {
    IndexError::Format(msg.into())
}

impl RetrievalIndex {
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir)?;

        let postings = PostingsFile {
            stage: self.stage(),
            params: self.params(),
            doc_lens: self.doc_lens().to_vec(),
            postings: self
                .postings()
                .iter()
                .map(|(t, ps)| (t.clone(), ps.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        };
        let mut w = BufWriter::new(File::create(dir.join("postings.mpi"))?);
        writeln!(w, "{POSTINGS_HEADER}")?;
        serde_json::to_writer(&mut w, &postings).map_err(|e| format_err(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("documents.mpd"))?);
        writeln!(w, "{DOCUMENTS_HEADER}")?;
        for d in self.documents() {
            let line = DocumentLine {
                doc_id: d.doc_id.clone(),
                key_text: d.key_text.clone(),
                provider_tag: d.embedding.provider_tag.clone(),
                payload: d.payload.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| format_err(e.to_string()))?;
            writeln!(w)?;
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("vectors.mpv"))?);
        w.write_all(VECTORS_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim().unwrap_or(0) as u64).to_le_bytes())?;
        for d in self.documents() {
            for v in &d.embedding.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let mut r = BufReader::new(File::open(dir.join("postings.mpi"))?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        if header.trim_end() != POSTINGS_HEADER {
            return Err(format_err(format!("unsupported postings header `{}`", header.trim_end())));
        }
        let pf: PostingsFile = serde_json::from_reader(r).map_err(|e| format_err(e.to_string()))?;

        let r = BufReader::new(File::open(dir.join("documents.mpd"))?);
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h == DOCUMENTS_HEADER => {}
            _ => return Err(format_err("unsupported documents header")),
        }
        let mut doc_lines = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            doc_lines.push(serde_json::from_str::<DocumentLine>(&line).map_err(|e| format_err(e.to_string()))?);
        }

        let mut bytes = Vec::new();
        File::open(dir.join("vectors.mpv"))?.read_to_end(&mut bytes)?;
        if bytes.len() < 24 || &bytes[..8] != VECTORS_MAGIC {
            return Err(format_err("unsupported vector file header"));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let body = &bytes[24..];
        if count != doc_lines.len() || body.len() != count * dim * 8 {
            return Err(format_err("vector file does not match document store"));
        }
        let docs = doc_lines
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let values = body[i * dim * 8..(i + 1) * dim * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                IndexedDocument {
                    doc_id: d.doc_id,
                    key_text: d.key_text,
                    payload: d.payload,
                    embedding: EmbeddingVector::new(values, d.provider_tag),
                }
            })
            .collect::<Vec<_>>();
        if docs.windows(2).any(|w| w[0].doc_id >= w[1].doc_id) {
            return Err(format_err("documents are not in ascending doc_id order"));
        }
        let postings = pf
            .postings
            .into_iter()
            .map(|(t, ps)| (t, ps.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect()))
            .collect();
        RetrievalIndex::from_parts(pf.stage, pf.params, docs, postings, pf.doc_lens)
    }
}
