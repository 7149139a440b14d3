use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider, Result, SentenceVector, TokenVectors};
use crate::corpus::Sentence;

/// One line of the external vector file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub id: u64,
    pub sent: Vec<f64>,
    pub tok: Vec<Vec<f64>>,
}

/// Precomputed sentence and token vectors keyed by sentence id.
#[derive(Debug, Clone, Default)]
pub struct ExternalVectors {
    dim: usize,
    records: HashMap<u64, ExternalRecord>,
}

impl ExternalVectors {
    pub fn from_records(records: Vec<ExternalRecord>) -> Result<Self> {
        let dim = records.first().map(|r| r.sent.len()).unwrap_or(0);
        let mut map = HashMap::with_capacity(records.len());
        for r in records {
            if r.sent.len() != dim || r.tok.iter().any(|t| t.len() != dim) {
                return Err(EmbedError::Format(format!("record {} has inconsistent dimension", r.id)));
            }
            if r.sent.iter().chain(r.tok.iter().flatten()).any(|x| !x.is_finite()) {
                return Err(EmbedError::Format(format!("record {} has non-finite values", r.id)));
            }
            map.insert(r.id, r);
        }
        Ok(ExternalVectors { dim, records: map })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&ExternalRecord> {
        self.records.get(&id)
    }
}

impl EmbeddingProvider for ExternalVectors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_tokens(&self, sentence: &Sentence) -> Result<TokenVectors> {
        let rec = self.records.get(&sentence.id).ok_or(EmbedError::MissingExternalVector(sentence.id))?;
        if rec.tok.len() != sentence.tokens.len() {
            return Err(EmbedError::DimensionMismatch { expected: sentence.tokens.len(), found: rec.tok.len() });
        }
        Ok(TokenVectors { sentence_id: sentence.id, dim: self.dim, data: rec.tok.concat() })
    }

    fn embed_sentence(&self, sentence: &Sentence) -> Result<SentenceVector> {
        if sentence.tokens.is_empty() {
            return Err(EmbedError::EmptySentence(sentence.id));
        }
        let rec = self.records.get(&sentence.id).ok_or(EmbedError::MissingExternalVector(sentence.id))?;
        Ok(SentenceVector { sentence_id: sentence.id, vector: rec.sent.clone() })
    }
}

pub fn load_external_vectors(path: &Path) -> Result<ExternalVectors> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExternalRecord =
            serde_json::from_str(&line).map_err(|e| EmbedError::Format(format!("line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    ExternalVectors::from_records(records)
}

pub fn write_external_vectors(path: &Path, records: &[ExternalRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| EmbedError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
