//! Token and sentence vectors behind a pluggable provider, plus PCA
//! reduction of sentence vectors for indexing.
//!
//! The default provider is a deterministic feature-hashing embedder: each
//! token's vector is the L2-normalized signed sum of hashed features
//! describing the token and its syntactic and linear context. The external
//! provider serves precomputed vectors loaded from a newline-delimited JSON
//! file so real language-model embeddings can be plugged in.

mod external;
mod pca;

pub use external::{load_external_vectors, write_external_vectors, ExternalRecord, ExternalVectors};
pub use pca::{apply_pca, fit_pca, symmetric_eigen, PcaModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("MissingExternalVector: sentence {0}")]
    MissingExternalVector(u64),
    #[error("EmptySentence: sentence {0}")]
    EmptySentence(u64),
    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("DegenerateData: {0}")]
    DegenerateData(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("FormatError: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl EmbedError {
    pub fn code(&self) -> &'static str {
        match self {
            EmbedError::MissingExternalVector(_) => "MissingExternalVector",
            EmbedError::EmptySentence(_) => "EmptySentence",
            EmbedError::DimensionMismatch { .. } => "DimensionMismatch",
            EmbedError::DegenerateData(_) => "DegenerateData",
            EmbedError::InvalidConfig(_) => "InvalidConfig",
            EmbedError::Format(_) => "FormatError",
            EmbedError::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

/// Row-major `n × dim` matrix of token vectors for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVectors {
    pub sentence_id: u64,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl TokenVectors {
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Uniformly scale every entry.
    pub fn scaled(&self, factor: f64) -> TokenVectors {
        TokenVectors {
            sentence_id: self.sentence_id,
            dim: self.dim,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    pub sentence_id: u64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub d_raw: usize,
    /// Context half-width for neighbor features.
    pub window: usize,
    pub seed: u64,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig { kind: ProviderKind::Hash, d_raw: 256, window: 2, seed: 0 }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_tokens(&self, sentence: &Sentence) -> Result<TokenVectors>;
    fn embed_sentence(&self, sentence: &Sentence) -> Result<SentenceVector>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_continue(FNV_OFFSET, bytes)
}

fn fnv1a64_continue(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Feature-hashing embedder.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    config: EmbeddingProviderConfig,
}

impl HashEmbedder {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self> {
        if config.d_raw == 0 {
            return Err(EmbedError::InvalidConfig("d_raw must be positive".into()));
        }
        if config.kind != ProviderKind::Hash {
            return Err(EmbedError::InvalidConfig("hash embedder needs kind=hash".into()));
        }
        Ok(HashEmbedder { config })
    }

    pub fn config(&self) -> &EmbeddingProviderConfig {
        &self.config
    }

    /// Bucket index and sign of one feature string. A nonzero seed is
    /// hashed ahead of the feature bytes.
    pub fn bucket(&self, feature: &str) -> (usize, f64) {
        let h = if self.config.seed == 0 {
            fnv1a64(feature.as_bytes())
        } else {
            fnv1a64_continue(fnv1a64(&self.config.seed.to_le_bytes()), feature.as_bytes())
        };
        let index = (h % self.config.d_raw as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        (index, sign)
    }

    /// Feature strings of token `i`: lemma, lowercase word, POS, relation,
    /// head lemma, position-tagged neighbor lemmas and entity label.
    pub fn token_features(&self, sentence: &Sentence, i: usize) -> Vec<String> {
        let tok = &sentence.tokens[i];
        let mut feats = vec![
            format!("lemma={}", tok.lemma.to_lowercase()),
            format!("word={}", tok.surface.to_lowercase()),
            format!("pos={}", tok.pos),
            format!("dep={}", tok.deprel),
            match tok.head {
                Some(h) => format!("head={}", sentence.tokens[h].lemma.to_lowercase()),
                None => "head=<root>".to_string(),
            },
        ];
        for off in 1..=self.config.window {
            if let Some(j) = i.checked_sub(off) {
                feats.push(format!("ctx-{off}={}", sentence.tokens[j].lemma.to_lowercase()));
            }
            if let Some(t) = sentence.tokens.get(i + off) {
                feats.push(format!("ctx+{off}={}", t.lemma.to_lowercase()));
            }
        }
        if let Some(e) = sentence.entity_at(i) {
            feats.push(format!("ent={}", e.label));
        }
        feats
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.config.d_raw
    }

    fn embed_tokens(&self, sentence: &Sentence) -> Result<TokenVectors> {
        let d = self.config.d_raw;
        let mut data = vec![0.0; sentence.tokens.len() * d];
        for i in 0..sentence.tokens.len() {
            let row = &mut data[i * d..(i + 1) * d];
            for f in self.token_features(sentence, i) {
                let (idx, sign) = self.bucket(&f);
                row[idx] += sign;
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            } else {
                // every feature cancelled out; fall back to the lemma bucket
                let (idx, sign) = self.bucket(&format!("lemma={}", sentence.tokens[i].lemma.to_lowercase()));
                row[idx] = sign;
            }
        }
        Ok(TokenVectors { sentence_id: sentence.id, dim: d, data })
    }

    fn embed_sentence(&self, sentence: &Sentence) -> Result<SentenceVector> {
        if sentence.tokens.is_empty() {
            return Err(EmbedError::EmptySentence(sentence.id));
        }
        let tv = self.embed_tokens(sentence)?;
        Ok(SentenceVector { sentence_id: sentence.id, vector: mean_rows(&tv) })
    }
}

/// Column-wise mean of the rows.
pub fn mean_rows(tv: &TokenVectors) -> Vec<f64> {
    let n = tv.rows();
    let mut mean = vec![0.0; tv.dim];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(tv.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Build the provider named by `config`; external providers need the
/// vector file path.
pub fn provider_from_config(
    config: &EmbeddingProviderConfig,
    external_path: Option<&std::path::Path>,
) -> Result<Box<dyn EmbeddingProvider>> {
    match config.kind {
        ProviderKind::Hash => Ok(Box::new(HashEmbedder::new(config.clone())?)),
        ProviderKind::External => {
            let path = external_path.ok_or_else(|| EmbedError::InvalidConfig("external provider needs a vector file".into()))?;
            Ok(Box::new(load_external_vectors(path)?))
        }
    }
}
