//! Evidence retrieval and the similarity-threshold abstention policy.
//!
//! The decision uses only the top-1 cosine score: the query proceeds to
//! generation when `top1 >= tau` and abstains otherwise. Abstentions carry a
//! plain-language message and, when something was retrieved, citations of
//! the closest chunks so a reviewer can see what was considered.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedder, VectorError};
use crate::http::ProviderError;
use crate::index::{IndexError, VectorIndex};
use crate::model::{AbstainReason, Chunk, ScoredChunk, SystemResponse};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TAU: f64 = 0.55;
/// Citations listed in an abstention message.
pub const MAX_PARTIAL_CITATIONS: usize = 3;
/// Longest quoted chunk excerpt in an abstention message, in characters.
pub const MAX_SNIPPET_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub tau: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::InvalidConfig("k must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(RetrievalError::InvalidConfig(format!(
                "tau must lie in [-1, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("index row refers to unknown chunk {doc_id}/{chunk_id}")]
    MissingChunk { doc_id: String, chunk_id: String },
}

/// Chunks addressable by `(doc_id, chunk_id)`.
#[derive(Debug, Clone, Default)]
pub struct ChunkTable {
    chunks: Vec<Chunk>,
    by_ref: HashMap<(String, String), usize>,
}

impl ChunkTable {
    pub fn new(chunks: Vec<Chunk>) -> Self {
        let by_ref = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.doc_id.clone(), c.chunk_id.clone()), i))
            .collect();
        Self { chunks, by_ref }
    }

    pub fn get(&self, doc_id: &str, chunk_id: &str) -> Option<&Chunk> {
        self.by_ref
            .get(&(doc_id.to_string(), chunk_id.to_string()))
            .map(|&i| &self.chunks[i])
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Top-k chunks for `query`, highest score first.
///
/// A query with no embeddable content (for example only punctuation under
/// the mock provider) retrieves nothing.
pub fn retrieve(
    query: &str,
    index: &VectorIndex,
    chunks: &ChunkTable,
    embedder: &dyn Embedder,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredChunk>, RetrievalError> {
    cfg.validate()?;
    if query.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let q = match embedder.embed(&[query.to_string()]) {
        Ok(mut v) if v.len() == 1 => v.remove(0),
        Ok(v) => {
            return Err(ProviderError::BadResponse {
                detail: format!("expected 1 query vector, got {}", v.len()),
            }
            .into())
        }
        Err(ProviderError::Vector(VectorError::ZeroVector)) => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    index
        .search(&q, cfg.k)?
        .into_iter()
        .map(|hit| {
            let meta = &index.rows()[hit.row_id];
            let chunk = chunks.get(&meta.doc_id, &meta.chunk_id).ok_or_else(|| {
                RetrievalError::MissingChunk {
                    doc_id: meta.doc_id.clone(),
                    chunk_id: meta.chunk_id.clone(),
                }
            })?;
            Ok(ScoredChunk {
                chunk: chunk.clone(),
                score: hit.score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum RetrievalOutcome {
    Proceed {
        evidence: Vec<ScoredChunk>,
        top1: f64,
    },
    AbstainLow {
        partial_evidence: Vec<ScoredChunk>,
        top1: f64,
    },
    AbstainEmpty,
}

impl RetrievalOutcome {
    pub fn top1(&self) -> Option<f64> {
        match self {
            RetrievalOutcome::Proceed { top1, .. } | RetrievalOutcome::AbstainLow { top1, .. } => {
                Some(*top1)
            }
            RetrievalOutcome::AbstainEmpty => None,
        }
    }
}

/// Applies the threshold to evidence sorted by descending score. A top-1
/// score equal to `tau` proceeds.
pub fn decide(evidence: Vec<ScoredChunk>, cfg: &RetrievalConfig) -> RetrievalOutcome {
    let Some(top1) = evidence.first().map(|e| e.score) else {
        return RetrievalOutcome::AbstainEmpty;
    };
    if top1 >= cfg.tau {
        RetrievalOutcome::Proceed { evidence, top1 }
    } else {
        RetrievalOutcome::AbstainLow {
            partial_evidence: evidence,
            top1,
        }
    }
}

pub(crate) const ABSTAIN_LEAD: &str = "Insufficient document support for this question";

/// Whitespace-collapsed prefix of `text`, at most [`MAX_SNIPPET_CHARS`]
/// characters including a trailing ellipsis when truncated.
pub fn snippet(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.chars().count() <= MAX_SNIPPET_CHARS {
        return collapsed;
    }
    let mut out: String = collapsed.chars().take(MAX_SNIPPET_CHARS - 1).collect();
    out.push('…');
    out
}

/// Lists the closest chunks as citation lines for an abstention message.
pub(crate) fn partial_evidence_lines(evidence: &[ScoredChunk]) -> String {
    evidence
        .iter()
        .take(MAX_PARTIAL_CITATIONS)
        .map(|e| format!("- {} \"{}\"", e.chunk.citation(), snippet(&e.chunk.text)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the abstention response for an abstaining outcome; `None` for
/// [`RetrievalOutcome::Proceed`].
pub fn compose_abstention(outcome: &RetrievalOutcome) -> Option<SystemResponse> {
    match outcome {
        RetrievalOutcome::Proceed { .. } => None,
        RetrievalOutcome::AbstainEmpty => Some(SystemResponse::Abstained {
            reason: AbstainReason::NoEvidence,
            message: format!(
                "{ABSTAIN_LEAD}: no relevant documents were found in the indexed corpus, \
                 so no answer is given."
            ),
            partial_evidence: Vec::new(),
        }),
        RetrievalOutcome::AbstainLow {
            partial_evidence,
            top1,
        } => {
            let kept: Vec<ScoredChunk> = partial_evidence
                .iter()
                .take(MAX_PARTIAL_CITATIONS)
                .cloned()
                .collect();
            let message = format!(
                "{ABSTAIN_LEAD}: the closest retrieved passages (top similarity {top1:.3}) \
                 fall below the answer threshold, so no answer is given.\n\
                 Closest passages, judged insufficient to answer:\n{}",
                partial_evidence_lines(&kept)
            );
            Some(SystemResponse::Abstained {
                reason: AbstainReason::LowSimilarity,
                message,
                partial_evidence: kept,
            })
        }
    }
}
