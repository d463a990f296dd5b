//! Single-query answering over a loaded store, and the JSON response body
//! shared by the CLI and the HTTP service.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedder;
use crate::generation::{answer_with_enforcement, GenConfig, GenerationError, Generator};
use crate::http::ProviderError;
use crate::index::VectorIndex;
use crate::model::SystemResponse;
use crate::retrieval::{decide, retrieve, ChunkTable, RetrievalConfig, RetrievalError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

impl PipelineError {
    /// True when the embedding provider could not be reached.
    pub fn is_provider_unavailable(&self) -> bool {
        matches!(
            self,
            PipelineError::Retrieval(RetrievalError::Provider(
                ProviderError::Unreachable { .. } | ProviderError::Timeout { .. }
            ))
        )
    }

    /// True for errors caused by the request rather than the system.
    pub fn is_bad_request(&self) -> bool {
        matches!(
            self,
            PipelineError::Retrieval(RetrievalError::EmptyQuery | RetrievalError::InvalidConfig(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub response: SystemResponse,
    /// Top-1 similarity, absent when nothing was retrieved.
    pub top1: Option<f64>,
    pub generator_calls: u32,
}

pub struct Pipeline {
    pub index: VectorIndex,
    pub chunks: ChunkTable,
    pub embedder: Box<dyn Embedder>,
    pub generator: Box<dyn Generator>,
    pub gen: GenConfig,
}

impl Pipeline {
    pub fn answer(
        &self,
        query: &str,
        cfg: &RetrievalConfig,
    ) -> Result<QueryOutcome, PipelineError> {
        let evidence = retrieve(
            query,
            &self.index,
            &self.chunks,
            self.embedder.as_ref(),
            cfg,
        )?;
        let outcome = decide(evidence, cfg);
        let top1 = outcome.top1();
        let enforced =
            answer_with_enforcement(query, &outcome, self.generator.as_ref(), &self.gen)?;
        Ok(QueryOutcome {
            response: enforced.response,
            top1,
            generator_calls: enforced.generator_calls,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphBody {
    pub text: String,
    pub citations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBody {
    pub citation: String,
    pub score: f64,
}

/// Wire form of a query answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponseBody {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraphs: Option<Vec<ParagraphBody>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub evidence: Vec<EvidenceBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts_used: Option<u32>,
}

impl QueryResponseBody {
    pub fn from_outcome(outcome: &QueryOutcome) -> Self {
        let evidence_body = |ev: &[crate::model::ScoredChunk]| {
            ev.iter()
                .map(|e| EvidenceBody {
                    citation: e.chunk.citation().render(),
                    score: e.score,
                })
                .collect()
        };
        match &outcome.response {
            SystemResponse::Answered {
                paragraphs,
                evidence,
                top1_score,
                attempts_used,
            } => Self {
                status: "answered".into(),
                paragraphs: Some(
                    paragraphs
                        .iter()
                        .map(|p| ParagraphBody {
                            text: p.text.clone(),
                            citations: p.citations.iter().map(|c| c.render()).collect(),
                        })
                        .collect(),
                ),
                reason: None,
                message: None,
                evidence: evidence_body(evidence),
                top1_score: Some(*top1_score),
                attempts_used: Some(*attempts_used),
            },
            SystemResponse::Abstained {
                reason,
                message,
                partial_evidence,
            } => Self {
                status: "abstained".into(),
                paragraphs: None,
                reason: Some(reason.as_str().into()),
                message: Some(message.clone()),
                evidence: evidence_body(partial_evidence),
                top1_score: outcome.top1,
                attempts_used: None,
            },
        }
    }

    /// Compact JSON followed by a newline; the exact bytes both the CLI
    /// (`query --json`) and the HTTP service emit.
    pub fn to_wire(&self) -> String {
        let mut s = serde_json::to_string(self).expect("response body serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockEmbedder;
    use crate::generation::{ExtractiveGenerator, ScriptedGenerator};
    use crate::index::RowMeta;
    use crate::model::{AbstainReason, Chunk};

    fn pipeline(texts: &[&str], generator: Box<dyn Generator>) -> Pipeline {
        let embedder = MockEmbedder::new(256);
        let chunks: Vec<Chunk> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                chunk_id: format!("c{i:04}"),
                doc_id: "irs-p17".into(),
                page_start: i as u32 + 1,
                page_end: i as u32 + 1,
                section_title: None,
                text: t.to_string(),
                char_len: t.chars().count(),
            })
            .collect();
        let vectors = embedder
            .embed(&chunks.iter().map(|c| c.text.clone()).collect::<Vec<_>>())
            .unwrap();
        let meta = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| RowMeta::for_chunk(i, c))
            .collect();
        Pipeline {
            index: VectorIndex::build(&vectors, meta).unwrap(),
            chunks: ChunkTable::new(chunks),
            embedder: Box::new(embedder),
            generator,
            gen: GenConfig::default(),
        }
    }

    const TEXTS: &[&str] = &[
        "The standard deduction for a single filer is $13,850. Use the worksheet.",
        "Interest income over $1,500 must be reported on Schedule B.",
    ];

    #[test]
    fn in_corpus_query_is_answered() {
        let p = pipeline(TEXTS, Box::new(ExtractiveGenerator));
        let out = p
            .answer(
                "What is the standard deduction for a single filer?",
                &RetrievalConfig::default(),
            )
            .unwrap();
        assert!(out.response.is_answered(), "{:?}", out.response);
        let body = QueryResponseBody::from_outcome(&out);
        assert_eq!(body.status, "answered");
        for para in body.paragraphs.clone().unwrap() {
            assert!(!para.citations.is_empty());
            for c in para.citations {
                crate::parse_citation(&c).unwrap();
            }
        }
        assert!(body.to_wire().ends_with("}\n"));
    }

    #[test]
    fn out_of_corpus_query_abstains_without_generation() {
        let g = Box::new(ScriptedGenerator::new(["never used"]));
        let p = pipeline(TEXTS, g);
        let out = p
            .answer("zebra migration patterns", &RetrievalConfig::default())
            .unwrap();
        assert_eq!(
            out.response.abstain_reason(),
            Some(AbstainReason::LowSimilarity)
        );
        assert_eq!(out.generator_calls, 0);
        let body = QueryResponseBody::from_outcome(&out);
        assert_eq!(body.reason.as_deref(), Some("low_similarity"));
        assert!(body.message.unwrap().contains("Insufficient"));
    }

    #[test]
    fn empty_query_is_bad_request() {
        let p = pipeline(TEXTS, Box::new(ExtractiveGenerator));
        let err = p.answer("  ", &RetrievalConfig::default()).unwrap_err();
        assert!(err.is_bad_request());
    }
}
