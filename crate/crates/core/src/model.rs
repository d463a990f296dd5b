//! Shared domain types.

use serde::{Deserialize, Serialize};

use crate::citation::Citation;

/// One extracted document, as produced by an external PDF/OCR extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub doc_id: String,
    /// Issuing authority label, e.g. `IRS`, `CA-FTB`, `NY-Tax`.
    pub authority: String,
    /// form | instructions | publication | guideline
    pub doc_type: String,
    pub title: String,
    pub pages: Vec<PageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageRecord {
    pub page_number: u32,
    /// Reading order as produced by the extractor.
    pub blocks: Vec<ContentBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContentBlock {
    Text {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        section_title: Option<String>,
    },
    Table {
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        caption: Option<String>,
    },
    ImageText {
        ocr_text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        descriptor: Option<String>,
    },
}

/// A verbatim, provenance-stamped span of a document's linearized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub page_start: u32,
    pub page_end: u32,
    pub section_title: Option<String>,
    pub text: String,
    /// Length of `text` in Unicode scalar values.
    pub char_len: usize,
}

impl Chunk {
    pub fn citation(&self) -> Citation {
        Citation::new(&self.doc_id, self.page_start, self.page_end, &self.chunk_id)
    }
}

/// A retrieved chunk and its cosine similarity to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerParagraph {
    /// Paragraph text as generated, citation tokens included.
    pub text: String,
    pub citations: Vec<Citation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainReason {
    LowSimilarity,
    NoEvidence,
    CitationValidationFailed,
}

impl AbstainReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AbstainReason::LowSimilarity => "low_similarity",
            AbstainReason::NoEvidence => "no_evidence",
            AbstainReason::CitationValidationFailed => "citation_validation_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemResponse {
    Answered {
        paragraphs: Vec<AnswerParagraph>,
        evidence: Vec<ScoredChunk>,
        top1_score: f64,
        attempts_used: u32,
    },
    Abstained {
        reason: AbstainReason,
        message: String,
        partial_evidence: Vec<ScoredChunk>,
    },
}

impl SystemResponse {
    pub fn is_answered(&self) -> bool {
        matches!(self, SystemResponse::Answered { .. })
    }

    pub fn abstain_reason(&self) -> Option<AbstainReason> {
        match self {
            SystemResponse::Abstained { reason, .. } => Some(*reason),
            SystemResponse::Answered { .. } => None,
        }
    }
}
