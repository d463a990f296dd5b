//! Structure-aware chunking with bounded overlap.
//!
//! A document's segments are joined with single newlines into a working
//! stream. Chunks are cut greedily from the front of the stream. Cut points
//! are chosen by priority:
//!
//! 1. a section-title change at least `min_len` into the chunk (always cut
//!    there, and the next chunk starts without overlap);
//! 2. a page break;
//! 3. a sentence boundary (`. `, `? `, `! ` or a newline);
//! 4. a hard cut at `max_len`.
//!
//! Within classes 2 and 3 the candidate closest to `target_len` wins, later
//! candidates winning ties. All lengths count Unicode scalar values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::FlatSegment;
use crate::model::Chunk;

/// Chunks per document are numbered `c0000`..`c9998`.
pub const MAX_CHUNKS_PER_DOC: usize = 9_999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkingConfig {
    pub target_len: usize,
    pub max_len: usize,
    pub overlap_len: usize,
    pub min_len: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            target_len: 1000,
            max_len: 1400,
            overlap_len: 150,
            min_len: 200,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), ChunkError> {
        let ok = self.overlap_len < self.min_len
            && self.min_len <= self.target_len
            && self.target_len <= self.max_len;
        if ok {
            Ok(())
        } else {
            Err(ChunkError::InvalidConfig(*self))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("invalid chunking config {0:?}: need overlap < min <= target <= max")]
    InvalidConfig(ChunkingConfig),
    #[error("segments belong to more than one document ({0} and {1})")]
    MixedDocuments(String, String),
    #[error("document {doc_id} produced more than {MAX_CHUNKS_PER_DOC} chunks")]
    Overflow { doc_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SegmentSpan {
    start: usize,
    end: usize,
    page: u32,
    section: Option<String>,
}

/// Segment texts joined by newlines, with the page and section of every
/// character recoverable. The joining newline belongs to the segment
/// before it.
#[derive(Debug, Clone)]
pub struct WorkingStream {
    doc_id: String,
    chars: Vec<char>,
    spans: Vec<SegmentSpan>,
}

impl WorkingStream {
    pub fn new(segments: &[FlatSegment]) -> Result<Self, ChunkError> {
        let doc_id = segments
            .first()
            .map(|s| s.doc_id.clone())
            .unwrap_or_default();
        let mut chars = Vec::new();
        let mut spans = Vec::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            if seg.doc_id != doc_id {
                return Err(ChunkError::MixedDocuments(doc_id, seg.doc_id.clone()));
            }
            let start = chars.len();
            chars.extend(seg.text.chars());
            if i + 1 < segments.len() {
                chars.push('\n');
            }
            spans.push(SegmentSpan {
                start,
                end: chars.len(),
                page: seg.page_number,
                section: seg.section_title.clone(),
            });
        }
        Ok(Self {
            doc_id,
            chars,
            spans,
        })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn slice(&self, start: usize, end: usize) -> String {
        self.chars[start..end].iter().collect()
    }

    fn span_at(&self, pos: usize) -> &SegmentSpan {
        let i = self.spans.partition_point(|s| s.end <= pos);
        &self.spans[i]
    }

    /// Page of the character at `pos`.
    pub fn page_at(&self, pos: usize) -> u32 {
        self.span_at(pos).page
    }

    pub fn section_at(&self, pos: usize) -> Option<&str> {
        self.span_at(pos).section.as_deref()
    }

    /// Offsets where a segment opens a new, named section.
    fn section_changes(&self) -> Vec<usize> {
        self.spans
            .windows(2)
            .filter(|w| w[1].section.is_some() && w[1].section != w[0].section)
            .map(|w| w[1].start)
            .collect()
    }

    fn page_breaks(&self) -> Vec<usize> {
        self.spans
            .windows(2)
            .filter(|w| w[1].page != w[0].page)
            .map(|w| w[1].start)
            .collect()
    }

    /// True when a chunk may end just before `pos` on a sentence boundary.
    fn is_sentence_boundary(&self, pos: usize) -> bool {
        match pos.checked_sub(1).map(|i| self.chars[i]) {
            Some('\n') => true,
            Some(' ') => pos >= 2 && matches!(self.chars[pos - 2], '.' | '?' | '!'),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutKind {
    Section,
    Page,
    Sentence,
    Hard,
    /// End of stream.
    Final,
}

/// Character range `[start, end)` of one chunk in the working stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpan {
    pub start: usize,
    pub end: usize,
    pub cut: CutKind,
}

fn closest_to(candidates: impl Iterator<Item = usize>, target: usize) -> Option<usize> {
    // later candidates win ties
    candidates.min_by_key(|&c| (c.abs_diff(target), std::cmp::Reverse(c)))
}

/// Cuts the stream into chunk spans.
pub fn chunk_spans(stream: &WorkingStream, cfg: &ChunkingConfig) -> Vec<ChunkSpan> {
    let n = stream.len();
    let sections = stream.section_changes();
    let pages = stream.page_breaks();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < n {
        let lo = pos + cfg.min_len;
        let hi = pos + cfg.max_len;
        if let Some(&s) = sections.iter().find(|&&s| s >= lo && s <= hi) {
            out.push(ChunkSpan {
                start: pos,
                end: s,
                cut: CutKind::Section,
            });
            pos = s;
            continue;
        }
        if n - pos <= cfg.max_len {
            out.push(ChunkSpan {
                start: pos,
                end: n,
                cut: CutKind::Final,
            });
            break;
        }
        let target = pos + cfg.target_len;
        let (end, cut) = if let Some(p) = closest_to(
            pages.iter().copied().filter(|&p| p >= lo && p <= hi),
            target,
        ) {
            (p, CutKind::Page)
        } else if let Some(b) = closest_to(
            (lo..=hi).filter(|&b| stream.is_sentence_boundary(b)),
            target,
        ) {
            (b, CutKind::Sentence)
        } else {
            (hi, CutKind::Hard)
        };
        out.push(ChunkSpan {
            start: pos,
            end,
            cut,
        });
        pos = end.saturating_sub(cfg.overlap_len);
    }
    out
}

/// A chunk before identifiers are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftChunk {
    pub doc_id: String,
    pub page_start: u32,
    pub page_end: u32,
    pub section_title: Option<String>,
    pub text: String,
    pub char_len: usize,
}

/// Chunks one document's segments. Segments must be in document order and
/// share a doc id; no segments yields no chunks.
pub fn chunk_document(
    segments: &[FlatSegment],
    cfg: &ChunkingConfig,
) -> Result<Vec<DraftChunk>, ChunkError> {
    cfg.validate()?;
    let stream = WorkingStream::new(segments)?;
    Ok(chunk_spans(&stream, cfg)
        .into_iter()
        .map(|span| DraftChunk {
            doc_id: stream.doc_id.clone(),
            page_start: stream.page_at(span.start),
            page_end: stream.page_at(span.end - 1),
            section_title: stream.section_at(span.start).map(str::to_string),
            text: stream.slice(span.start, span.end),
            char_len: span.end - span.start,
        })
        .collect())
}

/// Numbers chunks `c0000`, `c0001`, ... in emission order.
pub fn assign_chunk_ids(chunks: Vec<DraftChunk>) -> Result<Vec<Chunk>, ChunkError> {
    if chunks.len() > MAX_CHUNKS_PER_DOC {
        return Err(ChunkError::Overflow {
            doc_id: chunks[0].doc_id.clone(),
        });
    }
    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(i, d)| Chunk {
            chunk_id: format!("c{i:04}"),
            doc_id: d.doc_id,
            page_start: d.page_start,
            page_end: d.page_end,
            section_title: d.section_title,
            text: d.text,
            char_len: d.char_len,
        })
        .collect())
}
