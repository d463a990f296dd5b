//! Loading extractor output and linearizing it into text segments.
//!
//! Input is the document interchange format (one JSON file per document).
//! Tables become one header-restating sentence per row, OCR text from
//! images gets its spatial descriptor appended, and every resulting segment
//! keeps its page number and active section title.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::citation::is_valid_id;
use crate::model::{ContentBlock, DocumentRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document file: {detail}")]
    MalformedFile { detail: String },
    #[error("page {page} appears more than once")]
    DuplicatePage { page: u32 },
    #[error("table on page {page}: row {row} has more cells than headers")]
    RowWiderThanHeader { page: u32, row: usize },
    #[error("document id {doc_id:?} is empty or uses characters outside [A-Za-z0-9._-]")]
    BadDocId { doc_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentOrigin {
    Text,
    Table,
    ImageText,
}

/// One linearized block with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatSegment {
    pub doc_id: String,
    pub page_number: u32,
    pub section_title: Option<String>,
    pub text: String,
    pub origin: SegmentOrigin,
}

/// Result of flattening a document. `dropped_blocks` counts blocks whose
/// content was empty or whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Flattened {
    pub segments: Vec<FlatSegment>,
    pub dropped_blocks: usize,
}

pub fn load_dif(path: &Path, lenient: bool) -> Result<DocumentRecord, IngestError> {
    let raw = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dif(&raw, lenient)
}

/// Parses and validates one interchange document. Short table rows are
/// padded with empty cells. Unknown keys are rejected unless `lenient`.
pub fn parse_dif(raw: &str, lenient: bool) -> Result<DocumentRecord, IngestError> {
    let malformed = |e: serde_json::Error| IngestError::MalformedFile {
        detail: e.to_string(),
    };
    let mut doc: DocumentRecord = if lenient {
        let mut value: Value = serde_json::from_str(raw).map_err(malformed)?;
        strip_unknown_keys(&mut value);
        serde_json::from_value(value).map_err(malformed)?
    } else {
        serde_json::from_str(raw).map_err(malformed)?
    };
    validate_and_pad(&mut doc)?;
    Ok(doc)
}

fn validate_and_pad(doc: &mut DocumentRecord) -> Result<(), IngestError> {
    if !is_valid_id(&doc.doc_id) {
        return Err(IngestError::BadDocId {
            doc_id: doc.doc_id.clone(),
        });
    }
    let mut seen = BTreeSet::new();
    let mut prev = 0u32;
    for page in &mut doc.pages {
        let n = page.page_number;
        if n == 0 {
            return Err(IngestError::MalformedFile {
                detail: "page_number must be at least 1".into(),
            });
        }
        if !seen.insert(n) {
            return Err(IngestError::DuplicatePage { page: n });
        }
        if n < prev {
            return Err(IngestError::MalformedFile {
                detail: format!("pages out of order: {n} follows {prev}"),
            });
        }
        prev = n;
        for block in &mut page.blocks {
            if let ContentBlock::Table { headers, rows, .. } = block {
                if headers.is_empty() {
                    return Err(IngestError::MalformedFile {
                        detail: format!("table on page {n} has no headers"),
                    });
                }
                for (i, row) in rows.iter_mut().enumerate() {
                    if row.len() > headers.len() {
                        return Err(IngestError::RowWiderThanHeader { page: n, row: i });
                    }
                    row.resize(headers.len(), String::new());
                }
            }
        }
    }
    Ok(())
}

const DOC_KEYS: &[&str] = &["doc_id", "authority", "doc_type", "title", "pages"];
const PAGE_KEYS: &[&str] = &["page_number", "blocks"];

fn retain_keys(obj: &mut Map<String, Value>, keys: &[&str]) {
    obj.retain(|k, _| keys.contains(&k.as_str()));
}

fn strip_unknown_keys(doc: &mut Value) {
    let Some(obj) = doc.as_object_mut() else {
        return;
    };
    retain_keys(obj, DOC_KEYS);
    let Some(pages) = obj.get_mut("pages").and_then(Value::as_array_mut) else {
        return;
    };
    for page in pages.iter_mut().filter_map(Value::as_object_mut) {
        retain_keys(page, PAGE_KEYS);
        let Some(blocks) = page.get_mut("blocks").and_then(Value::as_array_mut) else {
            continue;
        };
        for block in blocks.iter_mut().filter_map(Value::as_object_mut) {
            let keys: &[&str] = match block.get("kind").and_then(Value::as_str) {
                Some("text") => &["kind", "text", "section_title"],
                Some("table") => &["kind", "headers", "rows", "caption"],
                Some("image_text") => &["kind", "ocr_text", "descriptor"],
                // unknown kinds fail in deserialization
                _ => continue,
            };
            retain_keys(block, keys);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinearizeError {
    #[error("table has no headers")]
    EmptyHeaders,
}

const BLANK_CELL: &str = "(blank)";

/// Renders a table as an optional caption line followed by one sentence per
/// row: `<h1>: <v1>; <h2>: <v2>.`
pub fn linearize_table(
    headers: &[String],
    rows: &[Vec<String>],
    caption: Option<&str>,
) -> Result<String, LinearizeError> {
    if headers.is_empty() {
        return Err(LinearizeError::EmptyHeaders);
    }
    let mut lines = Vec::with_capacity(rows.len() + 1);
    if let Some(cap) = caption.filter(|c| !c.trim().is_empty()) {
        lines.push(cap.to_string());
    }
    for row in rows {
        let cells: Vec<String> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let v = row.get(i).map(String::as_str).unwrap_or("");
                let v = if v.trim().is_empty() { BLANK_CELL } else { v };
                format!("{h}: {v}")
            })
            .collect();
        lines.push(format!("{}.", cells.join("; ")));
    }
    Ok(lines.join("\n"))
}

/// Linearized text of one block, or `None` when it has no content.
pub fn linearize_block(block: &ContentBlock) -> Option<String> {
    let out = match block {
        ContentBlock::Text { text, .. } => text.clone(),
        ContentBlock::Table {
            headers,
            rows,
            caption,
        } => linearize_table(headers, rows, caption.as_deref()).ok()?,
        ContentBlock::ImageText {
            ocr_text,
            descriptor,
        } => {
            if ocr_text.trim().is_empty() {
                return None;
            }
            match descriptor.as_deref().filter(|d| !d.trim().is_empty()) {
                Some(d) => format!("{} ({d})", ocr_text.trim_end()),
                None => ocr_text.clone(),
            }
        }
    };
    (!out.trim().is_empty()).then_some(out)
}

/// Linearizes every block in reading order. Section titles carry forward
/// across blocks of the same page and reset at each page boundary.
pub fn flatten_document(doc: &DocumentRecord) -> Flattened {
    let mut out = Flattened::default();
    for page in &doc.pages {
        let mut section: Option<String> = None;
        for block in &page.blocks {
            if let ContentBlock::Text {
                section_title: Some(t),
                ..
            } = block
            {
                if !t.trim().is_empty() {
                    section = Some(t.clone());
                }
            }
            let origin = match block {
                ContentBlock::Text { .. } => SegmentOrigin::Text,
                ContentBlock::Table { .. } => SegmentOrigin::Table,
                ContentBlock::ImageText { .. } => SegmentOrigin::ImageText,
            };
            match linearize_block(block) {
                Some(text) => out.segments.push(FlatSegment {
                    doc_id: doc.doc_id.clone(),
                    page_number: page.page_number,
                    section_title: section.clone(),
                    text,
                    origin,
                }),
                None => out.dropped_blocks += 1,
            }
        }
    }
    out
}
