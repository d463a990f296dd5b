//! Citation-enforced, abstention-aware question answering over regulatory
//! document corpora.
//!
//! The pipeline runs in stages, one module each:
//!
//! - [`ingestion`] loads extractor output and linearizes tables and OCR text;
//! - [`chunking`] cuts documents into provenance-stamped chunks;
//! - [`embedding`] turns text into unit vectors (remote service or mock);
//! - [`index`] is an exact flat inner-product index with binary persistence;
//! - [`retrieval`] retrieves evidence and decides whether to abstain;
//! - [`generation`] prompts the generator and enforces paragraph citations;
//! - [`evaluation`] runs query sets and computes report metrics.
//!
//! [`store`] ties the stages to an on-disk store and [`pipeline`] answers
//! single queries over it.

pub mod chunking;
pub mod citation;
pub mod embedding;
pub mod evaluation;
pub mod generation;
pub mod http;
pub mod index;
pub mod ingestion;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod store;
pub mod stub;

pub use citation::{parse_citation, Citation, ParseError};
pub use model::{
    AbstainReason, AnswerParagraph, Chunk, ContentBlock, DocumentRecord, PageRecord, ScoredChunk,
    SystemResponse,
};

/// Schema tag carried by every persisted JSON artifact.
pub const SCHEMA: &str = "citeguard/v1";
