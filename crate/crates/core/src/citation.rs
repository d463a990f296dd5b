//! Canonical citation grammar.
//!
//! A citation pins a claim to one retrieved chunk:
//!
//! ```text
//! [doc:<doc_id>|p:<page_start>-<page_end>|c:<chunk_id>]
//! ```
//!
//! Identifiers are restricted to `[A-Za-z0-9._-]+` so the grammar never
//! needs escaping. The parser also accepts the short page form `|p:<n>|`,
//! which expands to the range `n-n`; the renderer always writes the range
//! form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Returns true when `s` is a nonempty identifier over `[A-Za-z0-9._-]`.
pub fn is_valid_id(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(is_id_byte)
}

fn is_id_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-')
}

/// A reference to a chunk and the pages it spans.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Citation {
    pub doc_id: String,
    pub page_start: u32,
    pub page_end: u32,
    pub chunk_id: String,
}

impl Citation {
    pub fn new(
        doc_id: impl Into<String>,
        page_start: u32,
        page_end: u32,
        chunk_id: impl Into<String>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            page_start,
            page_end,
            chunk_id: chunk_id.into(),
        }
    }

    /// Canonical surface form, always with an explicit page range.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Citation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[doc:{}|p:{}-{}|c:{}]",
            self.doc_id, self.page_start, self.page_end, self.chunk_id
        )
    }
}

impl FromStr for Citation {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_citation(s)
    }
}

/// Where and why a citation string failed to parse. `position` is a byte
/// offset into the input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid citation at byte {position}: expected {expected}")]
pub struct ParseError {
    pub position: usize,
    pub expected: &'static str,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, expected: &'static str) -> ParseError {
        ParseError {
            position: self.pos,
            expected,
        }
    }

    fn literal(&mut self, lit: &'static str) -> Result<(), ParseError> {
        let end = self.pos + lit.len();
        if self.bytes.get(self.pos..end) == Some(lit.as_bytes()) {
            self.pos = end;
            Ok(())
        } else {
            Err(self.err(lit))
        }
    }

    fn ident(&mut self, expected: &'static str) -> Result<&'a str, ParseError> {
        let start = self.pos;
        while self.bytes.get(self.pos).copied().is_some_and(is_id_byte) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(expected));
        }
        // id bytes are ASCII, so this slice is valid UTF-8
        Ok(std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii identifier"))
    }

    fn page(&mut self) -> Result<u32, ParseError> {
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("page number"));
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match digits.parse::<u32>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(ParseError {
                position: start,
                expected: "page number in 1..=4294967295",
            }),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }
}

/// Parses a complete citation token. The whole input must be exactly one
/// citation; surrounding whitespace is an error.
pub fn parse_citation(s: &str) -> Result<Citation, ParseError> {
    let mut cur = Cursor {
        bytes: s.as_bytes(),
        pos: 0,
    };
    cur.literal("[doc:")?;
    let doc_id = cur.ident("document identifier")?;
    cur.literal("|p:")?;
    let page_start = cur.page()?;
    let page_end = if cur.peek() == Some(b'-') {
        cur.pos += 1;
        let end_pos = cur.pos;
        let end = cur.page()?;
        if end < page_start {
            return Err(ParseError {
                position: end_pos,
                expected: "end page not less than start page",
            });
        }
        end
    } else {
        page_start
    };
    cur.literal("|c:")?;
    let chunk_id = cur.ident("chunk identifier")?;
    cur.literal("]")?;
    if cur.pos != s.len() {
        return Err(cur.err("end of input"));
    }
    Ok(Citation::new(doc_id, page_start, page_end, chunk_id))
}
