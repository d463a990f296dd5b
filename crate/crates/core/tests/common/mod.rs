#![allow(dead_code)]

use std::fs;
use std::path::Path;

use citeguard_core::{ContentBlock, DocumentRecord, PageRecord};
use rand::seq::SliceRandom;
use rand::Rng;

pub const WORDS: &[&str] = &[
    "taxpayer",
    "income",
    "deduction",
    "credit",
    "filing",
    "status",
    "return",
    "schedule",
    "wages",
    "dependent",
    "exemption",
    "withholding",
    "estimated",
    "payment",
    "penalty",
    "interest",
    "refund",
    "resident",
    "nonresident",
    "adjusted",
    "gross",
    "qualified",
    "business",
    "expense",
    "property",
    "retirement",
    "contribution",
    "distribution",
    "threshold",
    "amount",
    "form",
    "line",
    "worksheet",
    "instructions",
    "spouse",
    "joint",
    "household",
    "head",
    "single",
    "married",
    "separately",
    "year",
    "quarter",
    "period",
];

pub fn sentence<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(6..18);
    let mut words: Vec<String> = (0..n)
        .map(|_| WORDS.choose(rng).unwrap().to_string())
        .collect();
    let first = &mut words[0];
    *first = first[..1].to_uppercase() + &first[1..];
    let mut s = words.join(" ");
    s.push(if rng.gen_bool(0.1) { '?' } else { '.' });
    s
}

/// Prose of roughly `chars` characters made of whole sentences.
pub fn prose<R: Rng>(rng: &mut R, chars: usize) -> String {
    let mut out = String::new();
    while out.len() < chars {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&sentence(rng));
    }
    out
}

pub fn text(text: impl Into<String>, section: Option<&str>) -> ContentBlock {
    ContentBlock::Text {
        text: text.into(),
        section_title: section.map(str::to_string),
    }
}

/// A mixed-content document: prose, tables and OCR blocks over several
/// pages with section titles that change from time to time.
pub fn synthetic_doc<R: Rng>(
    rng: &mut R,
    doc_id: &str,
    authority: &str,
    pages: u32,
    chars_per_page: usize,
) -> DocumentRecord {
    let mut section = 1;
    let pages = (1..=pages)
        .map(|page_number| {
            let mut blocks = Vec::new();
            let mut budget = chars_per_page;
            while budget > 0 {
                let roll: f64 = rng.gen();
                if roll < 0.15 {
                    section += 1;
                }
                let title = format!("Part {section}");
                let block = if roll < 0.75 {
                    let len = rng.gen_range(200..900).min(budget.max(200));
                    text(prose(rng, len), Some(&title))
                } else if roll < 0.9 {
                    let rows = (0..rng.gen_range(1..5))
                        .map(|r| {
                            vec![
                                format!("Line {r}"),
                                if rng.gen_bool(0.2) {
                                    String::new()
                                } else {
                                    format!("${}", rng.gen_range(10..99999))
                                },
                            ]
                        })
                        .collect();
                    ContentBlock::Table {
                        headers: vec!["Item".into(), "Amount".into()],
                        rows,
                        caption: rng.gen_bool(0.5).then(|| "Table of amounts".to_string()),
                    }
                } else {
                    ContentBlock::ImageText {
                        ocr_text: prose(rng, 120),
                        descriptor: rng.gen_bool(0.5).then(|| "scanned figure".to_string()),
                    }
                };
                let used = match &block {
                    ContentBlock::Text { text, .. } => text.len(),
                    ContentBlock::Table { rows, .. } => 30 * rows.len(),
                    ContentBlock::ImageText { ocr_text, .. } => ocr_text.len(),
                };
                budget = budget.saturating_sub(used.max(1));
                blocks.push(block);
            }
            PageRecord {
                page_number,
                blocks,
            }
        })
        .collect();
    DocumentRecord {
        doc_id: doc_id.into(),
        authority: authority.into(),
        doc_type: "publication".into(),
        title: format!("Document {doc_id}"),
        pages,
    }
}

pub fn write_docs(dir: &Path, docs: &[DocumentRecord]) {
    fs::create_dir_all(dir).unwrap();
    for d in docs {
        let json = serde_json::to_string_pretty(d).unwrap();
        fs::write(dir.join(format!("{}.json", d.doc_id)), json).unwrap();
    }
}
