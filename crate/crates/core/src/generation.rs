//! Evidence-only answer generation with enforced paragraph citations.
//!
//! Every paragraph of a generated answer must carry at least one citation
//! that parses and points at a chunk in the evidence given to the
//! generator, with a page range inside that chunk's pages. Answers that
//! fail are regenerated with a reinforcement suffix appended to the prompt;
//! after `max_attempts` failures the system abstains.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::citation::{parse_citation, Citation};
use crate::embedding::{ProviderConfig, ProviderKind};
use crate::http::{endpoint, JsonClient, ProviderError};
use crate::model::{AbstainReason, AnswerParagraph, ScoredChunk, SystemResponse};
use crate::retrieval::{
    compose_abstention, partial_evidence_lines, RetrievalOutcome, ABSTAIN_LEAD,
};

pub const DEFAULT_GEN_MODEL: &str = "meta-llama/Llama-3.2-3B-Instruct";

/// Appended to the prompt from the second attempt on. Changing this text
/// changes the version tag so reruns stay comparable.
pub const REINFORCEMENT_SUFFIX: &str = "REMINDER (citation-rules v1): a previous answer was \
rejected because a paragraph had a missing, malformed or unknown citation. End EVERY paragraph \
with one or more citations copied character for character from the evidence headers above. \
Cite only evidence shown above. Do not add facts that are not in the evidence.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub max_attempts: u32,
    pub max_tokens: u32,
    pub temperature: f64,
    pub reinforcement_suffix: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            max_tokens: 512,
            temperature: 0.0,
            reinforcement_suffix: REINFORCEMENT_SUFFIX.to_string(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.max_attempts == 0 {
            return Err(GenerationError::InvalidConfig(
                "max_attempts must be at least 1".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GenerationError::InvalidConfig(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("cannot build a prompt without evidence")]
    EmptyEvidence,
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

const EVIDENCE_OPEN: &str = "--- EVIDENCE ";
const EVIDENCE_CLOSE: &str = "--- END EVIDENCE ---";
const QUESTION_MARK: &str = "=== QUESTION ===";

const INSTRUCTIONS: &str = "\
You are a research assistant for tax and regulatory compliance analysts.
Answer the question using ONLY the evidence blocks below.
Rules:
1. Use only the provided evidence. Do not use prior knowledge, outside sources or assumptions.
2. Write short, clear paragraphs separated by one blank line.
3. End every paragraph with one or more citations copied exactly from the evidence headers, \
in the form [doc:<doc_id>|p:<first_page>-<last_page>|c:<chunk_id>].
4. Cite only the evidence blocks shown below.
5. If the evidence is partial or ambiguous, state the limitation explicitly instead of \
inferring missing details.";

/// Deterministic evidence-only prompt: instructions, one block per evidence
/// chunk headed by its citation (retrieval order), then the question.
pub fn build_prompt(query: &str, evidence: &[ScoredChunk]) -> Result<String, GenerationError> {
    if evidence.is_empty() {
        return Err(GenerationError::EmptyEvidence);
    }
    let mut p = String::with_capacity(
        1024 + evidence
            .iter()
            .map(|e| e.chunk.text.len() + 64)
            .sum::<usize>(),
    );
    p.push_str(INSTRUCTIONS);
    p.push_str("\n\n=== EVIDENCE ===\n");
    for e in evidence {
        p.push_str(EVIDENCE_OPEN);
        p.push_str(&e.chunk.citation().render());
        p.push_str(" ---\n");
        p.push_str(&e.chunk.text);
        p.push('\n');
        p.push_str(EVIDENCE_CLOSE);
        p.push('\n');
    }
    p.push('\n');
    p.push_str(QUESTION_MARK);
    p.push('\n');
    p.push_str(query.trim());
    p.push_str("\n\n=== ANSWER ===\n");
    Ok(p)
}

fn prompt_for_attempt(base: &str, attempt: u32, cfg: &GenConfig) -> String {
    if attempt <= 1 {
        base.to_string()
    } else {
        format!("{base}\n{}\n", cfg.reinforcement_suffix)
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str, cfg: &GenConfig) -> Result<String, ProviderError>;
}

/// Client for `POST <base_url>/generate`.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    client: JsonClient,
    url: String,
    model_id: String,
}

impl RemoteGenerator {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let base = cfg
            .base_url
            .as_deref()
            .ok_or_else(|| ProviderError::Config("remote generator needs a base_url".into()))?;
        Ok(Self {
            client: JsonClient::new(cfg.timeout_ms, cfg.api_key.clone()),
            url: endpoint(base, "generate"),
            model_id: cfg.model_id.clone(),
        })
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, prompt: &str, cfg: &GenConfig) -> Result<String, ProviderError> {
        let reply = self.client.post(
            &self.url,
            &json!({
                "model": self.model_id,
                "prompt": prompt,
                "max_tokens": cfg.max_tokens,
                "temperature": cfg.temperature,
            }),
        )?;
        reply
            .get("text")
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse {
                detail: "expected {\"text\": string}".into(),
            })
    }
}

/// Replays a fixed list of completions, one per call, and records the
/// prompts it was given.
#[derive(Debug, Default)]
pub struct ScriptedGenerator {
    script: Vec<String>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedGenerator {
    pub fn new<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Self {
        Self {
            script: script.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, prompt: &str, _cfg: &GenConfig) -> Result<String, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(prompt.to_string());
        self.script
            .get(n)
            .cloned()
            .ok_or(ProviderError::ScriptExhausted(n))
    }
}

/// Offline stand-in for a language model: answers with the opening
/// sentence of the top two evidence blocks, each cited.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveGenerator;

const EXTRACT_MAX_CHARS: usize = 240;

fn opening_sentence(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let collapsed = collapsed.replace(['[', ']'], "");
    let mut out = String::new();
    for (i, ch) in collapsed.chars().enumerate() {
        if i >= EXTRACT_MAX_CHARS {
            out.push('…');
            break;
        }
        out.push(ch);
        if matches!(ch, '.' | '?' | '!') && i >= 20 {
            break;
        }
    }
    out
}

/// Evidence blocks of a prompt produced by [`build_prompt`], as
/// `(citation string, text)`.
pub fn prompt_evidence(prompt: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in prompt.lines() {
        if line == QUESTION_MARK {
            break;
        }
        if let Some((cite, body)) = current.as_mut() {
            if line == EVIDENCE_CLOSE {
                out.push((std::mem::take(cite), body.join("\n")));
                current = None;
            } else {
                body.push(line);
            }
        } else if let Some(rest) = line.strip_prefix(EVIDENCE_OPEN) {
            if let Some(cite) = rest.strip_suffix(" ---") {
                current = Some((cite.to_string(), Vec::new()));
            }
        }
    }
    out
}

impl ExtractiveGenerator {
    pub fn answer(prompt: &str) -> String {
        let paragraphs: Vec<String> = prompt_evidence(prompt)
            .into_iter()
            .take(2)
            .filter_map(|(cite, text)| {
                let s = opening_sentence(&text);
                (!s.is_empty()).then(|| format!("{s} {cite}"))
            })
            .collect();
        if paragraphs.is_empty() {
            "The provided evidence does not answer this question.".to_string()
        } else {
            paragraphs.join("\n\n")
        }
    }
}

impl Generator for ExtractiveGenerator {
    fn generate(&self, prompt: &str, _cfg: &GenConfig) -> Result<String, ProviderError> {
        Ok(Self::answer(prompt))
    }
}

pub fn make_generator(cfg: &ProviderConfig) -> Result<Box<dyn Generator>, ProviderError> {
    Ok(match cfg.kind {
        ProviderKind::Remote => Box::new(RemoteGenerator::new(cfg)?),
        ProviderKind::DeterministicMock => Box::new(ExtractiveGenerator),
    })
}

/// One generation request through the provider described by `provider`.
pub fn call_generator(
    prompt: &str,
    provider: &ProviderConfig,
    cfg: &GenConfig,
) -> Result<String, ProviderError> {
    make_generator(provider)?.generate(prompt, cfg)
}

fn citation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[doc:[^\[\]\n]*\]").expect("valid regex"))
}

/// Every `[doc:...]`-shaped token in `text`, well-formed or not.
pub fn extract_citation_strings(text: &str) -> Vec<String> {
    citation_regex()
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawParagraph {
    pub text: String,
    pub citation_strings: Vec<String>,
}

/// Splits on runs of blank lines. A paragraph is a maximal run of
/// non-blank lines.
pub fn parse_paragraphs(raw: &str) -> Vec<RawParagraph> {
    let mut out = Vec::new();
    let mut lines: Vec<&str> = Vec::new();
    let mut flush = |lines: &mut Vec<&str>| {
        if !lines.is_empty() {
            let text = lines.join("\n").trim().to_string();
            out.push(RawParagraph {
                citation_strings: extract_citation_strings(&text),
                text,
            });
            lines.clear();
        }
    };
    for line in raw.lines() {
        if line.trim().is_empty() {
            flush(&mut lines);
        } else {
            lines.push(line);
        }
    }
    flush(&mut lines);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// The answer contained no paragraphs at all.
    EmptyAnswer,
    NoCitation,
    UnparsableCitation,
    CitationNotInEvidence,
    PageOutOfChunkRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFailure {
    pub paragraph_index: usize,
    pub reason: FailureReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationResult {
    Valid,
    Invalid { failures: Vec<ValidationFailure> },
}

impl ValidationResult {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidationResult::Valid)
    }
}

/// Structural citation check of an answer against the evidence it was
/// generated from. Content quality is not judged.
pub fn validate_answer(paragraphs: &[RawParagraph], evidence: &[ScoredChunk]) -> ValidationResult {
    let pages: HashMap<(&str, &str), (u32, u32)> = evidence
        .iter()
        .map(|e| {
            (
                (e.chunk.doc_id.as_str(), e.chunk.chunk_id.as_str()),
                (e.chunk.page_start, e.chunk.page_end),
            )
        })
        .collect();
    let mut failures = Vec::new();
    if paragraphs.is_empty() {
        failures.push(ValidationFailure {
            paragraph_index: 0,
            reason: FailureReason::EmptyAnswer,
        });
    }
    for (i, para) in paragraphs.iter().enumerate() {
        let mut fail = |reason| {
            failures.push(ValidationFailure {
                paragraph_index: i,
                reason,
            })
        };
        if para.citation_strings.is_empty() {
            fail(FailureReason::NoCitation);
        }
        for s in &para.citation_strings {
            match parse_citation(s) {
                Err(_) => fail(FailureReason::UnparsableCitation),
                Ok(c) => match pages.get(&(c.doc_id.as_str(), c.chunk_id.as_str())) {
                    None => fail(FailureReason::CitationNotInEvidence),
                    Some(&(lo, hi)) if c.page_start < lo || c.page_end > hi => {
                        fail(FailureReason::PageOutOfChunkRange)
                    }
                    Some(_) => {}
                },
            }
        }
    }
    if failures.is_empty() {
        ValidationResult::Valid
    } else {
        ValidationResult::Invalid { failures }
    }
}

/// Re-checks a stored response. Abstentions are trivially consistent;
/// answers must still pass [`validate_answer`] against their own evidence
/// and their parsed citations must match the tokens in the text.
pub fn revalidate_response(response: &SystemResponse) -> bool {
    match response {
        SystemResponse::Abstained { .. } => true,
        SystemResponse::Answered {
            paragraphs,
            evidence,
            ..
        } => {
            let raw: Vec<RawParagraph> = paragraphs
                .iter()
                .map(|p| RawParagraph {
                    citation_strings: extract_citation_strings(&p.text),
                    text: p.text.clone(),
                })
                .collect();
            let consistent = paragraphs.iter().zip(&raw).all(|(p, r)| {
                r.citation_strings
                    .iter()
                    .map(|s| parse_citation(s).ok())
                    .collect::<Option<Vec<Citation>>>()
                    .is_some_and(|parsed| parsed == p.citations)
            });
            consistent && validate_answer(&raw, evidence).is_valid()
        }
    }
}

/// The response for one query plus how many times the generator ran.
#[derive(Debug, Clone, PartialEq)]
pub struct Enforced {
    pub response: SystemResponse,
    pub generator_calls: u32,
}

fn failed_grounding(evidence: &[ScoredChunk], detail: String) -> SystemResponse {
    let kept: Vec<ScoredChunk> = evidence.iter().take(3).cloned().collect();
    SystemResponse::Abstained {
        reason: AbstainReason::CitationValidationFailed,
        message: format!(
            "{ABSTAIN_LEAD}: {detail}, so no answer is given.\n\
             Retrieved passages that were considered:\n{}",
            partial_evidence_lines(&kept)
        ),
        partial_evidence: kept,
    }
}

/// Answers a query whose retrieval outcome is known. Abstaining outcomes
/// never reach the generator; `Proceed` runs the generate, parse, validate
/// loop for up to `cfg.max_attempts` attempts.
pub fn answer_with_enforcement(
    query: &str,
    outcome: &RetrievalOutcome,
    generator: &dyn Generator,
    cfg: &GenConfig,
) -> Result<Enforced, GenerationError> {
    cfg.validate()?;
    let (evidence, top1) = match outcome {
        RetrievalOutcome::Proceed { evidence, top1 } if !evidence.is_empty() => (evidence, *top1),
        RetrievalOutcome::Proceed { .. } => return Err(GenerationError::EmptyEvidence),
        other => {
            return Ok(Enforced {
                response: compose_abstention(other).expect("abstaining outcome"),
                generator_calls: 0,
            })
        }
    };
    let base = build_prompt(query, evidence)?;
    for attempt in 1..=cfg.max_attempts {
        let prompt = prompt_for_attempt(&base, attempt, cfg);
        let raw = match generator.generate(&prompt, cfg) {
            Ok(raw) => raw,
            Err(e) => {
                return Ok(Enforced {
                    response: failed_grounding(
                        evidence,
                        format!(
                        "the answer generator failed ({e}) and the answer could not be grounded"
                    ),
                    ),
                    generator_calls: attempt,
                })
            }
        };
        let paragraphs = parse_paragraphs(&raw);
        if validate_answer(&paragraphs, evidence).is_valid() {
            let paragraphs = paragraphs
                .into_iter()
                .map(|p| AnswerParagraph {
                    citations: p
                        .citation_strings
                        .iter()
                        .map(|s| parse_citation(s).expect("validated citation"))
                        .collect(),
                    text: p.text,
                })
                .collect();
            return Ok(Enforced {
                response: SystemResponse::Answered {
                    paragraphs,
                    evidence: evidence.clone(),
                    top1_score: top1,
                    attempts_used: attempt,
                },
                generator_calls: attempt,
            });
        }
    }
    Ok(Enforced {
        response: failed_grounding(
            evidence,
            format!(
                "the answer could not be grounded in the retrieved evidence with valid \
                 paragraph citations after {} attempts",
                cfg.max_attempts
            ),
        ),
        generator_calls: cfg.max_attempts,
    })
}
