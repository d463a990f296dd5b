//! Query-set runs, automatic metrics, human-label ingestion and reports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::revalidate_response;
use crate::io::{atomic_write, read_jsonl, to_jsonl, JsonlError};
use crate::model::SystemResponse;
use crate::pipeline::Pipeline;
use crate::retrieval::RetrievalConfig;
use crate::SCHEMA;

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported schema {found:?}")]
    Schema { path: PathBuf, found: String },
    #[error("duplicate query_id {0}")]
    DuplicateQueryId(String),
    #[error("no records to evaluate")]
    NoRecords,
    #[error("label for {query_id} is missing {field}")]
    MissingLabel {
        query_id: String,
        field: &'static str,
    },
    #[error("label refers to unknown query_id {0}")]
    UnknownQueryId(String),
    #[error("invalid label for {query_id}: {reason}")]
    InvalidLabel { query_id: String, reason: String },
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub query_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jurisdiction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl QueryRecord {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            schema: None,
            query_id: query_id.into(),
            text: text.into(),
            jurisdiction: None,
            category: None,
        }
    }
}

/// Per-query trace. Exactly one of `response` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema: String,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<SystemResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Absent when nothing was retrieved.
    pub top1_score: Option<f64>,
    /// Generator calls made; 0 when abstained before generation.
    pub attempts_used: u32,
    /// Citation validity of an answered response, checked at run time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_valid: Option<bool>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanLabel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citation_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsupported_claim: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstention_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helpfulness: Option<u8>,
}

impl HumanLabel {
    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            schema: None,
            query_id: query_id.into(),
            citation_correct: None,
            unsupported_claim: None,
            abstention_correct: None,
            helpfulness: None,
        }
    }
}

fn check_schema(path: &Path, schema: Option<&str>) -> Result<(), EvalError> {
    match schema {
        Some(s) if s != SCHEMA => Err(EvalError::Schema {
            path: path.to_path_buf(),
            found: s.to_string(),
        }),
        _ => Ok(()),
    }
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), EvalError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(EvalError::DuplicateQueryId(id.to_string()));
        }
    }
    Ok(())
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>, EvalError> {
    let queries: Vec<QueryRecord> = read_jsonl(path)?;
    for q in &queries {
        check_schema(path, q.schema.as_deref())?;
    }
    check_unique(queries.iter().map(|q| q.query_id.as_str()))?;
    Ok(queries)
}

pub fn load_labels(path: &Path) -> Result<Vec<HumanLabel>, EvalError> {
    let labels: Vec<HumanLabel> = read_jsonl(path)?;
    for l in &labels {
        check_schema(path, l.schema.as_deref())?;
    }
    check_unique(labels.iter().map(|l| l.query_id.as_str()))?;
    Ok(labels)
}

pub fn load_records(path: &Path) -> Result<Vec<RunRecord>, EvalError> {
    let records: Vec<RunRecord> = read_jsonl(path)?;
    for r in &records {
        check_schema(path, Some(&r.schema))?;
    }
    check_unique(records.iter().map(|r| r.query_id.as_str()))?;
    Ok(records)
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<(), EvalError> {
    let body = to_jsonl(records).expect("records serialize");
    atomic_write(path, body.as_bytes()).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    atomic_write(path, report.to_json().as_bytes()).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Queries answered concurrently.
    pub parallelism: usize,
    /// Record wall-clock time per query. Off by default so that repeated
    /// runs produce identical records.
    pub record_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            record_timing: false,
        }
    }
}

fn run_one(q: &QueryRecord, pipeline: &Pipeline, cfg: &RetrievalConfig, timed: bool) -> RunRecord {
    let started = Instant::now();
    let result = pipeline.answer(&q.text, cfg);
    let wall_ms = if timed {
        started.elapsed().as_millis() as u64
    } else {
        0
    };
    let mut record = RunRecord {
        schema: SCHEMA.to_string(),
        query_id: q.query_id.clone(),
        response: None,
        error: None,
        top1_score: None,
        attempts_used: 0,
        format_valid: None,
        wall_ms,
    };
    match result {
        Ok(out) => {
            record.format_valid = out
                .response
                .is_answered()
                .then(|| revalidate_response(&out.response));
            record.top1_score = out.top1;
            record.attempts_used = out.generator_calls;
            record.response = Some(out.response);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Answers every query, one record per query in input order. A failing
/// query is recorded with its error and does not stop the batch.
pub fn run_queries(
    queries: &[QueryRecord],
    pipeline: &Pipeline,
    cfg: &RetrievalConfig,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        queries
            .par_iter()
            .map(|q| run_one(q, pipeline, cfg, opts.record_timing))
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1Stats {
    pub n: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Ten equal-width bins over [0, 1]; bin i holds [i/10, (i+1)/10), the
    /// last bin also holds 1.0. Out-of-range scores land in the end bins.
    pub histogram: [usize; HISTOGRAM_BINS],
}

pub fn histogram_bin(score: f64) -> usize {
    let b = (score * HISTOGRAM_BINS as f64).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(HISTOGRAM_BINS - 1)
    }
}

pub fn top1_stats(scores: &[f64]) -> Option<Top1Stats> {
    let mut s: Vec<f64> = scores.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return None;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    let mut histogram = [0; HISTOGRAM_BINS];
    for &x in &s {
        histogram[histogram_bin(x)] += 1;
    }
    Some(Top1Stats {
        n,
        min: s[0],
        median,
        max: s[n - 1],
        histogram,
    })
}

/// Metrics computed from run records alone.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoMetrics {
    pub n_queries: usize,
    pub n_answered: usize,
    pub n_abstained: usize,
    pub n_errors: usize,
    pub abstention_rate: f64,
    pub format_compliance_rate: Option<f64>,
    pub replay_consistent: bool,
    pub top1_stats: Option<Top1Stats>,
}

pub fn auto_metrics(records: &[RunRecord]) -> Result<AutoMetrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut n_answered = 0;
    let mut n_abstained = 0;
    let mut compliant = 0;
    let mut replay_consistent = true;
    for r in records {
        match &r.response {
            Some(resp) if resp.is_answered() => {
                n_answered += 1;
                let ok = revalidate_response(resp);
                if ok {
                    compliant += 1;
                }
                if r.format_valid.is_some_and(|live| live != ok) {
                    replay_consistent = false;
                }
            }
            Some(_) => n_abstained += 1,
            None => {}
        }
    }
    let scores: Vec<f64> = records.iter().filter_map(|r| r.top1_score).collect();
    Ok(AutoMetrics {
        n_queries: records.len(),
        n_answered,
        n_abstained,
        n_errors: records.len() - n_answered - n_abstained,
        abstention_rate: n_abstained as f64 / records.len() as f64,
        format_compliance_rate: (n_answered > 0).then(|| compliant as f64 / n_answered as f64),
        replay_consistent,
        top1_stats: top1_stats(&scores),
    })
}

/// Metrics derived from human labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelMetrics {
    pub n_answered_labeled: usize,
    pub n_abstained_labeled: usize,
    pub citation_support_rate: Option<f64>,
    pub hallucination_rate: Option<f64>,
    pub abstention_accuracy: Option<f64>,
    pub mean_helpfulness: Option<f64>,
}

fn required(
    label: &HumanLabel,
    value: Option<bool>,
    field: &'static str,
) -> Result<bool, EvalError> {
    value.ok_or_else(|| EvalError::MissingLabel {
        query_id: label.query_id.clone(),
        field,
    })
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Folds labels into rates. Records without a label are not counted; each
/// rate is absent when its denominator is zero.
pub fn label_metrics(
    records: &[RunRecord],
    labels: &[HumanLabel],
) -> Result<LabelMetrics, EvalError> {
    let by_id: HashMap<&str, &RunRecord> =
        records.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut n_answered = 0;
    let mut n_abstained = 0;
    let mut supported = 0;
    let mut unsupported = 0;
    let mut abstain_ok = 0;
    let mut helpful = Vec::new();
    for label in labels {
        let record = by_id
            .get(label.query_id.as_str())
            .ok_or_else(|| EvalError::UnknownQueryId(label.query_id.clone()))?;
        let invalid = |reason: &str| EvalError::InvalidLabel {
            query_id: label.query_id.clone(),
            reason: reason.to_string(),
        };
        let response = record
            .response
            .as_ref()
            .ok_or_else(|| invalid("the query failed and has no response to label"))?;
        if let Some(h) = label.helpfulness {
            if !(1..=5).contains(&h) {
                return Err(invalid("helpfulness must be between 1 and 5"));
            }
        }
        if response.is_answered() {
            let cited = required(label, label.citation_correct, "citation_correct")?;
            let claim = required(label, label.unsupported_claim, "unsupported_claim")?;
            if label.abstention_correct.is_some() {
                return Err(invalid("abstention_correct given for an answered query"));
            }
            n_answered += 1;
            supported += usize::from(cited);
            unsupported += usize::from(claim);
            if let Some(h) = label.helpfulness {
                helpful.push(f64::from(h));
            }
        } else {
            let correct = required(label, label.abstention_correct, "abstention_correct")?;
            if label.citation_correct.is_some() || label.unsupported_claim.is_some() {
                return Err(invalid("answer labels given for an abstained query"));
            }
            if label.helpfulness.is_some() {
                return Err(invalid("helpfulness given for an abstained query"));
            }
            n_abstained += 1;
            abstain_ok += usize::from(correct);
        }
    }
    Ok(LabelMetrics {
        n_answered_labeled: n_answered,
        n_abstained_labeled: n_abstained,
        citation_support_rate: ratio(supported, n_answered),
        hallucination_rate: ratio(unsupported, n_answered),
        abstention_accuracy: ratio(abstain_ok, n_abstained),
        mean_helpfulness: (!helpful.is_empty())
            .then(|| helpful.iter().sum::<f64>() / helpful.len() as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub n_queries: usize,
    pub n_answered: usize,
    pub n_abstained: usize,
    pub n_errors: usize,
    pub abstention_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_compliance_rate: Option<f64>,
    pub replay_consistent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1_stats: Option<Top1Stats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_answered_labeled: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_abstained_labeled: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citation_support_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hallucination_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstention_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_helpfulness: Option<f64>,
    /// One-decimal renderings of the rates above.
    pub display: BTreeMap<String, String>,
}

pub fn render_percent(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}

pub fn render_helpfulness(mean: f64) -> String {
    format!("{mean:.1} / 5.0")
}

/// Full report. `labels` of `None` leaves every label-derived field absent.
pub fn report_metrics(
    records: &[RunRecord],
    labels: Option<&[HumanLabel]>,
) -> Result<EvalReport, EvalError> {
    let auto = auto_metrics(records)?;
    let lm = labels.map(|l| label_metrics(records, l)).transpose()?;
    let lm_ref = lm.as_ref();
    let mut report = EvalReport {
        schema: SCHEMA.to_string(),
        n_queries: auto.n_queries,
        n_answered: auto.n_answered,
        n_abstained: auto.n_abstained,
        n_errors: auto.n_errors,
        abstention_rate: auto.abstention_rate,
        format_compliance_rate: auto.format_compliance_rate,
        replay_consistent: auto.replay_consistent,
        top1_stats: auto.top1_stats,
        n_answered_labeled: lm_ref.map(|m| m.n_answered_labeled),
        n_abstained_labeled: lm_ref.map(|m| m.n_abstained_labeled),
        citation_support_rate: lm_ref.and_then(|m| m.citation_support_rate),
        hallucination_rate: lm_ref.and_then(|m| m.hallucination_rate),
        abstention_accuracy: lm_ref.and_then(|m| m.abstention_accuracy),
        mean_helpfulness: lm_ref.and_then(|m| m.mean_helpfulness),
        display: BTreeMap::new(),
    };
    report.display = report.rendered_rows().into_iter().collect();
    Ok(report)
}

impl EvalReport {
    fn rendered_rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![(
            "abstention_rate".to_string(),
            render_percent(self.abstention_rate),
        )];
        let rates = [
            ("format_compliance_rate", self.format_compliance_rate),
            ("citation_support_rate", self.citation_support_rate),
            ("hallucination_rate", self.hallucination_rate),
            ("abstention_accuracy", self.abstention_accuracy),
        ];
        for (name, value) in rates {
            if let Some(v) = value {
                rows.push((name.to_string(), render_percent(v)));
            }
        }
        if let Some(h) = self.mean_helpfulness {
            rows.push(("mean_helpfulness".to_string(), render_helpfulness(h)));
        }
        rows
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text table for terminals.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("Queries".into(), self.n_queries.to_string()),
            ("Answered".into(), self.n_answered.to_string()),
            ("Abstained".into(), self.n_abstained.to_string()),
        ];
        if self.n_errors > 0 {
            rows.push(("Errors".into(), self.n_errors.to_string()));
        }
        fn label(name: &str) -> &str {
            match name {
                "abstention_rate" => "Abstention rate",
                "format_compliance_rate" => "Format compliance",
                "citation_support_rate" => "Citation support",
                "hallucination_rate" => "Hallucination rate",
                "abstention_accuracy" => "Abstention accuracy",
                "mean_helpfulness" => "Helpfulness",
                other => other,
            }
        }
        for (name, value) in self.rendered_rows() {
            rows.push((label(&name).to_string(), value));
        }
        if let Some(t) = &self.top1_stats {
            rows.push((
                "Top-1 min / median / max".into(),
                format!("{:.3} / {:.3} / {:.3}", t.min, t.median, t.max),
            ));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::citation::Citation;
    use crate::model::{AbstainReason, AnswerParagraph, Chunk, ScoredChunk};

    fn chunk() -> Chunk {
        Chunk {
            chunk_id: "c0000".into(),
            doc_id: "d".into(),
            page_start: 1,
            page_end: 1,
            section_title: None,
            text: "text".into(),
            char_len: 4,
        }
    }

    fn answered(id: &str, top1: f64) -> RunRecord {
        let c = chunk();
        RunRecord {
            schema: SCHEMA.into(),
            query_id: id.into(),
            response: Some(SystemResponse::Answered {
                paragraphs: vec![AnswerParagraph {
                    text: "Claim [doc:d|p:1-1|c:c0000]".into(),
                    citations: vec![c.citation()],
                }],
                evidence: vec![ScoredChunk {
                    chunk: c,
                    score: top1,
                }],
                top1_score: top1,
                attempts_used: 1,
            }),
            error: None,
            top1_score: Some(top1),
            attempts_used: 1,
            format_valid: Some(true),
            wall_ms: 0,
        }
    }

    fn abstained(id: &str, top1: Option<f64>) -> RunRecord {
        RunRecord {
            schema: SCHEMA.into(),
            query_id: id.into(),
            response: Some(SystemResponse::Abstained {
                reason: AbstainReason::LowSimilarity,
                message: "Insufficient document support for this question.".into(),
                partial_evidence: vec![],
            }),
            error: None,
            top1_score: top1,
            attempts_used: 0,
            format_valid: None,
            wall_ms: 0,
        }
    }

    #[test]
    fn abstention_rate_eight_two() {
        let mut records: Vec<_> = (0..8).map(|i| answered(&format!("a{i}"), 0.8)).collect();
        records.extend((0..2).map(|i| abstained(&format!("b{i}"), Some(0.3))));
        let m = auto_metrics(&records).unwrap();
        assert_eq!(m.abstention_rate, 0.2);
        assert_eq!(m.format_compliance_rate, Some(1.0));
        assert!(m.replay_consistent);
    }

    #[test]
    fn tampered_answer_breaks_compliance_and_replay() {
        let mut r = answered("a", 0.9);
        if let Some(SystemResponse::Answered { paragraphs, .. }) = &mut r.response {
            paragraphs[0].citations = vec![Citation {
                doc_id: "other".into(),
                page_start: 1,
                page_end: 1,
                chunk_id: "c0000".into(),
            }];
        }
        let m = auto_metrics(&[r]).unwrap();
        assert_eq!(m.format_compliance_rate, Some(0.0));
        assert!(!m.replay_consistent);
    }

    #[test]
    fn histogram_matches_hand_binning() {
        let scores = [0.0, 0.05, 0.1, 0.55, 0.56, 0.999, 1.0, -0.2, 0.3];
        // bins by hand: 0.0,0.05,-0.2 -> 0; 0.1 -> 1; 0.3 -> 3; 0.55,0.56 -> 5;
        // 0.999, 1.0 -> 9
        let expected = [3, 1, 0, 1, 0, 2, 0, 0, 0, 2];
        let t = top1_stats(&scores).unwrap();
        assert_eq!(t.histogram, expected);
        assert_eq!(t.min, -0.2);
        assert_eq!(t.max, 1.0);
        assert_eq!(t.median, 0.3);
        assert_eq!(top1_stats(&[0.2, 0.4]).unwrap().median, 0.30000000000000004);
        assert!(top1_stats(&[]).is_none());
    }

    #[test]
    fn missing_scores_are_skipped() {
        let records = [abstained("x", None), answered("y", 0.7)];
        let t = auto_metrics(&records).unwrap().top1_stats.unwrap();
        assert_eq!(t.n, 1);
    }

    #[test]
    fn table_arithmetic_renders_one_decimal() {
        let records: Vec<_> = (0..55).map(|i| answered(&format!("q{i}"), 0.8)).collect();
        let labels: Vec<_> = (0..55)
            .map(|i| HumanLabel {
                citation_correct: Some(i < 52),
                unsupported_claim: Some(i == 0),
                helpfulness: Some(if i < 11 { 5 } else { 4 }),
                ..HumanLabel::empty(format!("q{i}"))
            })
            .collect();
        let r = report_metrics(&records, Some(&labels)).unwrap();
        assert_eq!(r.display["citation_support_rate"], "94.5%");
        assert_eq!(r.display["hallucination_rate"], "1.8%");
        // (11*5 + 44*4) / 55 = 4.2
        assert_eq!(r.display["mean_helpfulness"], "4.2 / 5.0");
        assert_eq!(r.abstention_accuracy, None);
        assert!(!r.display.contains_key("abstention_accuracy"));
    }

    #[test]
    fn no_labels_means_no_label_fields() {
        let r = report_metrics(&[answered("a", 0.9)], None).unwrap();
        let json = r.to_json();
        for field in [
            "citation_support_rate",
            "hallucination_rate",
            "abstention_accuracy",
            "mean_helpfulness",
        ] {
            assert!(!json.contains(field), "{field} present");
        }
    }

    #[test]
    fn label_errors() {
        let records = [answered("a", 0.9), abstained("b", Some(0.2))];
        let missing = [HumanLabel {
            citation_correct: Some(true),
            ..HumanLabel::empty("a")
        }];
        assert!(matches!(
            label_metrics(&records, &missing),
            Err(EvalError::MissingLabel {
                field: "unsupported_claim",
                ..
            })
        ));
        let abst = [HumanLabel::empty("b")];
        assert!(matches!(
            label_metrics(&records, &abst),
            Err(EvalError::MissingLabel {
                field: "abstention_correct",
                ..
            })
        ));
        let unknown = [HumanLabel::empty("zzz")];
        assert!(matches!(
            label_metrics(&records, &unknown),
            Err(EvalError::UnknownQueryId(_))
        ));
        let helpful_abstain = [HumanLabel {
            abstention_correct: Some(true),
            helpfulness: Some(3),
            ..HumanLabel::empty("b")
        }];
        assert!(matches!(
            label_metrics(&records, &helpful_abstain),
            Err(EvalError::InvalidLabel { .. })
        ));
        let out_of_range = [HumanLabel {
            citation_correct: Some(true),
            unsupported_claim: Some(false),
            helpfulness: Some(6),
            ..HumanLabel::empty("a")
        }];
        assert!(matches!(
            label_metrics(&records, &out_of_range),
            Err(EvalError::InvalidLabel { .. })
        ));
    }

    #[test]
    fn duplicate_query_ids_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        std::fs::write(
            &path,
            "{\"query_id\":\"q1\",\"text\":\"a\"}\n{\"query_id\":\"q1\",\"text\":\"b\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_queries(&path),
            Err(EvalError::DuplicateQueryId(_))
        ));
        std::fs::write(
            &path,
            "{\"schema\":\"other/v9\",\"query_id\":\"q1\",\"text\":\"a\"}\n",
        )
        .unwrap();
        assert!(matches!(load_queries(&path), Err(EvalError::Schema { .. })));
    }

    #[test]
    fn report_is_deterministic() {
        let records = [answered("a", 0.9), abstained("b", Some(0.2))];
        let labels = [HumanLabel {
            abstention_correct: Some(true),
            ..HumanLabel::empty("b")
        }];
        let a = report_metrics(&records, Some(&labels)).unwrap().to_json();
        let b = report_metrics(&records, Some(&labels)).unwrap().to_json();
        assert_eq!(a, b);
        assert!(report_metrics(&records, Some(&labels))
            .unwrap()
            .render_table()
            .contains("100.0%"));
    }
}
