//! Unit-normalized text embeddings.
//!
//! Two providers sit behind the [`Embedder`] trait: a remote service
//! reached over `POST <base_url>/embed`, and a deterministic hashed
//! bag-of-words mock used for offline runs and tests.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{endpoint, JsonClient, ProviderError};

pub const DEFAULT_EMBED_MODEL: &str = "BAAI/bge-large-en-v1.5";
pub const DEFAULT_MOCK_DIM: usize = 64;
/// Smallest dimension the mock accepts.
pub const MIN_MOCK_DIM: usize = 8;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("vector has (near-)zero norm")]
    ZeroVector,
    #[error("vector contains NaN or infinite values")]
    NonFinite,
    #[error("vector is empty")]
    Empty,
}

/// A finite vector with unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps values the caller asserts are already unit-norm. Index
    /// construction re-checks the norm.
    pub fn new_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Scales `raw` to unit length.
pub fn normalize(raw: &[f64]) -> Result<EmbeddingVector, VectorError> {
    if raw.is_empty() {
        return Err(VectorError::Empty);
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(VectorError::NonFinite);
    }
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < NORM_FLOOR {
        return Err(VectorError::ZeroVector);
    }
    Ok(EmbeddingVector(raw.iter().map(|x| x / norm).collect()))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Lowercased alphanumeric runs of `text`.
pub fn mock_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Hashed bag-of-words: each token adds 1 to bucket `fnv1a64(token) % dim`,
/// then the counts are normalized.
pub fn mock_embed(text: &str, dim: usize) -> Result<EmbeddingVector, ProviderError> {
    if dim < MIN_MOCK_DIM {
        return Err(ProviderError::Config(format!(
            "mock dimension must be at least {MIN_MOCK_DIM}, got {dim}"
        )));
    }
    let mut counts = vec![0.0f64; dim];
    for tok in mock_tokens(text) {
        counts[(fnv1a64(&tok) % dim as u64) as usize] += 1.0;
    }
    Ok(normalize(&counts)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    DeterministicMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub model_id: String,
    pub mock_dim: usize,
    pub timeout_ms: u64,
    pub max_batch: usize,
    /// Bearer token; falls back to `CITEGUARD_API_KEY`. Never persisted.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::DeterministicMock,
            base_url: None,
            model_id: DEFAULT_EMBED_MODEL.to_string(),
            mock_dim: DEFAULT_MOCK_DIM,
            timeout_ms: 30_000,
            max_batch: 32,
            api_key: None,
        }
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn remote(base_url: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            base_url: Some(base_url.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.kind == ProviderKind::Remote && self.base_url.as_deref().unwrap_or("").is_empty() {
            return Err(ProviderError::Config(
                "remote provider needs a base_url".into(),
            ));
        }
        if self.max_batch == 0 {
            return Err(ProviderError::Config("max_batch must be at least 1".into()));
        }
        if self.kind == ProviderKind::DeterministicMock && self.mock_dim < MIN_MOCK_DIM {
            return Err(ProviderError::Config(format!(
                "mock_dim must be at least {MIN_MOCK_DIM}"
            )));
        }
        Ok(())
    }
}

pub trait Embedder: Send + Sync {
    /// One normalized vector per input text, all of one dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn model_id(&self) -> &str;
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    model_id: String,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            model_id: format!("mock-fnv1a-bow-{dim}"),
        }
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts.iter().map(|t| mock_embed(t, self.dim)).collect()
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: JsonClient,
    url: String,
    model_id: String,
    max_batch: usize,
}

impl RemoteEmbedder {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let base = cfg
            .base_url
            .as_deref()
            .ok_or_else(|| ProviderError::Config("remote provider needs a base_url".into()))?;
        Ok(Self {
            client: JsonClient::new(cfg.timeout_ms, cfg.api_key.clone()),
            url: endpoint(base, "embed"),
            model_id: cfg.model_id.clone(),
            max_batch: cfg.max_batch,
        })
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let reply = self.client.post(
            &self.url,
            &json!({ "model": self.model_id, "texts": texts }),
        )?;
        #[derive(Deserialize)]
        struct EmbedReply {
            vectors: Vec<Vec<f64>>,
        }
        let reply: EmbedReply =
            serde_json::from_value(reply).map_err(|e| ProviderError::BadResponse {
                detail: format!("expected {{\"vectors\": [[number]]}}: {e}"),
            })?;
        if reply.vectors.len() != texts.len() {
            return Err(ProviderError::BadResponse {
                detail: format!(
                    "sent {} texts, received {} vectors",
                    texts.len(),
                    reply.vectors.len()
                ),
            });
        }
        Ok(reply.vectors)
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let mut out = Vec::with_capacity(texts.len());
        let mut dim = None;
        for batch in texts.chunks(self.max_batch) {
            for raw in self.embed_batch(batch)? {
                let expected = *dim.get_or_insert(raw.len());
                if raw.len() != expected {
                    return Err(ProviderError::DimensionMismatch {
                        expected,
                        got: raw.len(),
                    });
                }
                out.push(normalize(&raw).map_err(|e| ProviderError::BadResponse {
                    detail: format!("unusable vector: {e}"),
                })?);
            }
        }
        Ok(out)
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

pub fn make_embedder(cfg: &ProviderConfig) -> Result<Box<dyn Embedder>, ProviderError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Remote => Box::new(RemoteEmbedder::new(cfg)?),
        ProviderKind::DeterministicMock => Box::new(MockEmbedder::new(cfg.mock_dim)),
    })
}

/// Embeds `texts` with the provider described by `cfg`.
pub fn embed_texts(
    texts: &[String],
    cfg: &ProviderConfig,
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    if texts.is_empty() || texts.iter().any(|t| t.is_empty()) {
        return Err(ProviderError::Config("texts must be nonempty".into()));
    }
    make_embedder(cfg)?.embed(texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &EmbeddingVector) -> f64 {
        v.values().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn normalize_3_4() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(v.values(), &[0.6, 0.8]);
    }

    #[test]
    fn normalize_rejects_degenerate_input() {
        assert_eq!(normalize(&[0.0, 0.0, 0.0]), Err(VectorError::ZeroVector));
        assert_eq!(normalize(&[]), Err(VectorError::Empty));
        assert_eq!(normalize(&[1.0, f64::NAN]), Err(VectorError::NonFinite));
    }

    #[test]
    fn normalize_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let dim = rng.gen_range(1..300);
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let v = normalize(&raw).unwrap();
            assert!((norm(&v) - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64-bit test vectors
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn mock_is_deterministic() {
        let e = MockEmbedder::new(64);
        let a = e.embed(&["tax".into()]).unwrap();
        let b = e.embed(&["tax".into()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mock_empty_text_is_zero_vector() {
        assert!(matches!(
            mock_embed("", 64),
            Err(ProviderError::Vector(VectorError::ZeroVector))
        ));
        assert!(matches!(
            mock_embed("--- !!", 64),
            Err(ProviderError::Vector(VectorError::ZeroVector))
        ));
        assert!(matches!(mock_embed("a", 4), Err(ProviderError::Config(_))));
    }

    #[test]
    fn mock_ignores_case_and_punctuation() {
        assert_eq!(
            mock_embed("Standard Deduction, SINGLE filer!", 64).unwrap(),
            mock_embed("standard deduction single filer", 64).unwrap()
        );
    }

    #[test]
    fn mock_cosine_half_for_disjoint_buckets() {
        let dim = 64;
        let ba = fnv1a64("a") % dim as u64;
        let bb = fnv1a64("b") % dim as u64;
        let bc = fnv1a64("c") % dim as u64;
        assert!(ba != bb && ba != bc && bb != bc, "chosen tokens collide");
        let x = mock_embed("a b", dim).unwrap();
        let y = mock_embed("a c", dim).unwrap();
        assert!((x.dot(&y) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mock_lexical_overlap_drives_similarity() {
        let e = MockEmbedder::new(64);
        let v = e
            .embed(&[
                "standard deduction single filer".into(),
                "standard deduction amounts".into(),
                "capital gains holding period".into(),
            ])
            .unwrap();
        // hand count: first pair shares "standard" and "deduction"
        assert!(v[0].dot(&v[1]) > v[0].dot(&v[2]));
    }

    #[test]
    fn mock_batch_invariance() {
        let texts: Vec<String> = (0..10).map(|i| format!("line {i} of form 1040")).collect();
        let e = MockEmbedder::new(32);
        let all = e.embed(&texts).unwrap();
        let pieces: Vec<_> = texts.chunks(3).flat_map(|c| e.embed(c).unwrap()).collect();
        assert_eq!(all, pieces);
    }

    #[test]
    fn remote_requires_url() {
        let cfg = ProviderConfig {
            kind: ProviderKind::Remote,
            ..ProviderConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(embed_texts(&["x".into()], &cfg).is_err());
    }
}
