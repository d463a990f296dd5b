//! On-disk store: validated documents, chunks, index and manifest.
//!
//! ```text
//! <root>/docs/<doc_id>.json   validated interchange documents
//! <root>/chunks.jsonl         one chunk per line, ordered by (doc_id, chunk_id)
//! <root>/index.bin            vector matrix (see `index`)
//! <root>/rows.jsonl           row metadata sidecar
//! <root>/store.json           manifest
//! ```
//!
//! Ingest builds a complete store in a sibling temporary directory and
//! swaps it in only on success. Indexing writes each file through a
//! temporary file and rename, the manifest last.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::{assign_chunk_ids, chunk_document, ChunkError, ChunkingConfig};
use crate::embedding::{make_embedder, EmbeddingVector, ProviderConfig, ProviderKind};
use crate::http::ProviderError;
use crate::index::{IndexError, RowMeta, VectorIndex, INDEX_FILE, ROWS_FILE};
use crate::ingestion::{flatten_document, load_dif, IngestError};
use crate::io::{atomic_write, read_jsonl, to_jsonl, JsonlError};
use crate::model::{Chunk, DocumentRecord};
use crate::SCHEMA;

pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const MANIFEST_FILE: &str = "store.json";
pub const DOCS_DIR: &str = "docs";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no documents found in {0}")]
    NoDocuments(PathBuf),
    #[error("{} document(s) failed to load:\n{}", .0.len(), format_diagnostics(.0))]
    Ingest(Vec<(PathBuf, IngestError)>),
    #[error("document id {0} appears in more than one input file")]
    DuplicateDocId(String),
    #[error(transparent)]
    Chunking(#[from] ChunkError),
    #[error("embedding dimension changed from {stored} to {new}; rerun with rebuild to replace the index")]
    RebuildRequired { stored: usize, new: usize },
    #[error("store has no chunks to index")]
    NothingToIndex,
    #[error("store at {0} has no index; run the index step first")]
    NotIndexed(PathBuf),
    #[error("store is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest: {0}")]
    Manifest(String),
}

fn format_diagnostics(items: &[(PathBuf, IngestError)]) -> String {
    items
        .iter()
        .map(|(p, e)| format!("  {}: {e}", p.display()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityCounts {
    pub docs: usize,
    pub chunks: usize,
}

/// Embedding provider and dimension the index was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingInfo {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub model_id: String,
    pub mock_dim: usize,
    pub dim: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub chunk_config: ChunkingConfig,
    pub docs: usize,
    pub chunks: usize,
    pub dropped_blocks: usize,
    pub authorities: BTreeMap<String, AuthorityCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingInfo>,
}

impl Manifest {
    /// Provider settings recorded at index time, for reuse at query time.
    pub fn provider_config(&self) -> Option<ProviderConfig> {
        self.embedding.as_ref().map(|e| ProviderConfig {
            kind: e.kind,
            base_url: e.base_url.clone(),
            model_id: e.model_id.clone(),
            mock_dim: e.mock_dim,
            ..ProviderConfig::default()
        })
    }
}

#[derive(Debug, Clone)]
pub struct StoreLayout {
    pub root: PathBuf,
}

impl StoreLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn docs_dir(&self) -> PathBuf {
        self.root.join(DOCS_DIR)
    }

    pub fn chunks(&self) -> PathBuf {
        self.root.join(CHUNKS_FILE)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn index(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    pub fn rows(&self) -> PathBuf {
        self.root.join(ROWS_FILE)
    }

    pub fn read_manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.manifest();
        let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Manifest =
            serde_json::from_str(&raw).map_err(|e| StoreError::Manifest(e.to_string()))?;
        if m.schema != SCHEMA {
            return Err(StoreError::Manifest(format!(
                "unsupported schema {:?}",
                m.schema
            )));
        }
        Ok(m)
    }

    fn write_manifest(&self, m: &Manifest) -> Result<(), StoreError> {
        let path = self.manifest();
        let mut json = serde_json::to_string_pretty(m).expect("manifest serializes");
        json.push('\n');
        atomic_write(&path, json.as_bytes()).map_err(io_err(&path))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub docs: usize,
    pub chunks: usize,
    pub dropped_blocks: usize,
    pub authorities: BTreeMap<String, AuthorityCounts>,
}

/// Loads documents, flattens and chunks them. Output is ordered by doc id
/// whatever order the inputs were processed in.
pub fn build_corpus(
    docs: Vec<DocumentRecord>,
    cfg: &ChunkingConfig,
) -> Result<(Vec<DocumentRecord>, Vec<Chunk>, usize), StoreError> {
    cfg.validate()?;
    let mut docs = docs;
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut seen = HashSet::new();
    for d in &docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(StoreError::DuplicateDocId(d.doc_id.clone()));
        }
    }
    let per_doc: Vec<(Vec<Chunk>, usize)> = docs
        .par_iter()
        .map(|d| {
            let flat = flatten_document(d);
            let drafts = chunk_document(&flat.segments, cfg)?;
            Ok((assign_chunk_ids(drafts)?, flat.dropped_blocks))
        })
        .collect::<Result<_, ChunkError>>()?;
    let dropped = per_doc.iter().map(|(_, d)| d).sum();
    let chunks = per_doc.into_iter().flat_map(|(c, _)| c).collect();
    Ok((docs, chunks, dropped))
}

fn input_files(input: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(io_err(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Builds a fresh store at `store` from every `*.json` interchange file in
/// `input`. On any failure the previous store, if any, is left untouched.
pub fn ingest_dir(
    input: &Path,
    store: &Path,
    lenient: bool,
    cfg: &ChunkingConfig,
) -> Result<IngestSummary, StoreError> {
    let files = input_files(input)?;
    if files.is_empty() {
        return Err(StoreError::NoDocuments(input.to_path_buf()));
    }
    let loaded: Vec<(PathBuf, Result<DocumentRecord, IngestError>)> = files
        .into_par_iter()
        .map(|p| {
            let r = load_dif(&p, lenient);
            (p, r)
        })
        .collect();
    let mut docs = Vec::with_capacity(loaded.len());
    let mut failures = Vec::new();
    for (p, r) in loaded {
        match r {
            Ok(d) => docs.push(d),
            Err(e) => failures.push((p, e)),
        }
    }
    if !failures.is_empty() {
        return Err(StoreError::Ingest(failures));
    }
    let (docs, chunks, dropped_blocks) = build_corpus(docs, cfg)?;

    let mut authorities: BTreeMap<String, AuthorityCounts> = BTreeMap::new();
    for d in &docs {
        authorities.entry(d.authority.clone()).or_default().docs += 1;
    }
    let authority_of: BTreeMap<&str, &str> = docs
        .iter()
        .map(|d| (d.doc_id.as_str(), d.authority.as_str()))
        .collect();
    for c in &chunks {
        let a = authority_of[c.doc_id.as_str()];
        authorities.get_mut(a).expect("authority counted").chunks += 1;
    }
    let manifest = Manifest {
        schema: SCHEMA.to_string(),
        chunk_config: *cfg,
        docs: docs.len(),
        chunks: chunks.len(),
        dropped_blocks,
        authorities: authorities.clone(),
        embedding: None,
    };

    let parent = match store.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".citeguard-ingest-")
        .tempdir_in(&parent)
        .map_err(io_err(&parent))?;
    let layout = StoreLayout::new(staging.path());
    let docs_dir = layout.docs_dir();
    fs::create_dir(&docs_dir).map_err(io_err(&docs_dir))?;
    for d in &docs {
        let path = docs_dir.join(format!("{}.json", d.doc_id));
        let mut json = serde_json::to_string_pretty(d).expect("document serializes");
        json.push('\n');
        fs::write(&path, json).map_err(io_err(&path))?;
    }
    let chunks_path = layout.chunks();
    fs::write(&chunks_path, to_jsonl(&chunks).expect("chunks serialize"))
        .map_err(io_err(&chunks_path))?;
    layout.write_manifest(&manifest)?;

    swap_into_place(staging, store)?;
    Ok(IngestSummary {
        docs: docs.len(),
        chunks: chunks.len(),
        dropped_blocks,
        authorities,
    })
}

fn swap_into_place(staging: tempfile::TempDir, store: &Path) -> Result<(), StoreError> {
    let staged = staging.keep();
    if store.exists() {
        let parent = staged.parent().expect("staging dir has a parent");
        let old = tempfile::Builder::new()
            .prefix(".citeguard-old-")
            .tempdir_in(parent)
            .map_err(io_err(parent))?;
        let old_path = old.path().join("store");
        fs::rename(store, &old_path).map_err(io_err(store))?;
        if let Err(source) = fs::rename(&staged, store) {
            // put the previous store back
            let _ = fs::rename(&old_path, store);
            let _ = fs::remove_dir_all(&staged);
            return Err(StoreError::Io {
                path: store.to_path_buf(),
                source,
            });
        }
        drop(old);
    } else {
        fs::rename(&staged, store).map_err(|source| {
            let _ = fs::remove_dir_all(&staged);
            StoreError::Io {
                path: store.to_path_buf(),
                source,
            }
        })?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexSummary {
    pub rows: usize,
    pub dim: usize,
    pub model_id: String,
}

/// Embeds every chunk and persists the index. Nothing is written if the
/// provider fails. A dimension change against an existing index is refused
/// unless `rebuild` is set.
pub fn index_store(
    store: &Path,
    provider: &ProviderConfig,
    rebuild: bool,
) -> Result<IndexSummary, StoreError> {
    let layout = StoreLayout::new(store);
    let mut manifest = layout.read_manifest()?;
    let chunks: Vec<Chunk> = read_jsonl(&layout.chunks())?;
    if chunks.len() != manifest.chunks {
        return Err(StoreError::Inconsistent(format!(
            "manifest lists {} chunks, {CHUNKS_FILE} has {}",
            manifest.chunks,
            chunks.len()
        )));
    }
    if chunks.is_empty() {
        return Err(StoreError::NothingToIndex);
    }
    let embedder = make_embedder(provider)?;
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors: Vec<EmbeddingVector> = embedder.embed(&texts)?;
    let dim = vectors[0].dim();
    if let Some(prev) = &manifest.embedding {
        if prev.dim != dim && !rebuild {
            return Err(StoreError::RebuildRequired {
                stored: prev.dim,
                new: dim,
            });
        }
    }
    let meta = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| RowMeta::for_chunk(i, c))
        .collect();
    let index = VectorIndex::build(&vectors, meta)?;
    index.save(store)?;
    manifest.embedding = Some(EmbeddingInfo {
        kind: provider.kind,
        base_url: provider.base_url.clone(),
        model_id: embedder.model_id().to_string(),
        mock_dim: provider.mock_dim,
        dim,
        rows: index.len(),
    });
    layout.write_manifest(&manifest)?;
    Ok(IndexSummary {
        rows: index.len(),
        dim,
        model_id: embedder.model_id().to_string(),
    })
}

/// A store read back from disk with its consistency checked.
#[derive(Debug, Clone)]
pub struct OpenStore {
    pub layout: StoreLayout,
    pub manifest: Manifest,
    pub chunks: Vec<Chunk>,
    pub index: Option<VectorIndex>,
}

impl OpenStore {
    pub fn open(store: &Path) -> Result<Self, StoreError> {
        let layout = StoreLayout::new(store);
        let manifest = layout.read_manifest()?;
        let chunks: Vec<Chunk> = read_jsonl(&layout.chunks())?;
        if chunks.len() != manifest.chunks {
            return Err(StoreError::Inconsistent(format!(
                "manifest lists {} chunks, {CHUNKS_FILE} has {}",
                manifest.chunks,
                chunks.len()
            )));
        }
        let index = match &manifest.embedding {
            None => None,
            Some(info) => {
                let ix = VectorIndex::load(store)?;
                if ix.dim() != info.dim || ix.len() != info.rows {
                    return Err(StoreError::Inconsistent(format!(
                        "manifest says {} rows of dim {}, index has {} of dim {}",
                        info.rows,
                        info.dim,
                        ix.len(),
                        ix.dim()
                    )));
                }
                Some(ix)
            }
        };
        Ok(Self {
            layout,
            manifest,
            chunks,
            index,
        })
    }

    pub fn require_index(&self) -> Result<&VectorIndex, StoreError> {
        self.index
            .as_ref()
            .ok_or_else(|| StoreError::NotIndexed(self.layout.root.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_doc(dir: &Path, id: &str, authority: &str, text: &str) {
        let doc = serde_json::json!({
            "doc_id": id, "authority": authority, "doc_type": "publication", "title": id,
            "pages": [{"page_number": 1, "blocks": [{"kind": "text", "text": text}]}]
        });
        fs::write(dir.join(format!("{id}.json")), doc.to_string()).unwrap();
    }

    #[test]
    fn ingest_index_open() {
        let tmp = tempfile::tempdir().unwrap();
        let input = tmp.path().join("in");
        fs::create_dir(&input).unwrap();
        write_doc(
            &input,
            "b-doc",
            "NY-Tax",
            "Residents of New York file IT-201.",
        );
        write_doc(
            &input,
            "a-doc",
            "IRS",
            &"Report wages on line 1. ".repeat(100),
        );
        let store = tmp.path().join("store");
        let s = ingest_dir(&input, &store, false, &ChunkingConfig::default()).unwrap();
        assert_eq!(s.docs, 2);
        assert_eq!(s.authorities["IRS"].docs, 1);
        let chunks: Vec<Chunk> = read_jsonl(&store.join(CHUNKS_FILE)).unwrap();
        assert_eq!(chunks.len(), s.chunks);
        assert_eq!(chunks[0].doc_id, "a-doc");
        assert!(store.join("docs/b-doc.json").exists());

        let summary = index_store(&store, &ProviderConfig::mock(), false).unwrap();
        assert_eq!(summary.rows, s.chunks);
        let open = OpenStore::open(&store).unwrap();
        assert_eq!(open.require_index().unwrap().len(), s.chunks);

        let wider = ProviderConfig {
            mock_dim: 128,
            ..ProviderConfig::mock()
        };
        assert!(matches!(
            index_store(&store, &wider, false),
            Err(StoreError::RebuildRequired {
                stored: 64,
                new: 128
            })
        ));
        assert_eq!(OpenStore::open(&store).unwrap().index.unwrap().dim(), 64);
        index_store(&store, &wider, true).unwrap();
        assert_eq!(OpenStore::open(&store).unwrap().index.unwrap().dim(), 128);
    }

    #[test]
    fn failed_ingest_keeps_previous_store() {
        let tmp = tempfile::tempdir().unwrap();
        let input = tmp.path().join("in");
        fs::create_dir(&input).unwrap();
        write_doc(&input, "a", "IRS", "Some text.");
        let store = tmp.path().join("store");
        ingest_dir(&input, &store, false, &ChunkingConfig::default()).unwrap();
        let before = fs::read(store.join(CHUNKS_FILE)).unwrap();

        fs::write(input.join("bad.json"), "{not json").unwrap();
        let err = ingest_dir(&input, &store, false, &ChunkingConfig::default()).unwrap_err();
        assert!(matches!(err, StoreError::Ingest(ref v) if v.len() == 1));
        assert_eq!(fs::read(store.join(CHUNKS_FILE)).unwrap(), before);
        let leftovers: Vec<_> = fs::read_dir(tmp.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with(".citeguard"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn empty_input_and_duplicates() {
        let tmp = tempfile::tempdir().unwrap();
        let input = tmp.path().join("in");
        fs::create_dir(&input).unwrap();
        let store = tmp.path().join("store");
        assert!(matches!(
            ingest_dir(&input, &store, false, &ChunkingConfig::default()),
            Err(StoreError::NoDocuments(_))
        ));
        write_doc(&input, "a", "IRS", "x");
        let dup = fs::read_to_string(input.join("a.json")).unwrap();
        fs::write(input.join("copy.json"), dup).unwrap();
        assert!(matches!(
            ingest_dir(&input, &store, false, &ChunkingConfig::default()),
            Err(StoreError::DuplicateDocId(_))
        ));
        assert!(!store.exists());
    }
}
