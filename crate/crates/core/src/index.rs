//! Exact (flat) cosine-similarity index over chunk embeddings.
//!
//! Vectors are stored row-major in one contiguous buffer and every search is
//! a full scan with a bounded heap, so results are exact. Ties on score are
//! broken by ascending chunk id.
//!
//! # File format
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        6 bytes  "RAGIDX"
//! version      u32      currently 1
//! dimension    u32
//! entry count  u64
//! fingerprint  u32 length + UTF-8
//! corpus name  u32 length + UTF-8
//! checksum     32 bytes SHA-256 of every byte after the magic except itself
//! entries      count x { u32 length + chunk_id, dimension x f32, u32 length + chunk JSON }
//! ```

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunking::Chunk;
use crate::embedding::{EmbedError, Embedder, EmbeddingVector};

pub const MAGIC: &[u8; 6] = b"RAGIDX";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("no chunks to index")]
    NoChunks,
    #[error("duplicate chunk id {0}")]
    DuplicateChunkId(String),
    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index format version {found} is not supported (expected {FORMAT_VERSION})")]
    FormatVersionMismatch { found: u32 },
    #[error("corrupt index file: {0}")]
    CorruptFile(String),
}

impl IndexError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoChunks => "NoChunks",
            Self::DuplicateChunkId(_) => "DuplicateChunkId",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::EmptyIndex => "EmptyIndex",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::Embed(e) => e.code(),
            Self::Io { .. } => "IoFailure",
            Self::FormatVersionMismatch { .. } => "FormatVersionMismatch",
            Self::CorruptFile(_) => "CorruptFile",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_k: usize,
    /// Hits scoring below this are dropped. -1 disables the filter.
    pub min_score: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            min_score: -1.0,
        }
    }
}

impl RetrievalConfig {
    pub fn with_top_k(top_k: usize) -> Self {
        Self {
            top_k,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    if a.dimension() != b.dimension() {
        return Err(IndexError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    corpus_name: String,
    fingerprint: String,
    vectors: Vec<f32>,
    chunks: Vec<Chunk>,
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(corpus_name: impl Into<String>, fingerprint: impl Into<String>, dimension: usize) -> Self {
        Self {
            dimension,
            corpus_name: corpus_name.into(),
            fingerprint: fingerprint.into(),
            vectors: Vec::new(),
            chunks: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn insert(&mut self, chunk: Chunk, vector: EmbeddingVector) -> Result<(), IndexError> {
        if vector.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: vector.dimension(),
            });
        }
        if self.positions.contains_key(&chunk.chunk_id) {
            return Err(IndexError::DuplicateChunkId(chunk.chunk_id));
        }
        self.positions.insert(chunk.chunk_id.clone(), self.chunks.len());
        self.vectors.extend_from_slice(vector.as_slice());
        self.chunks.push(chunk);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn corpus_name(&self) -> &str {
        &self.corpus_name
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.positions.get(chunk_id).map(|&i| &self.chunks[i])
    }

    /// The stored vector of the `i`-th entry.
    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Exact top-k by cosine similarity.
    pub fn search(&self, query: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<SearchHit>, IndexError> {
        if cfg.top_k == 0 {
            return Err(IndexError::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        let q = query.as_slice();
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(cfg.top_k + 1);
        for (i, chunk) in self.chunks.iter().enumerate() {
            let score = dot(q, self.vector(i)).clamp(-1.0, 1.0);
            if score < cfg.min_score {
                continue;
            }
            let cand = Candidate {
                score,
                id: &chunk.chunk_id,
            };
            if heap.len() < cfg.top_k {
                heap.push(cand);
            } else if heap.peek().is_some_and(|worst| cand < *worst) {
                heap.pop();
                heap.push(cand);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, c)| SearchHit {
                chunk_id: c.id.to_string(),
                score: c.score,
                rank: i + 1,
            })
            .collect())
    }

    // -----------------------------------------------------------------------
    // persistence

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.vectors.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.chunks.len() as u64).to_le_bytes());
        put_str(&mut out, &self.fingerprint);
        put_str(&mut out, &self.corpus_name);
        let checksum_at = out.len();
        out.extend_from_slice(&[0u8; 32]);
        for (i, chunk) in self.chunks.iter().enumerate() {
            put_str(&mut out, &chunk.chunk_id);
            for v in self.vector(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_str(&mut out, &serde_json::to_string(chunk).expect("chunk serializes"));
        }
        let digest = checksum(&out, checksum_at);
        out[checksum_at..checksum_at + 32].copy_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(IndexError::CorruptFile("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::FormatVersionMismatch { found: version });
        }
        let dimension = r.u32()? as usize;
        let count = r.u64()?;
        let fingerprint = r.string()?;
        let corpus_name = r.string()?;
        let checksum_at = r.pos;
        let stored = r.take(32)?;
        if checksum(bytes, checksum_at)[..] != *stored {
            return Err(IndexError::CorruptFile("checksum mismatch".into()));
        }
        if dimension == 0 {
            return Err(IndexError::CorruptFile("zero dimension".into()));
        }

        let mut index = Self::new(corpus_name, fingerprint, dimension);
        for n in 0..count {
            let chunk_id = r.string()?;
            let raw = r.take(dimension * 4)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let vector = EmbeddingVector::from_unit(values)
                .map_err(|e| IndexError::CorruptFile(format!("entry {n}: {e}")))?;
            let chunk: Chunk = serde_json::from_str(&r.string()?)
                .map_err(|e| IndexError::CorruptFile(format!("entry {n}: chunk json: {e}")))?;
            if chunk.chunk_id != chunk_id {
                return Err(IndexError::CorruptFile(format!("entry {n}: chunk id disagrees with record")));
            }
            index
                .insert(chunk, vector)
                .map_err(|e| IndexError::CorruptFile(format!("entry {n}: {e}")))?;
        }
        if r.pos != bytes.len() {
            return Err(IndexError::CorruptFile("trailing bytes".into()));
        }
        Ok(index)
    }

    /// Writes the index atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io = |source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Embeds `chunks` in order and indexes them.
pub async fn build_index(
    chunks: Vec<Chunk>,
    embedder: &Embedder,
    corpus_name: &str,
) -> Result<VectorIndex, IndexError> {
    if chunks.is_empty() {
        return Err(IndexError::NoChunks);
    }
    let mut seen = std::collections::HashSet::new();
    for c in &chunks {
        if !seen.insert(c.chunk_id.as_str()) {
            return Err(IndexError::DuplicateChunkId(c.chunk_id.clone()));
        }
    }
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed_batch(&texts).await?;
    let mut index = VectorIndex::new(corpus_name, embedder.fingerprint(), embedder.dimension());
    for (chunk, vector) in chunks.into_iter().zip(vectors) {
        index.insert(chunk, vector)?;
    }
    Ok(index)
}

pub fn save_index(index: &VectorIndex, path: &Path) -> Result<(), IndexError> {
    index.save(path)
}

pub fn load_index(path: &Path) -> Result<VectorIndex, IndexError> {
    VectorIndex::load(path)
}

/// Heap entry. Ordered so that the *worst* candidate is the greatest.
struct Candidate<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn checksum(bytes: &[u8], checksum_at: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(&bytes[MAGIC.len()..checksum_at]);
    if bytes.len() > checksum_at + 32 {
        h.update(&bytes[checksum_at + 32..]);
    }
    h.finalize().into()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IndexError::CorruptFile(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| IndexError::CorruptFile("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingProviderConfig, embed_deterministic};
    use proptest::prelude::*;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.to_string(),
            doc_id: id.split("::").next().unwrap().to_string(),
            ordinal: 0,
            text: text.to_string(),
            char_start: 0,
            char_end: text.chars().count(),
        }
    }

    fn unit(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(values).unwrap()
    }

    fn small_index() -> VectorIndex {
        let mut ix = VectorIndex::new("c", "test:fixed:3", 3);
        ix.insert(chunk("a::0", "x"), unit(&[1.0, 0.0, 0.0])).unwrap();
        ix.insert(chunk("b::0", "y"), unit(&[0.0, 1.0, 0.0])).unwrap();
        ix.insert(chunk("c::0", "z"), unit(&[1.0, 1.0, 0.0])).unwrap();
        ix
    }

    /// Reference ranking: score everything, sort, truncate.
    fn oracle(ix: &VectorIndex, q: &EmbeddingVector, cfg: &RetrievalConfig) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = ix
            .chunks()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let s: f64 = q.as_slice().iter().zip(ix.vector(i)).map(|(a, b)| *a as f64 * *b as f64).sum();
                (c.chunk_id.clone(), s.clamp(-1.0, 1.0))
            })
            .filter(|(_, s)| *s >= cfg.min_score)
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        all.truncate(cfg.top_k);
        all
    }

    #[test]
    fn cosine_examples() {
        let v = unit(&[0.3, -0.2, 0.9]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine(&unit(&[1.0, 0.0, 0.0]), &unit(&[0.0, 1.0, 0.0])).unwrap(), 0.0);
        let w = unit(&[-0.5, 0.1, 0.2]);
        assert_eq!(cosine(&v, &w).unwrap(), cosine(&w, &v).unwrap());
        assert_eq!(cosine(&v, &unit(&[1.0, 0.0])).unwrap_err().code(), "DimensionMismatch");
    }

    #[test]
    fn search_basics() {
        let ix = small_index();
        let hits = ix.search(&unit(&[1.0, 0.1, 0.0]), &RetrievalConfig::with_top_k(2)).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, ["a::0", "c::0"]);
        assert_eq!(hits[0].rank, 1);
        assert_eq!(hits[1].rank, 2);

        let all = ix.search(&unit(&[0.0, 0.0, 1.0]), &RetrievalConfig::with_top_k(10)).unwrap();
        assert_eq!(all.len(), 3);
        // all scores are 0: ties fall back to ascending id
        let ids: Vec<_> = all.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, ["a::0", "b::0", "c::0"]);

        let filtered = ix
            .search(&unit(&[1.0, 0.0, 0.0]), &RetrievalConfig { top_k: 5, min_score: 0.5 })
            .unwrap();
        assert_eq!(filtered.len(), 2);
    }

    #[test]
    fn single_entry_and_error_paths() {
        let mut ix = VectorIndex::new("c", "f", 3);
        assert_eq!(ix.search(&unit(&[1.0, 0.0, 0.0]), &RetrievalConfig::default()).unwrap_err().code(), "EmptyIndex");
        ix.insert(chunk("only::0", "t"), unit(&[0.0, 0.0, 1.0])).unwrap();
        let hits = ix.search(&unit(&[1.0, 0.0, 0.0]), &RetrievalConfig::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].rank, 1);
        assert_eq!(ix.search(&unit(&[1.0, 0.0]), &RetrievalConfig::default()).unwrap_err().code(), "DimensionMismatch");
        assert_eq!(ix.search(&unit(&[1.0, 0.0, 0.0]), &RetrievalConfig::with_top_k(0)).unwrap_err().code(), "InvalidConfig");
        assert_eq!(
            ix.insert(chunk("only::0", "t"), unit(&[0.0, 1.0, 0.0])).unwrap_err().code(),
            "DuplicateChunkId"
        );
    }

    #[tokio::test]
    async fn build_preserves_order_and_rejects_duplicates() {
        let embedder = Embedder::new(EmbeddingProviderConfig::deterministic(64)).unwrap();
        let chunks = vec![chunk("d::0", "alpha"), chunk("d::1", "beta"), chunk("d::2", "gamma")];
        let ix = build_index(chunks.clone(), &embedder, "demo").await.unwrap();
        assert_eq!(ix.len(), 3);
        assert_eq!(ix.chunks(), &chunks[..]);
        assert_eq!(ix.vector(1), embed_deterministic("beta", 64).unwrap().as_slice());
        assert_eq!(ix.fingerprint(), "deterministic:hash-ngram-v1:64");

        let dup = vec![chunk("d::0", "a"), chunk("d::0", "b")];
        assert_eq!(build_index(dup, &embedder, "demo").await.unwrap_err().code(), "DuplicateChunkId");
        assert_eq!(build_index(vec![], &embedder, "demo").await.unwrap_err().code(), "NoChunks");
    }

    #[tokio::test]
    async fn rebuild_is_byte_identical() {
        let embedder = Embedder::new(EmbeddingProviderConfig::deterministic(384)).unwrap();
        let chunks = vec![chunk("d::0", "tamoxifen therapy"), chunk("d::1", "mammography screening")];
        let a = build_index(chunks.clone(), &embedder, "demo").await.unwrap();
        let b = build_index(chunks, &embedder, "demo").await.unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.ragidx"), dir.path().join("b.ragidx"));
        a.save(&pa).unwrap();
        b.save(&pb).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
        assert_eq!(load_index(&pa).unwrap(), a);
    }

    #[test]
    fn load_rejects_truncation_and_version() {
        let bytes = small_index().to_bytes();
        for cut in [0, 5, 12, 40, bytes.len() - 1] {
            assert_eq!(VectorIndex::from_bytes(&bytes[..cut]).unwrap_err().code(), "CorruptFile", "cut {cut}");
        }
        let mut v99 = bytes.clone();
        v99[6..10].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            VectorIndex::from_bytes(&v99),
            Err(IndexError::FormatVersionMismatch { found: 99 })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(VectorIndex::from_bytes(&extra).unwrap_err().code(), "CorruptFile");
        let missing = Path::new("/nonexistent/dir/x.ragidx");
        assert_eq!(load_index(missing).unwrap_err().code(), "IoFailure");
    }

    #[test]
    fn header_layout() {
        let bytes = small_index().to_bytes();
        assert_eq!(&bytes[..6], b"RAGIDX");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 3);
        let fp_len = u32::from_le_bytes(bytes[22..26].try_into().unwrap()) as usize;
        assert_eq!(&bytes[26..26 + fp_len], b"test:fixed:3");
    }

    fn arb_index() -> impl Strategy<Value = (VectorIndex, Vec<f64>)> {
        (2usize..12, 1usize..40).prop_flat_map(|(d, n)| {
            (
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n),
                prop::collection::vec(-1.0f64..1.0, d),
            )
                .prop_map(move |(rows, q)| {
                    let mut ix = VectorIndex::new("p", "prop", d);
                    for (i, row) in rows.iter().enumerate() {
                        if let Ok(v) = EmbeddingVector::normalized(row) {
                            // coarse ids collide in prefix order to exercise tie-breaks
                            ix.insert(chunk(&format!("doc{}::{}", i % 3, i), "t"), v).unwrap();
                        }
                    }
                    (ix, q)
                })
        })
    }

    proptest! {
        #[test]
        fn search_matches_full_sort((ix, q) in arb_index(), k in 1usize..10, min in -1.0f64..0.5) {
            prop_assume!(!ix.is_empty());
            let Ok(q) = EmbeddingVector::normalized(&q) else { return Ok(()) };
            let cfg = RetrievalConfig { top_k: k, min_score: min };
            let hits = ix.search(&q, &cfg).unwrap();
            let expected = oracle(&ix, &q, &cfg);
            let got: Vec<(String, f64)> = hits.iter().map(|h| (h.chunk_id.clone(), h.score)).collect();
            prop_assert_eq!(got, expected);
            for (i, h) in hits.iter().enumerate() {
                prop_assert_eq!(h.rank, i + 1);
                prop_assert!((-1.0..=1.0).contains(&h.score));
            }
        }

        #[test]
        fn scaled_query_gives_same_hits((ix, q) in arb_index(), scale in 0.01f64..100.0) {
            prop_assume!(!ix.is_empty());
            let Ok(unit_q) = EmbeddingVector::normalized(&q) else { return Ok(()) };
            let scaled: Vec<f64> = q.iter().map(|v| v * scale).collect();
            let scaled_q = EmbeddingVector::normalized(&scaled).unwrap();
            let cfg = RetrievalConfig::with_top_k(5);
            // Rescaling can move the f32 query by an ulp, which can only
            // reorder scores that are within float noise of each other.
            let full = oracle(&ix, &unit_q, &RetrievalConfig::with_top_k(ix.len()));
            let near_tie = full.windows(2).take(cfg.top_k).any(|w| (w[0].1 - w[1].1).abs() < 1e-6);
            prop_assume!(!near_tie);
            let a: Vec<_> = ix.search(&unit_q, &cfg).unwrap().into_iter().map(|h| h.chunk_id).collect();
            let b: Vec<_> = ix.search(&scaled_q, &cfg).unwrap().into_iter().map(|h| h.chunk_id).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn persistence_roundtrip((ix, _q) in arb_index()) {
            let back = VectorIndex::from_bytes(&ix.to_bytes()).unwrap();
            prop_assert_eq!(&back, &ix);
            for i in 0..ix.len() {
                let a: Vec<u32> = ix.vector(i).iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = back.vector(i).iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
