//! Retrieval-augmented question answering over biomedical literature.
//!
//! The pipeline runs `ingest` → `chunking` → `embedding` → `index`, and
//! `engine` answers questions against a built index. `eval` scores answers
//! with Exact Match, BLEU-4 and BERTScore across system configurations.

pub mod chunking;
pub mod embedding;
pub mod engine;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod retry;

pub use chunking::{Chunk, ChunkError, ChunkingConfig, Strategy};
pub use embedding::{EmbedError, Embedder, EmbeddingProviderConfig, EmbeddingVector, ProviderKind};
pub use engine::{Answer, AskError, ChatClient, GenerationConfig, Mode, PromptBundle, RagEngine};
pub use eval::{EvalConfig, EvalError, EvalRecord, MetricReport, QAPair};
pub use index::{IndexError, RetrievalConfig, SearchHit, VectorIndex};
pub use ingest::{Corpus, Document, IngestError, IngestOptions, SourceFormat};
pub use retry::RetryPolicy;
