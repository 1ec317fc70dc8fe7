//! `medrag`: batch driver for ingest, index, query, eval and serve.
//!
//! Exit codes: 0 on success, 1 on an operational error (reported on stderr
//! as `error: <Code>: <detail>`), 2 on a usage error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use medrag_core::chunking::chunk_documents;
use medrag_core::embedding::{DEFAULT_DIMENSION, DEFAULT_REMOTE_MODEL};
use medrag_core::eval::{read_configs, read_qa_pairs, run_eval, write_report};
use medrag_core::index::build_index;
use medrag_core::ingest::{ingest_file, read_corpus, write_corpus, CorpusError};
use medrag_core::{
    AskError, ChatClient, ChunkError, ChunkingConfig, Corpus, EmbedError, Embedder, EmbeddingProviderConfig,
    EvalError, GenerationConfig, IndexError, IngestError, IngestOptions, Mode, RagEngine, RetrievalConfig,
    SourceFormat, Strategy, VectorIndex,
};
use medrag_service::{ServiceConfig, ServiceError};

#[derive(Parser)]
#[command(name = "medrag", version, about = "Retrieval-augmented biomedical question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Deterministic,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize source files into a JSONL corpus.
    Ingest {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// html, json, jsonl or txt
        #[arg(long, value_parser = parse_format)]
        format: SourceFormat,
        #[arg(long)]
        out: PathBuf,
        /// Metadata added to every document, e.g. `--tag domain=breast_cancer`.
        #[arg(long = "tag", value_parser = parse_tag)]
        tags: Vec<(String, String)>,
    },
    /// Chunk and embed a corpus into an index file.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "recursive", value_parser = parse_strategy)]
        strategy: Strategy,
        #[arg(long, default_value_t = medrag_core::chunking::DEFAULT_CHUNK_SIZE)]
        chunk_size: usize,
        #[arg(long, default_value_t = medrag_core::chunking::DEFAULT_OVERLAP)]
        overlap: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "deterministic")]
        provider: Provider,
        /// Embedding endpoint for the remote provider.
        #[arg(long, alias = "embed-endpoint")]
        endpoint: Option<String>,
        #[arg(long, default_value = DEFAULT_REMOTE_MODEL)]
        embed_model: String,
        #[arg(long, default_value_t = DEFAULT_DIMENSION)]
        dimension: usize,
    },
    /// Answer one question against an index.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, default_value_t = medrag_core::index::DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long, default_value = "rag")]
        mode: Mode,
        #[arg(long)]
        show_sources: bool,
        #[arg(long, env = "MEDRAG_CHAT_URL")]
        chat_endpoint: Option<String>,
        #[arg(long, env = "MEDRAG_EMBED_URL")]
        embed_endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Run QA pairs through each configuration and write a report.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long, env = "MEDRAG_EMBED_URL")]
        embed_endpoint: Option<String>,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_format(s: &str) -> Result<SourceFormat, String> {
    s.parse().map_err(|e: IngestError| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: ChunkError| e.to_string())
}

fn parse_tag(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected key=value, got {s:?}")),
    }
}

/// An operational failure, printed as `error: <code>: <detail>`.
struct Failure {
    code: &'static str,
    detail: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // keep the line machine-parseable
        write!(f, "error: {}: {}", self.code, self.detail.replace('\n', " "))
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Self { code: e.code(), detail: e.to_string() }
            }
        }
    )*};
}

failure_from!(IngestError, CorpusError, ChunkError, EmbedError, IndexError, EvalError, ServiceError);

impl From<AskError> for Failure {
    fn from(e: AskError) -> Self {
        Self {
            code: e.code(),
            detail: format!("{} stage: {e}", e.stage()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn ingest(input: &[PathBuf], format: SourceFormat, out: &Path, tags: Vec<(String, String)>) -> CliResult {
    let opts = IngestOptions {
        metadata: tags.into_iter().collect::<BTreeMap<_, _>>(),
        ..IngestOptions::default()
    };
    let name = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut corpus = Corpus::new(name);
    let mut skipped = 0;
    for path in input {
        let report = ingest_file(path, format, &opts)?;
        skipped += report.skipped.len();
        for doc in report.documents {
            corpus.push(doc)?;
        }
    }
    write_corpus(&corpus, out)?;
    println!("ingested {} documents, skipped {skipped} -> {}", corpus.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
async fn index(
    corpus: &Path,
    chunking: ChunkingConfig,
    out: &Path,
    provider: Provider,
    endpoint: Option<String>,
    embed_model: String,
    dimension: usize,
) -> CliResult {
    let provider = match provider {
        Provider::Deterministic => EmbeddingProviderConfig::deterministic(dimension),
        Provider::Remote => EmbeddingProviderConfig::remote(endpoint.unwrap_or_default(), embed_model, dimension),
    };
    let embedder = Embedder::new(provider)?;
    let corpus = read_corpus(corpus)?;
    let chunks = chunk_documents(corpus.documents(), &chunking)?;
    let index = build_index(chunks, &embedder, &corpus.name).await?;
    index.save(out)?;
    println!(
        "indexed {} chunks from {} documents ({}) -> {}",
        index.len(),
        corpus.len(),
        index.fingerprint(),
        out.display()
    );
    Ok(())
}

/// An engine whose embedder matches the one the index was built with.
fn engine_for(index: &VectorIndex, embed_endpoint: Option<&str>) -> Result<RagEngine, Failure> {
    let provider = EmbeddingProviderConfig::from_fingerprint(index.fingerprint(), embed_endpoint)?;
    Ok(RagEngine::new(Embedder::new(provider)?, ChatClient::default()))
}

#[allow(clippy::too_many_arguments)]
async fn query(
    index: &Path,
    question: &str,
    top_k: usize,
    mode: Mode,
    show_sources: bool,
    chat_endpoint: Option<String>,
    embed_endpoint: Option<String>,
    model: Option<String>,
) -> CliResult {
    let index = VectorIndex::load(index)?;
    let engine = engine_for(&index, embed_endpoint.as_deref())?;
    let mut gcfg = GenerationConfig {
        mode,
        ..GenerationConfig::default()
    };
    if let Some(url) = chat_endpoint {
        gcfg.endpoint_url = url;
    }
    if let Some(m) = model {
        gcfg.model_name = m;
    }
    let answer = engine
        .ask(question, &index, &RetrievalConfig::with_top_k(top_k), &gcfg)
        .await?;
    println!("{}", answer.text);
    if show_sources {
        println!();
        println!("Sources ({}):", answer.prompt.included_hits.len());
        for hit in &answer.prompt.included_hits {
            let doc = index.chunk(&hit.chunk_id).map(|c| c.doc_id.as_str()).unwrap_or("?");
            println!("  [{}] {doc}  {}  score={:.4}", hit.rank, hit.chunk_id, hit.score);
        }
    }
    Ok(())
}

async fn eval(
    index: &Path,
    pairs: &Path,
    configs: &Path,
    out: &Path,
    concurrency: usize,
    embed_endpoint: Option<String>,
) -> CliResult {
    let pairs = read_qa_pairs(pairs)?;
    let configs = read_configs(configs)?;
    let index = VectorIndex::load(index)?;
    let engine = engine_for(&index, embed_endpoint.as_deref())?;
    let outcome = run_eval(&engine, &index, &pairs, &configs, concurrency.max(1)).await?;
    std::fs::create_dir_all(out).map_err(|e| Failure {
        code: "IoFailure",
        detail: format!("{}: {e}", out.display()),
    })?;
    write_report(&outcome.report, &outcome.records, out)?;
    let fmt = |m: Option<f64>| m.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!("{:<24} {:>4} {:>7} {:>8} {:>8} {:>8}", "config", "n", "errors", "EM", "BLEU", "BERT-F1");
    for row in &outcome.report.rows {
        println!(
            "{:<24} {:>4} {:>7} {:>8} {:>8} {:>8}",
            row.config_name,
            row.n,
            row.errored,
            fmt(row.mean_em),
            fmt(row.mean_bleu),
            fmt(row.mean_bert_f1)
        );
    }
    println!("report written to {}", out.display());
    Ok(())
}

async fn serve(config: &Path) -> CliResult {
    let mut cfg = ServiceConfig::load(config)?;
    cfg.apply_env();
    medrag_service::serve(&cfg).await?;
    Ok(())
}

async fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest {
            input,
            format,
            out,
            tags,
        } => ingest(&input, format, &out, tags),
        Command::Index {
            corpus,
            strategy,
            chunk_size,
            overlap,
            out,
            provider,
            endpoint,
            embed_model,
            dimension,
        } => {
            let chunking = ChunkingConfig::new(strategy, chunk_size, overlap);
            index(&corpus, chunking, &out, provider, endpoint, embed_model, dimension).await
        }
        Command::Query {
            index,
            question,
            top_k,
            mode,
            show_sources,
            chat_endpoint,
            embed_endpoint,
            model,
        } => query(&index, &question, top_k, mode, show_sources, chat_endpoint, embed_endpoint, model).await,
        Command::Eval {
            index,
            pairs,
            configs,
            out,
            concurrency,
            embed_endpoint,
        } => eval(&index, &pairs, &configs, &out, concurrency, embed_endpoint).await,
        Command::Serve { config } => serve(&config).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(1)
        }
    }
}
