//! Evaluation harness: runs every question through every configuration and
//! aggregates EM, BLEU and BERTScore per configuration.

pub mod metrics;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

pub use metrics::{
    bert_score, bleu4, bleu4_with, exact_match, normalize_answer, tokenize, BertScoreError, BertScoreResult,
    BleuResult,
};

use crate::embedding::{EmbedError, Embedder};
use crate::engine::{AskError, GenerationConfig, Mode, RagEngine};
use crate::index::{IndexError, RetrievalConfig, VectorIndex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub qid: String,
    pub question: String,
    pub reference_answer: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl QAPair {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err(format!("{}: question is empty", self.qid));
        }
        if self.reference_answer.trim().is_empty() {
            return Err(format!("{}: reference_answer is empty", self.qid));
        }
        Ok(())
    }
}

/// One named system configuration, e.g. "Vanilla" or "RAG (QLoRA)".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub name: String,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no QA pairs to evaluate")]
    NoPairs,
    #[error("no configurations to evaluate")]
    NoConfigs,
    #[error("{path}: line {line}: {detail}")]
    InvalidInput { path: PathBuf, line: usize, detail: String },
    #[error("configuration {name:?} needs an index: {source}")]
    Index { name: String, source: IndexError },
    #[error("index was built with {index}, evaluation embedder is {query}")]
    FingerprintMismatch { index: String, query: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoPairs => "NoPairs",
            Self::NoConfigs => "NoConfigs",
            Self::InvalidInput { .. } => "InvalidInput",
            Self::Index { source, .. } => source.code(),
            Self::FingerprintMismatch { .. } => "FingerprintMismatch",
            Self::Io { .. } => "IoFailure",
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads a QA pair JSONL file; blank lines are ignored.
pub fn read_qa_pairs(path: &Path) -> Result<Vec<QAPair>, EvalError> {
    let file = fs::File::open(path).map_err(|e| EvalError::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EvalError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |detail: String| EvalError::InvalidInput {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let pair: QAPair = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        pair.validate().map_err(invalid)?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Reads a JSON array of [`EvalConfig`].
pub fn read_configs(path: &Path) -> Result<Vec<EvalConfig>, EvalError> {
    let raw = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| EvalError::InvalidInput {
        path: path.to_path_buf(),
        line: e.line(),
        detail: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qid: String,
    pub config_name: String,
    pub generated_answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<BleuResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bert: Option<BertScoreResult>,
    /// `"<stage>/<code>: <message>"` for a failed question.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub config_name: String,
    /// Scored (non-errored) records.
    pub n: usize,
    pub errored: usize,
    /// `None` when `n == 0`.
    pub mean_em: Option<f64>,
    pub mean_bleu: Option<f64>,
    pub mean_bert_f1: Option<f64>,
}

/// Per-configuration aggregates, in configuration input order.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricReport {
    pub rows: Vec<ConfigSummary>,
}

impl MetricReport {
    /// Aggregates over `records`, one row per name in `config_names`.
    pub fn from_records<'a>(config_names: impl IntoIterator<Item = &'a str>, records: &[EvalRecord]) -> Self {
        let rows = config_names
            .into_iter()
            .map(|name| {
                let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.config_name == name).collect();
                let scored: Vec<&EvalRecord> = mine.iter().copied().filter(|r| !r.is_error()).collect();
                let n = scored.len();
                let mean = |f: &dyn Fn(&EvalRecord) -> f64| {
                    (n > 0).then(|| scored.iter().map(|r| f(r)).sum::<f64>() / n as f64)
                };
                ConfigSummary {
                    config_name: name.to_string(),
                    n,
                    errored: mine.len() - n,
                    mean_em: mean(&|r| r.em.unwrap_or(0) as f64),
                    mean_bleu: mean(&|r| r.bleu.map_or(0.0, |b| b.score)),
                    mean_bert_f1: mean(&|r| r.bert.map_or(0.0, |b| b.f1)),
                }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, config_name: &str) -> Option<&ConfigSummary> {
        self.rows.iter().find(|r| r.config_name == config_name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricReport,
    /// Sorted by qid, then configuration input order.
    pub records: Vec<EvalRecord>,
}

fn content_tokens(s: &str) -> Vec<String> {
    tokenize(s)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

async fn token_matrix(embedder: &Embedder, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
    let vecs = embedder.embed_batch(tokens).await?;
    Ok(vecs
        .into_iter()
        .map(|v| {
            let row: Vec<f64> = v.as_slice().iter().map(|&x| x as f64).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.into_iter().map(|x| x / norm).collect()
        })
        .collect())
}

/// BERTScore between two answers, embedding each content token separately.
///
/// An answer without alphanumeric tokens scores 0.
pub async fn answer_bert_score(
    embedder: &Embedder,
    reference: &str,
    candidate: &str,
) -> Result<BertScoreResult, EmbedError> {
    let (rt, ct) = (content_tokens(reference), content_tokens(candidate));
    if rt.is_empty() || ct.is_empty() {
        return Ok(BertScoreResult {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
    }
    let r = token_matrix(embedder, &rt).await?;
    let c = token_matrix(embedder, &ct).await?;
    Ok(bert_score(&r, &c).expect("rows are non-empty and unit-normalized"))
}

async fn evaluate_one(
    engine: &RagEngine,
    index: &VectorIndex,
    pair: &QAPair,
    cfg: &EvalConfig,
) -> EvalRecord {
    let errored = |e: String| EvalRecord {
        qid: pair.qid.clone(),
        config_name: cfg.name.clone(),
        generated_answer: String::new(),
        em: None,
        bleu: None,
        bert: None,
        error: Some(e),
    };
    let answer = match engine.ask(&pair.question, index, &cfg.retrieval, &cfg.generation).await {
        Ok(a) => a,
        Err(e) => return errored(format_ask_error(&e)),
    };
    let bert = match answer_bert_score(engine.embedder(), &pair.reference_answer, &answer.text).await {
        Ok(b) => b,
        Err(e) => return errored(format!("score/{}: {e}", e.code())),
    };
    EvalRecord {
        qid: pair.qid.clone(),
        config_name: cfg.name.clone(),
        em: Some(exact_match(&answer.text, &pair.reference_answer)),
        bleu: Some(bleu4(&tokenize(&answer.text), &tokenize(&pair.reference_answer))),
        bert: Some(bert),
        generated_answer: answer.text,
        error: None,
    }
}

fn format_ask_error(e: &AskError) -> String {
    format!("{}/{}: {e}", e.stage(), e.code())
}

/// Runs every (pair, configuration) combination with at most `concurrency`
/// questions in flight.
///
/// Individual failures become errored records. Only conditions that would
/// fail every question of a configuration (no inputs, an empty or
/// mismatched index for a RAG configuration) are returned as errors.
pub async fn run_eval(
    engine: &RagEngine,
    index: &VectorIndex,
    pairs: &[QAPair],
    configs: &[EvalConfig],
    concurrency: usize,
) -> Result<EvalOutcome, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    if configs.is_empty() {
        return Err(EvalError::NoConfigs);
    }
    for cfg in configs.iter().filter(|c| c.generation.mode == Mode::Rag) {
        if index.is_empty() {
            return Err(EvalError::Index {
                name: cfg.name.clone(),
                source: IndexError::EmptyIndex,
            });
        }
        if index.fingerprint() != engine.embedder().fingerprint() {
            return Err(EvalError::FingerprintMismatch {
                index: index.fingerprint().to_string(),
                query: engine.embedder().fingerprint(),
            });
        }
    }

    let jobs = pairs
        .iter()
        .flat_map(|p| configs.iter().enumerate().map(move |(ci, c)| (p, ci, c)));
    let mut keyed: Vec<(usize, EvalRecord)> = stream::iter(jobs)
        .map(|(p, ci, c)| async move { (ci, evaluate_one(engine, index, p, c).await) })
        .buffered(concurrency.max(1))
        .collect()
        .await;
    keyed.sort_by(|(ca, a), (cb, b)| a.qid.cmp(&b.qid).then(ca.cmp(cb)));
    let records: Vec<EvalRecord> = keyed.into_iter().map(|(_, r)| r).collect();
    let report = MetricReport::from_records(configs.iter().map(|c| c.name.as_str()), &records);
    Ok(EvalOutcome { report, records })
}

pub const SUMMARY_HEADER: [&str; 5] = ["config_name", "n", "mean_em", "mean_bleu", "mean_bert_f1"];

fn fmt_mean(m: Option<f64>) -> String {
    m.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Writes `records.jsonl` and `summary.csv` into `dir`, creating it if needed.
pub fn write_report(report: &MetricReport, records: &[EvalRecord], dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;

    let records_path = dir.join("records.jsonl");
    let file = fs::File::create(&records_path).map_err(|e| EvalError::io(&records_path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| EvalError::io(&records_path, e))?;
    }
    out.flush().map_err(|e| EvalError::io(&records_path, e))?;

    let summary_path = dir.join("summary.csv");
    let csv_err = |e: csv::Error| EvalError::io(&summary_path, e.into());
    let mut w = csv::Writer::from_path(&summary_path).map_err(csv_err)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for row in &report.rows {
        w.write_record([
            row.config_name.clone(),
            row.n.to_string(),
            fmt_mean(row.mean_em),
            fmt_mean(row.mean_bleu),
            fmt_mean(row.mean_bert_f1),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| EvalError::io(&summary_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(qid: &str, cfg: &str, em: u8, bleu: f64, f1: f64) -> EvalRecord {
        EvalRecord {
            qid: qid.into(),
            config_name: cfg.into(),
            generated_answer: "x".into(),
            em: Some(em),
            bleu: Some(BleuResult {
                score: bleu,
                precisions: [0.0; 4],
                brevity_penalty: 1.0,
                candidate_len: 1,
                reference_len: 1,
            }),
            bert: Some(BertScoreResult {
                precision: f1,
                recall: f1,
                f1,
            }),
            error: None,
        }
    }

    #[test]
    fn aggregates_are_means_of_scored_records() {
        let mut failed = rec("q3", "A", 0, 0.0, 0.0);
        failed.error = Some("generate/BackendError: boom".into());
        failed.em = None;
        let records = vec![
            rec("q1", "A", 1, 0.5, 0.9),
            rec("q2", "A", 0, 0.25, 0.7),
            failed,
            rec("q1", "B", 1, 1.0, 1.0),
        ];
        let report = MetricReport::from_records(["A", "B", "C"], &records);
        let a = report.row("A").unwrap();
        assert_eq!((a.n, a.errored), (2, 1));
        assert_eq!(a.mean_em, Some(0.5));
        assert_eq!(a.mean_bleu, Some(0.375));
        assert!((a.mean_bert_f1.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(report.row("B").unwrap().mean_em, Some(1.0));
        assert_eq!(report.row("C").unwrap().mean_em, None);
        assert_eq!(
            report.rows.iter().map(|r| r.config_name.as_str()).collect::<Vec<_>>(),
            ["A", "B", "C"]
        );
    }

    #[test]
    fn empty_records_give_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        write_report(&MetricReport::default(), &[], dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv, "config_name,n,mean_em,mean_bleu,mean_bert_f1\n");
        assert_eq!(fs::read_to_string(dir.path().join("records.jsonl")).unwrap(), "");
    }

    #[test]
    fn csv_quotes_awkward_names() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![rec("q1", "RAG, tuned", 1, 0.5, 0.5)];
        let report = MetricReport::from_records(["RAG, tuned"], &records);
        write_report(&report, &records, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "\"RAG, tuned\",1,1.000000,0.500000,0.500000");
    }

    #[test]
    fn qa_pairs_parse_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("qa.jsonl");
        fs::write(
            &p,
            "{\"qid\":\"q1\",\"question\":\"What is lupus?\",\"reference_answer\":\"An autoimmune disease.\",\"tags\":{\"set\":\"general\"}}\n\n",
        )
        .unwrap();
        let pairs = read_qa_pairs(&p).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].tags["set"], "general");

        fs::write(&p, "{\"qid\":\"q1\",\"question\":\" \",\"reference_answer\":\"x\"}\n").unwrap();
        assert!(matches!(read_qa_pairs(&p), Err(EvalError::InvalidInput { line: 1, .. })));
    }
}
