//! Corpus ingestion: turn HTML, JSON, JSONL and plain-text sources into
//! normalized [`Document`]s and persist them as a JSONL corpus.
//!
//! The text pipeline applied to every record is
//! `normalize_text(strip_boilerplate(strip_html(raw)))`, where the HTML step
//! only runs for HTML sources. PDF extraction is expected to happen upstream.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

/// A normalized source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub source: String,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    /// Checks the id and text invariants. Returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("doc_id is empty".into());
        }
        if self.text.is_empty() {
            return Err(format!("document {} has empty text", self.doc_id));
        }
        if let Some(c) = self.text.chars().find(|&c| c != '\n' && c.is_control()) {
            return Err(format!(
                "document {} contains control character U+{:04X}",
                self.doc_id, c as u32
            ));
        }
        if self.text.contains("  ") {
            return Err(format!("document {} has a run of spaces", self.doc_id));
        }
        if self.text.contains("\n\n\n") {
            return Err(format!("document {} has more than two consecutive newlines", self.doc_id));
        }
        Ok(())
    }

    /// The domain tag recorded in metadata, if any.
    pub fn domain(&self) -> Option<&str> {
        self.metadata.get("domain").map(String::as_str)
    }
}

/// An ordered collection of documents with pairwise distinct ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    documents: Vec<Document>,
    ids: HashSet<String>,
}

impl Corpus {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn from_documents(
        name: impl Into<String>,
        documents: impl IntoIterator<Item = Document>,
    ) -> Result<Self, IngestError> {
        let mut corpus = Self::new(name);
        for doc in documents {
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    /// Appends a document, rejecting duplicate ids.
    pub fn push(&mut self, doc: Document) -> Result<(), IngestError> {
        if !self.ids.insert(doc.doc_id.clone()) {
            return Err(IngestError::DuplicateDocId(doc.doc_id));
        }
        self.documents.push(doc);
        Ok(())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: record {index}: {detail}")]
    MalformedRecord {
        path: PathBuf,
        index: usize,
        detail: String,
    },
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(String),
    #[error("unknown source format {0:?} (expected html, json, jsonl or txt)")]
    UnknownFormat(String),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnreadableFile { .. } => "UnreadableFile",
            Self::MalformedRecord { .. } => "MalformedRecord",
            Self::DuplicateDocId(_) => "DuplicateDocId",
            Self::UnknownFormat(_) => "UnknownFormat",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    SchemaViolation { line: usize, detail: String },
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Io { .. } => "IoFailure",
            Self::SchemaViolation { .. } => "SchemaViolation",
        }
    }
}

// ---------------------------------------------------------------------------
// HTML

const SKIPPED_ELEMENTS: &[&str] = &["script", "style", "noscript", "template", "head"];

const PARAGRAPH_ELEMENTS: &[&str] = &[
    "p", "h1", "h2", "h3", "h4", "h5", "h6", "blockquote", "pre", "section", "article", "table",
    "ul", "ol", "dl", "figure", "aside", "header", "footer", "main", "nav", "hr", "form",
    "details",
];

const LINE_ELEMENTS: &[&str] = &[
    "div", "br", "li", "tr", "dd", "dt", "caption", "figcaption", "address", "summary", "tbody",
    "thead", "tfoot", "body", "html", "fieldset",
];

const CELL_ELEMENTS: &[&str] = &["td", "th"];

/// Accumulates visible text, folding whitespace the way a browser would and
/// turning block boundaries into newlines.
#[derive(Default)]
struct TextSink {
    out: String,
    pending_space: bool,
    pending_newlines: usize,
}

impl TextSink {
    fn text(&mut self, s: &str) {
        for c in s.chars() {
            if c.is_whitespace() {
                self.pending_space = true;
                continue;
            }
            if !self.out.is_empty() {
                if self.pending_newlines > 0 {
                    for _ in 0..self.pending_newlines {
                        self.out.push('\n');
                    }
                } else if self.pending_space {
                    self.out.push(' ');
                }
            }
            self.pending_newlines = 0;
            self.pending_space = false;
            self.out.push(c);
        }
    }

    fn boundary(&mut self, newlines: usize) {
        self.pending_newlines = self.pending_newlines.max(newlines);
        self.pending_space = false;
    }

    fn soft_break(&mut self) {
        self.pending_space = true;
    }
}

struct Tag<'a> {
    name: String,
    closing: bool,
    self_closing: bool,
    /// Byte length of the whole tag including `<` and `>`.
    len: usize,
    _raw: &'a str,
}

fn parse_tag(s: &str) -> Option<Tag<'_>> {
    debug_assert!(s.starts_with('<'));
    let rest = &s[1..];
    let (closing, rest) = match rest.strip_prefix('/') {
        Some(r) => (true, r),
        None => (false, rest),
    };
    if !rest.starts_with(|c: char| c.is_ascii_alphabetic()) {
        return None;
    }
    let end = s.find('>')?;
    let name: String = rest
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    let self_closing = s[..end].ends_with('/');
    Some(Tag {
        name,
        closing,
        self_closing,
        len: end + 1,
        _raw: &s[..=end],
    })
}

/// Finds the byte offset just past `</name ...>` (ASCII case-insensitive), or
/// `None` if the element is never closed.
fn find_closing(s: &str, name: &str) -> Option<usize> {
    let lower = s.to_ascii_lowercase();
    let needle = format!("</{name}");
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let at = from + pos;
        let after = at + needle.len();
        let next = lower[after..].chars().next();
        if matches!(next, Some(c) if c == '>' || c.is_whitespace()) {
            let gt = lower[after..].find('>')?;
            return Some(after + gt + 1);
        }
        from = after;
    }
    None
}

/// Removes markup from `raw`.
///
/// Tags are dropped, entities decoded, the contents of `script`, `style`,
/// `noscript`, `template` and `head` discarded, and block-level element
/// boundaries become newlines (a blank line for paragraph-like elements).
/// A `<` that does not start a well-formed tag is kept as text.
pub fn strip_html(raw: &str) -> String {
    let mut sink = TextSink::default();
    let mut text_start = 0;
    let mut i = 0;
    let bytes = raw.as_bytes();

    let flush = |sink: &mut TextSink, segment: &str| {
        if !segment.is_empty() {
            let decoded = html_escape::decode_html_entities(segment);
            sink.text(&decoded);
        }
    };

    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &raw[i..];
        if rest.starts_with("<!--") {
            flush(&mut sink, &raw[text_start..i]);
            i = match rest.find("-->") {
                Some(p) => i + p + 3,
                None => raw.len(),
            };
            text_start = i;
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            if let Some(p) = rest.find('>') {
                flush(&mut sink, &raw[text_start..i]);
                i += p + 1;
                text_start = i;
                continue;
            }
        }
        let Some(tag) = parse_tag(rest) else {
            i += 1;
            continue;
        };
        flush(&mut sink, &raw[text_start..i]);
        i += tag.len;
        let name = tag.name.as_str();
        if !tag.closing && !tag.self_closing && SKIPPED_ELEMENTS.contains(&name) {
            i = match find_closing(&raw[i..], name) {
                Some(p) => i + p,
                None => raw.len(),
            };
            sink.boundary(1);
        } else if PARAGRAPH_ELEMENTS.contains(&name) {
            sink.boundary(2);
        } else if LINE_ELEMENTS.contains(&name) {
            sink.boundary(1);
        } else if CELL_ELEMENTS.contains(&name) {
            sink.soft_break();
        }
        text_start = i;
    }
    flush(&mut sink, &raw[text_start..]);
    sink.out.replace('\u{00A0}', " ")
}

/// Contents of the first `<title>` element, entity-decoded and whitespace-folded.
pub fn html_title(raw: &str) -> Option<String> {
    let re = Regex::new(r"(?is)<title[^>]*>(.*?)</title\s*>").expect("static regex");
    let inner = re.captures(raw)?.get(1)?.as_str();
    let decoded = html_escape::decode_html_entities(inner);
    let title = decoded.split_whitespace().collect::<Vec<_>>().join(" ");
    (!title.is_empty()).then_some(title)
}

// ---------------------------------------------------------------------------
// Normalization

fn map_char(c: char, out: &mut String) {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' | '\u{2035}' => out.push('\''),
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' | '\u{2036}' => out.push('"'),
        '\u{2010}'..='\u{2015}' | '\u{2212}' | '\u{FE58}' | '\u{FE63}' | '\u{FF0D}' => out.push('-'),
        '\u{2026}' => out.push_str("..."),
        '\n' | '\u{2028}' | '\u{2029}' | '\u{0085}' | '\u{000B}' | '\u{000C}' => out.push('\n'),
        // zero-width and soft-hyphen format characters
        '\u{200B}' | '\u{200C}' | '\u{200D}' | '\u{2060}' | '\u{FEFF}' | '\u{00AD}' => {}
        c if c.is_whitespace() => out.push(' '),
        c if c.is_control() => {}
        c => out.push(c),
    }
}

/// Canonicalizes text: NFC composition, typographic quotes and dashes mapped
/// to ASCII, control characters dropped, space runs collapsed, at most one
/// blank line between paragraphs, and no leading or trailing whitespace.
///
/// Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let mut mapped = String::with_capacity(unified.len());
    for c in unified.chars() {
        map_char(c, &mut mapped);
    }
    let composed: String = mapped.nfc().collect();

    let mut out = String::with_capacity(composed.len());
    let mut blank_run = 0usize;
    for line in composed.split('\n') {
        let folded = line.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ");
        if folded.is_empty() {
            blank_run += 1;
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
            if blank_run > 0 {
                out.push('\n');
            }
        }
        blank_run = 0;
        out.push_str(&folded);
    }
    out
}

// ---------------------------------------------------------------------------
// Boilerplate

/// Configurable noise-removal patterns.
#[derive(Debug, Clone)]
pub struct BoilerplateRules {
    /// A line matching any of these is removed entirely.
    pub drop_lines: Vec<Regex>,
    /// Every match of these is cut out of its line.
    pub drop_spans: Vec<Regex>,
    /// A line equal to one of these (case-insensitive, optional trailing
    /// colon) truncates the document from that line onwards.
    pub section_cutoffs: Vec<String>,
}

impl Default for BoilerplateRules {
    fn default() -> Self {
        let line = |p: &str| Regex::new(p).expect("static regex");
        Self {
            drop_lines: vec![
                line(r"(?i)^\s*(author information|author affiliations?|corresponding author|author contributions)\b.*$"),
                line(r"(?i)^\s*(copyright\b|©).*$"),
                line(r"(?i)^\s*(doi|pmid|pmcid)\s*:\s*\S+\s*$"),
            ],
            drop_spans: vec![line(r"[ \t]*\[\d+(?:\s*[,\u{2013}-]\s*\d+)*\]")],
            section_cutoffs: vec!["references".into(), "bibliography".into()],
        }
    }
}

/// Removes reference sections, author blocks and citation markers.
pub fn strip_boilerplate(text: &str, rules: &BoilerplateRules) -> String {
    let mut kept: Vec<String> = Vec::new();
    for line in text.split('\n') {
        let heading = line.trim().trim_end_matches(':').trim_end().to_lowercase();
        if rules.section_cutoffs.iter().any(|c| c.eq_ignore_ascii_case(&heading)) {
            break;
        }
        if rules.drop_lines.iter().any(|re| re.is_match(line)) {
            continue;
        }
        let mut current = line.to_string();
        let mut touched = false;
        for re in &rules.drop_spans {
            if re.is_match(&current) {
                current = re.replace_all(&current, "").into_owned();
                touched = true;
            }
        }
        if touched {
            current = current.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ");
        }
        kept.push(current);
    }
    let joined = kept.join("\n");
    joined.trim_end().to_string()
}

// ---------------------------------------------------------------------------
// Files

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Html,
    Json,
    Jsonl,
    Txt,
}

impl FromStr for SourceFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "html" | "htm" => Ok(Self::Html),
            "json" => Ok(Self::Json),
            "jsonl" | "ndjson" => Ok(Self::Jsonl),
            "txt" | "text" => Ok(Self::Txt),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub rules: BoilerplateRules,
    /// Merged into every document's metadata; record-level keys win.
    pub metadata: BTreeMap<String, String>,
}

/// A record that normalized to nothing and was left out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub index: usize,
    pub doc_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub documents: Vec<Document>,
    pub skipped: Vec<SkippedRecord>,
}

struct RawRecord {
    id: Option<String>,
    title: Option<String>,
    source: Option<String>,
    text: String,
    metadata: BTreeMap<String, String>,
}

fn record_from_value(value: Value, path: &Path, index: usize) -> Result<RawRecord, IngestError> {
    let malformed = |detail: &str| IngestError::MalformedRecord {
        path: path.to_path_buf(),
        index,
        detail: detail.to_string(),
    };
    let Value::Object(mut obj) = value else {
        return Err(malformed("record is not a JSON object"));
    };
    let text = match obj.remove("text") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(malformed("field `text` is not a string")),
        None => return Err(malformed("missing field `text`")),
    };
    let id = match obj.remove("doc_id").or_else(|| obj.remove("id")) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(_) => return Err(malformed("field `doc_id` must be a string or number")),
    };
    let string_field = |v: Option<Value>| match v {
        Some(Value::String(s)) => Some(s),
        _ => None,
    };
    let title = string_field(obj.remove("title"));
    let source = string_field(obj.remove("source"));
    let metadata = match obj.remove("metadata") {
        Some(Value::Object(m)) => m
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, v)
            })
            .collect(),
        None | Some(Value::Null) => BTreeMap::new(),
        Some(_) => return Err(malformed("field `metadata` is not an object")),
    };
    Ok(RawRecord {
        id,
        title,
        source,
        text,
        metadata,
    })
}

/// Runs the text pipeline for one record.
pub fn clean_text(raw: &str, is_html: bool, rules: &BoilerplateRules) -> String {
    let visible = if is_html { strip_html(raw) } else { raw.to_string() };
    normalize_text(&strip_boilerplate(&visible, rules))
}

/// Reads one source file into documents. Records whose text normalizes to
/// nothing are reported in [`IngestReport::skipped`] rather than failing the
/// file. Records without an id get `<file-stem>#<record-index>`.
pub fn ingest_file(
    path: &Path,
    format: SourceFormat,
    opts: &IngestOptions,
) -> Result<IngestReport, IngestError> {
    let raw = fs::read_to_string(path).map_err(|source| IngestError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "doc".to_string());
    let source_label = path.display().to_string();

    let records: Vec<RawRecord> = match format {
        SourceFormat::Txt => vec![RawRecord {
            id: None,
            title: None,
            source: None,
            text: raw,
            metadata: BTreeMap::new(),
        }],
        SourceFormat::Html => vec![RawRecord {
            id: None,
            title: html_title(&raw),
            source: None,
            text: raw,
            metadata: BTreeMap::new(),
        }],
        SourceFormat::Json => {
            let value: Value =
                serde_json::from_str(&raw).map_err(|e| IngestError::MalformedRecord {
                    path: path.to_path_buf(),
                    index: 0,
                    detail: e.to_string(),
                })?;
            let values = match value {
                Value::Array(items) => items,
                other => vec![other],
            };
            values
                .into_iter()
                .enumerate()
                .map(|(i, v)| record_from_value(v, path, i))
                .collect::<Result<_, _>>()?
        }
        SourceFormat::Jsonl => raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                let v: Value =
                    serde_json::from_str(line).map_err(|e| IngestError::MalformedRecord {
                        path: path.to_path_buf(),
                        index: i,
                        detail: e.to_string(),
                    })?;
                record_from_value(v, path, i)
            })
            .collect::<Result<_, _>>()?,
    };

    let is_html = format == SourceFormat::Html;
    let mut report = IngestReport::default();
    for (index, rec) in records.into_iter().enumerate() {
        let doc_id = rec.id.unwrap_or_else(|| format!("{stem}#{index}"));
        let text = clean_text(&rec.text, is_html, &opts.rules);
        if text.is_empty() {
            tracing::debug!(%doc_id, "record empty after normalization");
            report.skipped.push(SkippedRecord { index, doc_id });
            continue;
        }
        let mut metadata = opts.metadata.clone();
        metadata.extend(rec.metadata);
        report.documents.push(Document {
            doc_id,
            title: rec.title.unwrap_or_else(|| stem.clone()),
            source: rec.source.unwrap_or_else(|| source_label.clone()),
            text,
            metadata,
        });
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Corpus JSONL

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    for doc in corpus.documents() {
        let line = serde_json::to_string(doc).expect("document serializes");
        w.write_all(line.as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a JSONL corpus. The corpus name is the file stem.
pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut corpus = Corpus::new(name);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| CorpusError::SchemaViolation {
                line: line_no,
                detail: e.to_string(),
            })?;
        doc.validate()
            .map_err(|detail| CorpusError::SchemaViolation { line: line_no, detail })?;
        corpus.push(doc).map_err(|e| CorpusError::SchemaViolation {
            line: line_no,
            detail: e.to_string(),
        })?;
    }
    Ok(corpus)
}
