//! Splitting documents into retrieval-sized chunks.
//!
//! All three strategies reduce to the same two steps: cut the text into
//! contiguous *units* that each fit in `chunk_size` characters, then pack
//! units greedily into chunks. When a chunk overflows, the next chunk is
//! seeded with the longest run of trailing whole units that fits in
//! `overlap` characters. Units always tile the input, so stripping each
//! chunk's overlap prefix and concatenating gives back the original text.
//!
//! Sizes and offsets count Unicode scalar values, not bytes or tokens.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ingest::Document;

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_OVERLAP: usize = 150;

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "Dr.", "Fig.", "Figs.", "et al.", "Mr.", "Mrs.", "Ms.", "Prof.", "vs.",
    "approx.", "No.", "Vol.", "Eq.", "cf.", "Ref.", "Jr.", "Sr.", "St.", "Dept.", "Univ.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Recursive,
    Sentence,
    Adaptive,
}

impl std::str::FromStr for Strategy {
    type Err = ChunkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recursive" => Ok(Self::Recursive),
            "sentence" => Ok(Self::Sentence),
            "adaptive" => Ok(Self::Adaptive),
            other => Err(ChunkError::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

fn default_separators() -> Vec<String> {
    ["\n\n", "\n", ". ", " ", ""].into_iter().map(String::from).collect()
}

fn default_abbreviations() -> Vec<String> {
    DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub strategy: Strategy,
    pub chunk_size: usize,
    pub overlap: usize,
    /// Tried in order by the recursive strategy; must end with `""`.
    pub separators: Vec<String>,
    /// Sentence-final tokens that do not end a sentence.
    pub abbreviations: Vec<String>,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Recursive,
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
            separators: default_separators(),
            abbreviations: default_abbreviations(),
        }
    }
}

impl ChunkingConfig {
    pub fn new(strategy: Strategy, chunk_size: usize, overlap: usize) -> Self {
        Self {
            strategy,
            chunk_size,
            overlap,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            return Err(ChunkError::InvalidConfig("chunk_size must be positive".into()));
        }
        if self.overlap >= self.chunk_size {
            return Err(ChunkError::InvalidConfig(format!(
                "overlap {} must be smaller than chunk_size {}",
                self.overlap, self.chunk_size
            )));
        }
        if self.separators.last().map(String::as_str) != Some("") {
            return Err(ChunkError::InvalidConfig(
                "separators must end with the empty string".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkError {
    #[error("invalid chunking config: {0}")]
    InvalidConfig(String),
}

impl ChunkError {
    pub fn code(&self) -> &'static str {
        "InvalidConfig"
    }
}

/// A contiguous piece of a document.
///
/// `text` may begin with an overlap prefix copied from the previous chunk;
/// `char_start..char_end` addresses only the new material (the core) in the
/// parent document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

impl Chunk {
    /// Length in characters of the prefix shared with the previous chunk.
    pub fn overlap_chars(&self) -> usize {
        self.text.chars().count() - (self.char_end - self.char_start)
    }

    /// The chunk text without its overlap prefix.
    pub fn core_text(&self) -> &str {
        let skip = self.overlap_chars();
        match self.text.char_indices().nth(skip) {
            Some((b, _)) => &self.text[b..],
            None => "",
        }
    }
}

/// Concatenates the cores of `chunks` in order.
pub fn reconstruct(chunks: &[Chunk]) -> String {
    chunks.iter().map(Chunk::core_text).collect()
}

// ---------------------------------------------------------------------------

/// Byte range plus its position in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: usize,
    end: usize,
    char_start: usize,
    chars: usize,
}

impl Span {
    fn whole(text: &str) -> Self {
        Self {
            start: 0,
            end: text.len(),
            char_start: 0,
            chars: text.chars().count(),
        }
    }

    fn char_end(&self) -> usize {
        self.char_start + self.chars
    }
}

/// A packed chunk before it gets an id.
#[derive(Debug, Clone, Copy)]
struct Packed {
    start: usize,
    end: usize,
    core_char_start: usize,
    char_end: usize,
}

/// Cuts `within` into consecutive sub-spans at every `[start, end)` boundary
/// list entry. `cuts` are byte offsets of piece ends, ascending, the last
/// equal to `within.end`.
fn spans_from_cuts(text: &str, within: Span, cuts: impl IntoIterator<Item = usize>) -> Vec<Span> {
    let mut out = Vec::new();
    let mut start = within.start;
    let mut char_start = within.char_start;
    for end in cuts {
        if end <= start {
            continue;
        }
        let chars = text[start..end].chars().count();
        out.push(Span {
            start,
            end,
            char_start,
            chars,
        });
        start = end;
        char_start += chars;
    }
    debug_assert_eq!(start, within.end);
    out
}

/// Recursively splits `span` until every piece is at most `size` characters,
/// using the first separator that occurs in an oversized piece. The separator
/// stays attached to the end of the piece before it.
fn unitize(text: &str, span: Span, separators: &[String], size: usize, out: &mut Vec<Span>) {
    if span.chars <= size {
        out.push(span);
        return;
    }
    let seg = &text[span.start..span.end];
    for (i, sep) in separators.iter().enumerate() {
        if sep.is_empty() {
            let cuts = seg
                .char_indices()
                .map(|(b, c)| span.start + b + c.len_utf8());
            out.extend(spans_from_cuts(text, span, cuts));
            return;
        }
        if seg.contains(sep.as_str()) {
            let mut cuts: Vec<usize> = seg
                .match_indices(sep.as_str())
                .map(|(b, m)| span.start + b + m.len())
                .collect();
            if cuts.last() != Some(&span.end) {
                cuts.push(span.end);
            }
            for piece in spans_from_cuts(text, span, cuts) {
                unitize(text, piece, &separators[i + 1..], size, out);
            }
            return;
        }
    }
    // Only reachable when the list lacks the "" fallback.
    out.push(span);
}

/// Greedy packing of contiguous units into chunks of at most `size`
/// characters, seeding each new chunk with up to `overlap` characters of
/// whole trailing units from the previous one.
fn pack(units: &[Span], size: usize, overlap: usize) -> Vec<Packed> {
    let mut out = Vec::new();
    // `current` holds indices lo..hi into units; `core` is the first unit
    // that was not copied from the previous chunk.
    let (mut lo, mut core, mut len) = (0usize, 0usize, 0usize);
    let emit = |lo: usize, core: usize, hi: usize, out: &mut Vec<Packed>| {
        out.push(Packed {
            start: units[lo].start,
            end: units[hi - 1].end,
            core_char_start: units[core].char_start,
            char_end: units[hi - 1].char_end(),
        });
    };
    for (idx, unit) in units.iter().enumerate() {
        debug_assert!(unit.chars <= size);
        if idx > lo && len + unit.chars > size {
            emit(lo, core, idx, &mut out);
            // longest suffix of whole units within the overlap budget
            let mut seed_lo = idx;
            let mut seed_len = 0;
            while seed_lo > lo && seed_len + units[seed_lo - 1].chars <= overlap {
                seed_lo -= 1;
                seed_len += units[seed_lo].chars;
            }
            // the seed must leave room for the unit that caused the overflow
            while seed_len + unit.chars > size {
                seed_len -= units[seed_lo].chars;
                seed_lo += 1;
            }
            lo = seed_lo;
            core = idx;
            len = seed_len;
        }
        len += unit.chars;
    }
    if lo < units.len() {
        emit(lo, core, units.len(), &mut out);
    }
    out
}

fn into_chunks(doc_id: &str, text: &str, packed: Vec<Packed>) -> Vec<Chunk> {
    if text.is_empty() {
        return Vec::new();
    }
    packed
        .into_iter()
        .enumerate()
        .map(|(ordinal, p)| Chunk {
            chunk_id: format!("{doc_id}::{ordinal}"),
            doc_id: doc_id.to_string(),
            ordinal,
            text: text[p.start..p.end].to_string(),
            char_start: p.core_char_start,
            char_end: p.char_end,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Sentences

/// Rule-based sentence boundary detection.
///
/// A boundary follows `.`, `!` or `?` (plus any closing quotes or brackets)
/// when whitespace and then an uppercase letter or digit come next, unless
/// the text before the period ends with a known abbreviation.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: Vec<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    pub fn new<S: AsRef<str>>(abbreviations: impl IntoIterator<Item = S>) -> Self {
        Self {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.as_ref().to_lowercase())
                .collect(),
        }
    }

    fn ends_with_abbreviation(&self, before: &str) -> bool {
        let lower = before.to_lowercase();
        self.abbreviations.iter().any(|abbr| {
            lower.ends_with(abbr.as_str())
                && lower[..lower.len() - abbr.len()]
                    .chars()
                    .next_back()
                    .is_none_or(|c| c.is_whitespace() || matches!(c, '(' | '[' | '"' | '\''))
        })
    }

    /// Byte offsets just past each sentence (trailing whitespace included).
    /// The last entry is always `text.len()` for non-empty input.
    fn boundaries(&self, text: &str) -> Vec<usize> {
        let mut cuts = Vec::new();
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if !matches!(c, '.' | '!' | '?') {
                continue;
            }
            let mut j = i + c.len_utf8();
            while let Some(&(k, n)) = chars.peek() {
                if matches!(n, '.' | '!' | '?' | '"' | '\'' | ')' | ']') {
                    j = k + n.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            let ws_start = j;
            let mut rest = text[j..].char_indices();
            let next_visible = loop {
                match rest.next() {
                    Some((_, w)) if w.is_whitespace() => continue,
                    Some((k, v)) => break Some((j + k, v)),
                    None => break None,
                }
            };
            let Some((next_at, next)) = next_visible else {
                continue;
            };
            if next_at == ws_start || !(next.is_uppercase() || next.is_ascii_digit()) {
                continue;
            }
            if c == '.' && self.ends_with_abbreviation(&text[..i + 1]) {
                continue;
            }
            cuts.push(next_at);
        }
        if !text.is_empty() {
            cuts.push(text.len());
        }
        cuts
    }

    /// Sentences with surrounding whitespace trimmed. Joining them back with
    /// the original inter-sentence whitespace yields `text`.
    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut start = 0;
        self.boundaries(text)
            .into_iter()
            .filter_map(|end| {
                let s = text[start..end].trim();
                start = end;
                (!s.is_empty()).then_some(s)
            })
            .collect()
    }

    fn sentence_spans(&self, text: &str, within: Span) -> Vec<Span> {
        let seg = &text[within.start..within.end];
        let cuts = self.boundaries(seg).into_iter().map(|c| within.start + c);
        spans_from_cuts(text, within, cuts)
    }
}

/// Splits with the default abbreviation list.
pub fn split_sentences(text: &str) -> Vec<&str> {
    SentenceSplitter::default().split(text)
}

// ---------------------------------------------------------------------------
// Strategies

fn recursive_packed(text: &str, span: Span, separators: &[String], size: usize, overlap: usize) -> Vec<Packed> {
    let mut units = Vec::new();
    unitize(text, span, separators, size, &mut units);
    pack(&units, size, overlap)
}

fn sentence_packed(text: &str, span: Span, cfg: &ChunkingConfig) -> Vec<Packed> {
    let splitter = SentenceSplitter::new(&cfg.abbreviations);
    let word_separators = [" ".to_string(), String::new()];
    let mut units = Vec::new();
    for sentence in splitter.sentence_spans(text, span) {
        if sentence.chars <= cfg.chunk_size {
            units.push(sentence);
            continue;
        }
        // Oversized sentence: recursive word split, each resulting chunk
        // becomes one unit.
        for p in recursive_packed(text, sentence, &word_separators, cfg.chunk_size, 0) {
            units.push(Span {
                start: p.start,
                end: p.end,
                char_start: p.core_char_start,
                chars: p.char_end - p.core_char_start,
            });
        }
    }
    pack(&units, cfg.chunk_size, cfg.overlap)
}

fn paragraph_break() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\n(?:[ \t]*\n)+").expect("static regex"))
}

fn adaptive_packed(text: &str, span: Span, cfg: &ChunkingConfig) -> Vec<Packed> {
    let seg = &text[span.start..span.end];
    let mut cuts: Vec<usize> = paragraph_break()
        .find_iter(seg)
        .map(|m| span.start + m.end())
        .collect();
    if cuts.last() != Some(&span.end) {
        cuts.push(span.end);
    }
    let paragraphs = spans_from_cuts(text, span, cuts);

    let mut out = Vec::new();
    let mut run: Vec<Span> = Vec::new();
    for para in paragraphs {
        if para.chars <= cfg.chunk_size {
            run.push(para);
            continue;
        }
        out.extend(pack(&run, cfg.chunk_size, cfg.overlap));
        run.clear();
        out.extend(sentence_packed(text, para, cfg));
    }
    out.extend(pack(&run, cfg.chunk_size, cfg.overlap));
    out
}

/// Hierarchical separator splitting (paragraph, line, sentence, word,
/// character by default).
pub fn split_recursive(doc_id: &str, text: &str, cfg: &ChunkingConfig) -> Result<Vec<Chunk>, ChunkError> {
    cfg.validate()?;
    let packed = recursive_packed(text, Span::whole(text), &cfg.separators, cfg.chunk_size, cfg.overlap);
    Ok(into_chunks(doc_id, text, packed))
}

/// Packs whole sentences; sentences longer than `chunk_size` are split on
/// word boundaries first.
pub fn split_sentence_aware(doc_id: &str, text: &str, cfg: &ChunkingConfig) -> Result<Vec<Chunk>, ChunkError> {
    cfg.validate()?;
    Ok(into_chunks(doc_id, text, sentence_packed(text, Span::whole(text), cfg)))
}

/// Merges consecutive short paragraphs; a paragraph that alone exceeds
/// `chunk_size` is chunked sentence-aware on its own.
pub fn split_adaptive(doc_id: &str, text: &str, cfg: &ChunkingConfig) -> Result<Vec<Chunk>, ChunkError> {
    cfg.validate()?;
    Ok(into_chunks(doc_id, text, adaptive_packed(text, Span::whole(text), cfg)))
}

/// Chunks `text` with the strategy named in `cfg`.
pub fn chunk_text(doc_id: &str, text: &str, cfg: &ChunkingConfig) -> Result<Vec<Chunk>, ChunkError> {
    match cfg.strategy {
        Strategy::Recursive => split_recursive(doc_id, text, cfg),
        Strategy::Sentence => split_sentence_aware(doc_id, text, cfg),
        Strategy::Adaptive => split_adaptive(doc_id, text, cfg),
    }
}

pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> Result<Vec<Chunk>, ChunkError> {
    chunk_text(&doc.doc_id, &doc.text, cfg)
}

/// Chunks every document, in corpus order.
pub fn chunk_documents<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    cfg: &ChunkingConfig,
) -> Result<Vec<Chunk>, ChunkError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for doc in docs {
        out.extend(chunk_document(doc, cfg)?);
    }
    Ok(out)
}
