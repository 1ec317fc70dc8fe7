//! Prompt assembly.

use serde::{Deserialize, Serialize};

use super::{GenerationConfig, Mode};
use crate::chunking::Chunk;
use crate::index::SearchHit;

pub const SYSTEM_INSTRUCTION: &str = "You are a concise and factual biomedical assistant.";
pub const CONTEXT_GUIDANCE: &str =
    "Use the following context to answer the question in 3\u{2013}4 complete, non-repetitive sentences.";
pub const NO_CONTEXT_GUIDANCE: &str =
    "Answer the following question in 3\u{2013}4 complete, non-repetitive sentences.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("query is empty")]
    EmptyQuery,
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        "EmptyQuery"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_instruction: String,
    pub context_block: String,
    pub query: String,
    pub rendered: String,
    /// Leading hits whose chunks fit in the context budget.
    pub included_hits: Vec<SearchHit>,
}

impl PromptBundle {
    /// Everything after the system instruction; sent as the user message.
    pub fn user_message(&self) -> &str {
        &self.rendered[self.system_instruction.len() + 1..]
    }
}

/// `[Source <rank>: <doc_id>]` followed by the chunk text on the next line.
pub fn source_entry(hit: &SearchHit, chunk: &Chunk) -> String {
    format!("{}\n{}", source_tag(hit.rank, &chunk.doc_id), chunk.text)
}

pub fn source_tag(rank: usize, doc_id: &str) -> String {
    format!("[Source {rank}: {doc_id}]")
}

/// Builds the generation prompt.
///
/// In RAG mode hits are added in rank order while the context block stays
/// within `context_char_budget` characters; the first hit that does not fit
/// ends the context, so chunks are never truncated. Vanilla mode ignores
/// `hits` and omits the context section.
pub fn build_prompt(
    query: &str,
    hits: &[(SearchHit, Chunk)],
    cfg: &GenerationConfig,
) -> Result<PromptBundle, PromptError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    let mut context_block = String::new();
    let mut included_hits = Vec::new();
    if cfg.mode == Mode::Rag {
        let mut used = 0usize;
        for (hit, chunk) in hits {
            let entry = source_entry(hit, chunk);
            let sep = if included_hits.is_empty() { 0 } else { 2 };
            let cost = sep + entry.chars().count();
            if used + cost > cfg.context_char_budget {
                break;
            }
            if sep > 0 {
                context_block.push_str("\n\n");
            }
            context_block.push_str(&entry);
            used += cost;
            included_hits.push(hit.clone());
        }
    }
    let rendered = match cfg.mode {
        Mode::Rag => format!(
            "{SYSTEM_INSTRUCTION}\n{CONTEXT_GUIDANCE}\n\nContext:\n{context_block}\n\nQuestion: {query}\nAnswer:"
        ),
        Mode::Vanilla => format!("{SYSTEM_INSTRUCTION}\n{NO_CONTEXT_GUIDANCE}\n\nQuestion: {query}\nAnswer:"),
    };
    Ok(PromptBundle {
        system_instruction: SYSTEM_INSTRUCTION.to_string(),
        context_block,
        query: query.to_string(),
        rendered,
        included_hits,
    })
}
