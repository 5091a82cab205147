//! Function-level syntax trees and their leaf-to-leaf path contexts.
//!
//! A [`Grammar`] turns source text into [`SyntaxNode`] trees; contexts are then
//! enumerated over leaf pairs and interned into a [`VocabPair`].

mod grammar;
mod ingest;
mod paths;
mod tree;
mod vocab;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use grammar::{CGrammar, Grammar, ParsedFunction};
pub use ingest::{extract_tree, ExtractedCorpus, IngestError};
pub use paths::{
    enumerate_contexts, extract_path_contexts, extract_path_contexts_frozen, PathContext,
    PathLimits, RawContext, DOWN, UP,
};
pub use tree::SyntaxNode;
pub use vocab::{VocabPair, Vocabulary, UNK};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no function definition recognized")]
    UnparsableSource,
    #[error("tree has fewer than two leaves")]
    NoLeaves,
    #[error("invalid path limits: max_length={max_length} (need >= 2), max_width={max_width} (need >= 1)")]
    InvalidLimits { max_length: usize, max_width: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("grammar error: {0}")]
    Grammar(String),
}

/// One function of the corpus: identity, module membership and encoded contexts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub module_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub name_tokens: Vec<String>,
    pub contexts: Vec<PathContext>,
    pub source_sha: String,
}

impl FunctionRecord {
    /// The label used for name prediction: the first name subtoken.
    pub fn primary_name(&self) -> &str {
        self.name_tokens.first().map(String::as_str).unwrap_or("")
    }
}

/// Strips comments and collapses whitespace runs to a single space.
///
/// String and character literals are copied through untouched.
pub fn normalize_source(source: &str) -> String {
    #[derive(PartialEq)]
    enum State {
        Code,
        Line,
        Block,
        Literal(char),
    }

    let mut stripped = String::with_capacity(source.len());
    let mut state = State::Code;
    let mut chars = source.chars().peekable();
    while let Some(c) = chars.next() {
        match state {
            State::Code => match c {
                '/' if chars.peek() == Some(&'/') => {
                    chars.next();
                    state = State::Line;
                }
                '/' if chars.peek() == Some(&'*') => {
                    chars.next();
                    state = State::Block;
                }
                '"' | '\'' => {
                    stripped.push(c);
                    state = State::Literal(c);
                }
                _ => stripped.push(c),
            },
            State::Line => {
                if c == '\n' {
                    stripped.push('\n');
                    state = State::Code;
                }
            }
            State::Block => {
                if c == '*' && chars.peek() == Some(&'/') {
                    chars.next();
                    stripped.push(' ');
                    state = State::Code;
                }
            }
            State::Literal(quote) => {
                stripped.push(c);
                if c == '\\' {
                    if let Some(next) = chars.next() {
                        stripped.push(next);
                    }
                } else if c == quote {
                    state = State::Code;
                }
            }
        }
    }
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 of the normalized source.
pub fn source_sha(source: &str) -> String {
    hex::encode(Sha256::digest(normalize_source(source).as_bytes()))
}

/// Splits an identifier into lowercase subtokens on underscores and case changes.
///
/// `getHTTPResponse_v2` becomes `["get", "http", "response", "v2"]`.
pub fn split_name(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    for part in name.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = part.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
            let boundary = (prev.is_lowercase() && cur.is_uppercase())
                || (prev.is_uppercase() && cur.is_uppercase() && next_lower)
                || (prev.is_numeric() && cur.is_alphabetic() && cur.is_uppercase());
            if boundary {
                out.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        if start < chars.len() {
            out.push(chars[start..].iter().collect::<String>().to_lowercase());
        }
    }
    if out.is_empty() && !name.is_empty() {
        out.push(name.to_lowercase());
    }
    out
}

/// Outcome of extracting one source file.
#[derive(Debug, Default)]
pub struct FileExtraction {
    pub records: Vec<FunctionRecord>,
    /// Definitions that were found but produced no contexts, as (name, reason).
    pub skipped: Vec<(String, String)>,
    /// Source text per emitted record, parallel to `records`.
    pub sources: Vec<String>,
}

/// Extracts every function of a file in training mode.
///
/// Ids are `<module_id>::<name>`, suffixed with `#n` for repeated names.
pub fn extract_file(
    grammar: &dyn Grammar,
    source: &str,
    module_id: &str,
    limits: &PathLimits,
    vocabs: &mut VocabPair,
) -> Result<FileExtraction, ExtractError> {
    let functions = match grammar.parse_functions(source) {
        Ok(f) => f,
        Err(ExtractError::UnparsableSource) => return Ok(FileExtraction::default()),
        Err(e) => return Err(e),
    };
    let mut out = FileExtraction::default();
    let mut seen = std::collections::HashMap::<String, usize>::new();
    for f in functions {
        let contexts = match extract_path_contexts(&f.root, limits, vocabs) {
            Ok(c) if !c.is_empty() => c,
            Ok(_) => {
                out.skipped.push((f.name, "no contexts within limits".into()));
                continue;
            }
            Err(e) => {
                out.skipped.push((f.name, e.to_string()));
                continue;
            }
        };
        let n = seen.entry(f.name.clone()).or_default();
        *n += 1;
        let id = if *n == 1 {
            format!("{module_id}::{}", f.name)
        } else {
            format!("{module_id}::{}#{n}", f.name)
        };
        out.records.push(FunctionRecord {
            id,
            module_id: module_id.to_string(),
            name_tokens: split_name(&f.name),
            name: f.name,
            contexts,
            source_sha: source_sha(&f.source),
        });
        out.sources.push(f.source);
    }
    Ok(out)
}
