use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{extract_file, FunctionRecord, Grammar, PathLimits, VocabPair};

/// Records extracted from a source tree, with the source text of each function.
#[derive(Debug, Default)]
pub struct ExtractedCorpus {
    pub records: Vec<FunctionRecord>,
    pub sources: Vec<String>,
    pub vocabs: VocabPair,
    pub skipped: Vec<(String, String)>,
    pub files: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Extract(#[from] super::ExtractError),
}

/// Walks `root` in sorted order and extracts every file the grammar handles.
///
/// Module ids are paths relative to `root` with `/` separators.
pub fn extract_tree(
    root: &Path,
    grammar: &dyn Grammar,
    limits: &PathLimits,
) -> Result<ExtractedCorpus, IngestError> {
    let mut corpus = ExtractedCorpus::default();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter();
    for entry in walker {
        let entry = entry.map_err(|e| IngestError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let handled = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| grammar.extensions().contains(&e));
        if !handled {
            continue;
        }
        let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let module_id = module_id(root, path);
        let out = extract_file(grammar, &text, &module_id, limits, &mut corpus.vocabs)?;
        corpus.files += 1;
        corpus.records.extend(out.records);
        corpus.sources.extend(out.sources);
        corpus
            .skipped
            .extend(out.skipped.into_iter().map(|(n, r)| (format!("{module_id}::{n}"), r)));
    }
    Ok(corpus)
}

fn module_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}
