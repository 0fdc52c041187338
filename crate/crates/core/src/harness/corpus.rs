use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

pub const PROMPT_TOKENS: usize = 32;
pub const MIN_PASSAGE_TOKENS: usize = 160;

/// A prompt cut from the head of a corpus passage, with the rest of the
/// passage kept as the human reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    /// `<file name>:<passage index>`, counting every passage in the file.
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub reference: Vec<TokenId>,
    pub passage_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// Passages separated by blank lines.
    Txt,
    /// One JSON object per line with a `"text"` field.
    Jsonl,
}

impl CorpusFormat {
    /// `.jsonl` files are JSONL, everything else plain text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Txt,
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Txt => "txt",
            CorpusFormat::Jsonl => "jsonl",
        })
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "txt" => Ok(CorpusFormat::Txt),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            _ => Err(Error::invalid(format!("unknown corpus format {s:?}"))),
        }
    }
}

#[derive(Deserialize)]
struct JsonPassage {
    text: String,
}

/// Splits raw corpus text into passages.
pub fn split_passages(text: &str, format: CorpusFormat, path: &Path) -> Result<Vec<String>> {
    match format {
        CorpusFormat::Txt => {
            let mut passages = Vec::new();
            let mut current = String::new();
            for line in text.lines() {
                if line.trim().is_empty() {
                    if !current.is_empty() {
                        passages.push(std::mem::take(&mut current));
                    }
                } else {
                    if !current.is_empty() {
                        current.push('\n');
                    }
                    current.push_str(line);
                }
            }
            if !current.is_empty() {
                passages.push(current);
            }
            Ok(passages)
        }
        CorpusFormat::Jsonl => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<JsonPassage>(l)
                    .map(|p| p.text)
                    .map_err(|e| Error::Ingestion {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })
            })
            .collect(),
    }
}

/// Builds prompt instances from passages. Passages shorter than
/// [`MIN_PASSAGE_TOKENS`] are skipped but still consume an index.
pub fn build_prompts(source: &str, passages: &[String], vocab: &Vocabulary) -> Vec<PromptInstance> {
    passages
        .iter()
        .enumerate()
        .filter_map(|(i, text)| {
            let ids = vocab.encode(text);
            if ids.len() < MIN_PASSAGE_TOKENS {
                return None;
            }
            Some(PromptInstance {
                id: format!("{source}:{i}"),
                prompt: ids[..PROMPT_TOKENS].to_vec(),
                reference: ids[PROMPT_TOKENS..].to_vec(),
                passage_len: ids.len(),
            })
        })
        .collect()
}

/// Reads a corpus file and cuts it into prompt instances.
pub fn ingest_corpus(path: &Path, format: CorpusFormat, vocab: &Vocabulary) -> Result<Vec<PromptInstance>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| {
        let valid = &e.as_bytes()[..e.utf8_error().valid_up_to()];
        Error::Ingestion {
            path: path.to_path_buf(),
            line: valid.iter().filter(|&&b| b == b'\n').count() + 1,
            message: "invalid UTF-8".into(),
        }
    })?;
    if text.trim().is_empty() {
        log::warn!("corpus {} is empty", path.display());
        return Ok(Vec::new());
    }
    let passages = split_passages(&text, format, path)?;
    let source = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let prompts = build_prompts(&source, &passages, vocab);
    log::info!(
        "{}: {} passages, {} long enough for prompts",
        path.display(),
        passages.len(),
        prompts.len()
    );
    Ok(prompts)
}
