//! Token vocabulary and the bundled whitespace tokenizer.
//!
//! On disk a vocabulary is a UTF-8 text file with one token per line (line
//! number = id) plus a JSON sidecar `{"bos": int|null, "eos": int|null,
//! "unk": int|null}` naming the special ids.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Literal spelling of the unknown token when a vocabulary is built from text.
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub bos: Option<TokenId>,
    pub eos: Option<TokenId>,
    pub unk: Option<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    special: SpecialIds,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    #[serde(flatten)]
    special: SpecialIds,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Vocabulary::new(repr.tokens, repr.special)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            special: v.special,
        }
    }
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, special: SpecialIds) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
        }
        for (name, id) in [
            ("bos", special.bos),
            ("eos", special.eos),
            ("unk", special.unk),
        ] {
            if let Some(id) = id {
                if id as usize >= tokens.len() {
                    return Err(Error::invalid(format!(
                        "{name} id {id} out of range for vocabulary of size {}",
                        tokens.len()
                    )));
                }
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            special,
        })
    }

    /// Builds a vocabulary from whitespace-separated words in first-appearance
    /// order, reserving an unknown-token id after the last word. A literal
    /// `<unk>` in the text is folded into that reserved id.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for text in texts {
            for word in text.split_whitespace() {
                if word == UNK_TOKEN || index.contains_key(word) {
                    continue;
                }
                index.insert(word.to_owned(), tokens.len() as TokenId);
                tokens.push(word.to_owned());
            }
        }
        let unk = tokens.len() as TokenId;
        index.insert(UNK_TOKEN.to_owned(), unk);
        tokens.push(UNK_TOKEN.to_owned());
        Vocabulary {
            tokens,
            index,
            special: SpecialIds {
                unk: Some(unk),
                ..SpecialIds::default()
            },
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn unk(&self) -> Option<TokenId> {
        self.special.unk
    }

    pub fn eos(&self) -> Option<TokenId> {
        self.special.eos
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps each whitespace-separated word to its id; out-of-vocabulary words
    /// become the unknown id, or are dropped when the vocabulary has none.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .filter_map(|w| self.id(w).or(self.special.unk))
            .collect()
    }

    /// Joins token strings with single spaces. Ids outside the vocabulary
    /// render as `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or(UNK_TOKEN));
        }
        out
    }

    /// Returns an error naming the first id that is not `< len()`.
    pub fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.len()) {
            Some(id) => Err(Error::ContractViolation(format!(
                "token id {id} outside vocabulary of size {}",
                self.len()
            ))),
            None => Ok(()),
        }
    }

    pub fn sidecar_path(vocab_path: &Path) -> PathBuf {
        let mut p = vocab_path.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    /// Writes `path` (one token per line) and `path.json` (special ids).
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(bad) = self.tokens.iter().find(|t| t.contains('\n')) {
            return Err(Error::invalid(format!(
                "token {bad:?} contains a newline and cannot be stored line-per-token"
            )));
        }
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
        let sidecar = Self::sidecar_path(path);
        let json = serde_json::to_string(&self.special)?;
        fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = body.lines().map(str::to_owned).collect();
        let sidecar = Self::sidecar_path(path);
        let special = match fs::read_to_string(&sidecar) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => SpecialIds::default(),
            Err(e) => return Err(Error::io(&sidecar, e)),
        };
        Vocabulary::new(tokens, special)
    }
}

/// Tokenizes `text` on Unicode whitespace while building a fresh vocabulary.
pub fn tokenize_build(text: &str) -> (Vec<TokenId>, Vocabulary) {
    let vocab = Vocabulary::build([text]);
    let ids = vocab.encode(text);
    (ids, vocab)
}
