//! Global token set and deterministic subword tokenization.
//!
//! Every word maps onto known ids: greedy longest-prefix matching against the
//! vocabulary, with `<unk>` absorbing any remainder that cannot be matched.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 128;

/// A document as a list of sentences, each a list of token ids.
pub type SentenceTokens = Vec<Vec<TokenId>>;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    pad_id: TokenId,
    unk_id: TokenId,
    max_token_chars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDocument {
    pub token_ids: Vec<TokenId>,
    pub raw_text: String,
    pub label: Option<usize>,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

impl Vocabulary {
    /// Loads a vocabulary file: one token per line, line index is the id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r').to_string()))
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::VocabularyTooSmall(tokens.len()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut max_token_chars = 0;
        for (line, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), line as TokenId).is_some() {
                return Err(Error::DuplicateToken {
                    token: token.clone(),
                    line: line + 1,
                });
            }
            max_token_chars = max_token_chars.max(token.chars().count());
        }
        let pad_id = *index
            .get(PAD_TOKEN)
            .ok_or_else(|| Error::MissingSpecialToken(PAD_TOKEN.into()))?;
        let unk_id = *index
            .get(UNK_TOKEN)
            .ok_or_else(|| Error::MissingSpecialToken(UNK_TOKEN.into()))?;
        Ok(Self {
            tokens,
            index,
            pad_id,
            unk_id,
            max_token_chars,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad_id
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
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

    fn lookup_piece(&self, piece: &str) -> Option<TokenId> {
        self.index
            .get(piece)
            .copied()
            .filter(|&id| id != self.pad_id && id != self.unk_id)
    }

    /// Greedy longest-prefix split of a single (already lowercased) word.
    fn push_word(&self, word: &str, out: &mut Vec<TokenId>) {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let chars = bounds.len() - 1;
        let mut start = 0;
        while start < chars {
            let longest = (start + self.max_token_chars).min(chars);
            let found = (start + 1..=longest)
                .rev()
                .find_map(|end| {
                    self.lookup_piece(&word[bounds[start]..bounds[end]])
                        .map(|id| (id, end))
                });
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.push(self.unk_id);
                    break;
                }
            }
        }
    }

    /// Untruncated subword ids of whitespace-separated words in `text`.
    pub fn encode_words(&self, text: &str) -> Vec<TokenId> {
        let lowered = text.to_lowercase();
        let mut out = Vec::new();
        for word in lowered.split_whitespace() {
            self.push_word(word, &mut out);
        }
        out
    }

    /// Tokenizes raw text, truncating to `max_len` ids.
    pub fn tokenize(&self, text: &str, max_len: usize) -> TokenizedDocument {
        let mut token_ids = self.encode_words(text);
        token_ids.truncate(max_len);
        TokenizedDocument {
            token_ids,
            raw_text: text.to_string(),
            label: None,
        }
    }

    /// Per-sentence token ids, as consumed by the occurrence memory.
    pub fn sentence_tokens(&self, text: &str) -> SentenceTokens {
        split_sentences(text)
            .into_iter()
            .map(|s| self.encode_words(&s))
            .filter(|s| !s.is_empty())
            .collect()
    }

    /// Model input for a document: the concatenated sentence tokenizations
    /// (terminators removed), truncated to `max_len`. A document with no
    /// tokens at all becomes a single `<unk>`.
    pub fn document(&self, text: &str, max_len: usize, label: Option<usize>) -> TokenizedDocument {
        let mut token_ids: Vec<TokenId> = self.sentence_tokens(text).into_iter().flatten().collect();
        token_ids.truncate(max_len.max(1));
        if token_ids.is_empty() {
            token_ids.push(self.unk_id);
        }
        TokenizedDocument {
            token_ids,
            raw_text: text.to_string(),
            label,
        }
    }
}

/// Splits on `.`, `!`, `?` and newlines; trims and drops empty pieces.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
