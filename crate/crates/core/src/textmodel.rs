//! Word-level tokenization, vocabularies and conversation-dump ingestion.
//!
//! Surface text is lowercased and split on whitespace; every character that is
//! neither alphanumeric nor whitespace becomes a token of its own. The reserved
//! literals `<unk>` and `<eot>` are recognised as single tokens so that
//! `tokenize(detokenize(ids))` reproduces `ids` exactly.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type TokenId = u32;

pub const UNK: TokenId = 0;
pub const EOT: TokenId = 1;
pub const UNK_SURFACE: &str = "<unk>";
pub const EOT_SURFACE: &str = "<eot>";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocabulary needs at least 2 tokens, got {0}")]
    TooSmall(usize),
    #[error("duplicate vocabulary entry {0:?}")]
    Duplicate(String),
    #[error("vocabulary must start with {UNK_SURFACE} and {EOT_SURFACE}")]
    MissingReserved,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: TokenId, size: usize },
    #[error("no conversations")]
    NoConversations,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense id <-> surface mapping. Ids `0` and `1` are always `<unk>` and `<eot>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw documents.
    ///
    /// Tokens occurring at least `min_count` times are kept, ordered by
    /// descending frequency with lexicographic tie-breaking, after the two
    /// reserved entries.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self, TextError> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for doc in corpus {
            for surface in split_surfaces(doc.as_ref()) {
                seen_any = true;
                if surface == UNK_SURFACE || surface == EOT_SURFACE {
                    continue;
                }
                *counts.entry(surface).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(TextError::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = vec![UNK_SURFACE.to_string(), EOT_SURFACE.to_string()];
        tokens.extend(kept.into_iter().map(|(s, _)| s));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TextError> {
        if tokens.len() < 2 {
            return Err(TextError::TooSmall(tokens.len()));
        }
        if tokens[0] != UNK_SURFACE || tokens[1] != EOT_SURFACE {
            return Err(TextError::MissingReserved);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(TextError::Duplicate(tok.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        TokenSeq(
            split_surfaces(text)
                .into_iter()
                .map(|s| self.id(&s).unwrap_or(UNK))
                .collect(),
        )
    }

    /// Joins surfaces with single spaces. Out-of-range ids render as `<unk>`.
    pub fn detokenize(&self, seq: &[TokenId]) -> String {
        seq.iter()
            .map(|&id| self.surface(id).unwrap_or(UNK_SURFACE))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the text serialization.
    pub fn fingerprint(&self) -> String {
        hex_digest(self.to_text().as_bytes())
    }

    pub fn check(&self, seq: &[TokenId]) -> Result<(), TextError> {
        match seq.iter().find(|&&id| id as usize >= self.len()) {
            Some(&id) => Err(TextError::OutOfRange {
                id,
                size: self.len(),
            }),
            None => Ok(()),
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Lowercases and splits into surface tokens.
pub fn split_surfaces(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let mut word = String::new();
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            if c == '<' {
                if let Some(lit) = [UNK_SURFACE, EOT_SURFACE]
                    .into_iter()
                    .find(|lit| rest.starts_with(lit))
                {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(lit.to_string());
                    rest = &rest[lit.len()..];
                    continue;
                }
            }
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
            rest = &rest[c.len_utf8()..];
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// A sequence of vocabulary ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a TokenSeq>) -> TokenSeq {
        TokenSeq(parts.into_iter().flat_map(|p| p.0.iter().copied()).collect())
    }
}

impl std::ops::Deref for TokenSeq {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    WatermarkedSpeaker,
    Responder,
    Human,
    Llm,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::WatermarkedSpeaker => "watermarked_speaker",
            Role::Responder => "responder",
            Role::Human => "human",
            Role::Llm => "llm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: TokenSeq,
}

/// Run metadata attached to a dialogue. Set once at construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConversationMeta {
    pub key_id: Option<usize>,
    pub temperature: Option<f64>,
    pub h: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationRecord {
    turns: Vec<Turn>,
    meta: ConversationMeta,
}

impl ConversationRecord {
    pub fn new(meta: ConversationMeta) -> Self {
        Self {
            turns: Vec::new(),
            meta,
        }
    }

    pub fn with_turns(turns: Vec<Turn>, meta: ConversationMeta) -> Self {
        Self { turns, meta }
    }

    pub fn push(&mut self, role: Role, text: TokenSeq) {
        self.turns.push(Turn { role, text });
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn meta(&self) -> &ConversationMeta {
        &self.meta
    }

    pub fn turns_by(&self, role: Role) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(move |t| t.role == role)
    }

    /// All turns concatenated in order.
    pub fn transcript(&self) -> TokenSeq {
        TokenSeq::concat(self.turns.iter().map(|t| &t.text))
    }
}

/// Maps dataset role labels (case-insensitive) onto [`Role::Human`] / [`Role::Llm`].
#[derive(Debug, Clone)]
pub struct RoleAliases(HashMap<String, Role>);

impl Default for RoleAliases {
    fn default() -> Self {
        let mut m = HashMap::new();
        for h in ["human", "user", "person a", "person_a", "prompter"] {
            m.insert(h.to_string(), Role::Human);
        }
        for l in [
            "llm",
            "gpt",
            "chatgpt",
            "assistant",
            "bot",
            "model",
            "ai",
            "person b",
            "person_b",
        ] {
            m.insert(l.to_string(), Role::Llm);
        }
        Self(m)
    }
}

impl RoleAliases {
    pub fn insert(&mut self, alias: &str, role: Role) {
        self.0.insert(alias.to_lowercase(), role);
    }

    pub fn resolve(&self, label: &str) -> Option<Role> {
        self.0.get(&label.trim().to_lowercase()).copied()
    }
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    role: String,
    text: String,
}

#[derive(Debug, Deserialize)]
struct RawConversation {
    turns: Vec<RawTurn>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: Vec<ConversationRecord>,
    pub skipped: usize,
    pub total_lines: usize,
}

/// Loads a JSONL dump of `{"turns":[{"role":..,"text":..}]}` lines.
///
/// Lines that fail to parse, carry an unknown role, or have no turns are
/// skipped and counted. Consecutive turns from the same party are merged so
/// that roles alternate.
pub fn ingest_jsonl(
    path: &Path,
    vocab: &Vocabulary,
    aliases: &RoleAliases,
) -> Result<Ingested, TextError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut total_lines = 0;
    for line in reader.lines() {
        let line = line?;
        total_lines += 1;
        match parse_line(&line, vocab, aliases) {
            Some(rec) => records.push(rec),
            None => skipped += 1,
        }
    }
    if records.is_empty() {
        return Err(TextError::NoConversations);
    }
    Ok(Ingested {
        records,
        skipped,
        total_lines,
    })
}

fn parse_line(line: &str, vocab: &Vocabulary, aliases: &RoleAliases) -> Option<ConversationRecord> {
    let raw: RawConversation = serde_json::from_str(line).ok()?;
    if raw.turns.is_empty() {
        return None;
    }
    let mut turns: Vec<Turn> = Vec::with_capacity(raw.turns.len());
    for t in raw.turns {
        let role = aliases.resolve(&t.role)?;
        let text = vocab.tokenize(&t.text);
        match turns.last_mut() {
            Some(prev) if prev.role == role => prev.text.0.extend(text.0),
            _ => turns.push(Turn { role, text }),
        }
    }
    Some(ConversationRecord::with_turns(turns, ConversationMeta::default()))
}
