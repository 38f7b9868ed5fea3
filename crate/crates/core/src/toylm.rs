//! Add-k backoff n-gram language model and the copy-mixture responder.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textmodel::{hex_digest, TokenId, TokenSeq, Vocabulary};
use crate::wmgen::{LanguageModel, NextTokenDistribution};

const FORMAT: &str = "mimicry-lab-ngram";
const VERSION: u32 = 1;
/// Upper bound on the suffix length the copy agent tries to match.
pub const MAX_COPY_MATCH: usize = 64;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus has {got} tokens, order {order} needs at least {order}")]
    TooShort { got: usize, order: usize },
    #[error("invalid model parameter: {0}")]
    Param(String),
    #[error("model vocabulary hash {model} does not match supplied vocabulary {given}")]
    VocabMismatch { model: String, given: String },
    #[error("token id {0} out of range")]
    OutOfRange(TokenId),
    #[error("unsupported model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Text(#[from] crate::textmodel::TextError),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Continuations {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u32)>,
}

/// Add-k smoothed n-gram model with hard backoff: the longest seen context
/// of length `<= order - 1` decides the distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLM {
    order: usize,
    k: f64,
    vocab_size: usize,
    vocab_hash: String,
    unigram: Vec<u64>,
    unigram_total: u64,
    /// `contexts[j]` holds contexts of length `j + 1`.
    contexts: Vec<HashMap<Box<[TokenId]>, Continuations>>,
}

impl NgramLM {
    pub fn train(corpus: &[TokenSeq], order: usize, k: f64, vocab: &Vocabulary) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::Param("order must be >= 1".into()));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(LmError::Param(format!("k must be > 0, got {k}")));
        }
        let total: usize = corpus.iter().map(TokenSeq::len).sum();
        if total == 0 {
            return Err(LmError::EmptyCorpus);
        }
        if total < order {
            return Err(LmError::TooShort { got: total, order });
        }
        let v = vocab.len();
        let mut unigram = vec![0u64; v];
        let mut raw: Vec<HashMap<Box<[TokenId]>, BTreeMap<TokenId, u32>>> =
            vec![HashMap::new(); order - 1];
        for seq in corpus {
            vocab.check(seq).map_err(|_| {
                LmError::OutOfRange(*seq.iter().find(|&&t| t as usize >= v).unwrap())
            })?;
            for (i, &tok) in seq.iter().enumerate() {
                unigram[tok as usize] += 1;
                for len in 1..order.min(i + 1) {
                    let ctx: Box<[TokenId]> = seq[i - len..i].into();
                    *raw[len - 1].entry(ctx).or_default().entry(tok).or_default() += 1;
                }
            }
        }
        let contexts = raw
            .into_iter()
            .map(|table| {
                table
                    .into_iter()
                    .map(|(ctx, next)| {
                        let total = next.values().map(|&c| u64::from(c)).sum();
                        (ctx, Continuations { total, next: next.into_iter().collect() })
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            order,
            k,
            vocab_size: v,
            vocab_hash: vocab.fingerprint(),
            unigram_total: total as u64,
            unigram,
            contexts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    /// Same counts, different smoothing constant.
    pub fn with_smoothing(&self, k: f64) -> Result<Self, LmError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(LmError::Param(format!("k must be > 0, got {k}")));
        }
        Ok(Self { k, ..self.clone() })
    }

    fn lookup(&self, history: &[TokenId]) -> Option<&Continuations> {
        let longest = (self.order - 1).min(history.len());
        (1..=longest).rev().find_map(|len| {
            self.contexts[len - 1].get(&history[history.len() - len..])
        })
    }

    /// Conditional probability `p(token | history)`.
    pub fn prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let kv = self.k * self.vocab_size as f64;
        match self.lookup(history) {
            Some(c) => {
                let n = c
                    .next
                    .binary_search_by_key(&token, |e| e.0)
                    .map(|i| c.next[i].1)
                    .unwrap_or(0);
                (f64::from(n) + self.k) / (c.total as f64 + kv)
            }
            None => (self.unigram[token as usize] as f64 + self.k) / (self.unigram_total as f64 + kv),
        }
    }

    pub fn next_dist_for(&self, history: &[TokenId]) -> NextTokenDistribution {
        self.next_dist(history)
    }

    fn to_file(&self, vocab: &Vocabulary) -> ModelFile {
        let mut contexts: Vec<ContextEntry> = self
            .contexts
            .iter()
            .flat_map(|t| t.iter())
            .map(|(ctx, c)| ContextEntry {
                context: ctx.to_vec(),
                next: c.next.clone(),
            })
            .collect();
        contexts.sort_by(|a, b| a.context.len().cmp(&b.context.len()).then(a.context.cmp(&b.context)));
        ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            order: self.order,
            k: self.k,
            vocab_hash: self.vocab_hash.clone(),
            vocab: vocab.tokens().to_vec(),
            unigram: self.unigram.clone(),
            contexts,
        }
    }

    pub fn to_json(&self, vocab: &Vocabulary) -> Result<String, LmError> {
        self.check_vocab(vocab)?;
        Ok(serde_json::to_string(&self.to_file(vocab))?)
    }

    /// Hex SHA-256 of the serialized model.
    pub fn checksum(&self, vocab: &Vocabulary) -> Result<String, LmError> {
        Ok(hex_digest(self.to_json(vocab)?.as_bytes()))
    }

    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<(), LmError> {
        fs::write(path, self.to_json(vocab)?)?;
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<(Self, Vocabulary), LmError> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(LmError::Format(format!("{} v{}", file.format, file.version)));
        }
        let vocab = Vocabulary::from_tokens(file.vocab)?;
        if vocab.fingerprint() != file.vocab_hash {
            return Err(LmError::VocabMismatch {
                model: file.vocab_hash,
                given: vocab.fingerprint(),
            });
        }
        if file.unigram.len() != vocab.len() || file.order == 0 || !(file.k > 0.0) {
            return Err(LmError::Format("inconsistent tables".into()));
        }
        let mut contexts = vec![HashMap::new(); file.order - 1];
        for entry in file.contexts {
            let len = entry.context.len();
            if len == 0 || len >= file.order {
                return Err(LmError::Format(format!("context of length {len}")));
            }
            if let Some(&bad) = entry
                .context
                .iter()
                .chain(entry.next.iter().map(|e| &e.0))
                .find(|&&t| t as usize >= vocab.len())
            {
                return Err(LmError::OutOfRange(bad));
            }
            let total = entry.next.iter().map(|e| u64::from(e.1)).sum();
            contexts[len - 1].insert(
                entry.context.into_boxed_slice(),
                Continuations { total, next: entry.next },
            );
        }
        let unigram_total = file.unigram.iter().sum();
        let lm = Self {
            order: file.order,
            k: file.k,
            vocab_size: vocab.len(),
            vocab_hash: file.vocab_hash,
            unigram: file.unigram,
            unigram_total,
            contexts,
        };
        Ok((lm, vocab))
    }

    pub fn load(path: &Path) -> Result<(Self, Vocabulary), LmError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Loads a model and refuses it unless it was trained on `vocab`.
    pub fn load_with_vocab(path: &Path, vocab: &Vocabulary) -> Result<Self, LmError> {
        let (lm, _) = Self::load(path)?;
        lm.check_vocab(vocab)?;
        Ok(lm)
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), LmError> {
        let given = vocab.fingerprint();
        if given != self.vocab_hash {
            return Err(LmError::VocabMismatch {
                model: self.vocab_hash.clone(),
                given,
            });
        }
        Ok(())
    }
}

impl LanguageModel for NgramLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn fill_logits(&self, history: &[TokenId], out: &mut Vec<f64>) {
        let kv = self.k * self.vocab_size as f64;
        out.clear();
        match self.lookup(history) {
            Some(c) => {
                let log_z = (c.total as f64 + kv).ln();
                out.resize(self.vocab_size, self.k.ln() - log_z);
                for &(tok, n) in &c.next {
                    out[tok as usize] = (f64::from(n) + self.k).ln() - log_z;
                }
            }
            None => {
                let log_z = (self.unigram_total as f64 + kv).ln();
                out.extend(self.unigram.iter().map(|&n| (n as f64 + self.k).ln() - log_z));
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u32)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    k: f64,
    vocab_hash: String,
    vocab: Vec<String>,
    unigram: Vec<u64>,
    contexts: Vec<ContextEntry>,
}

pub fn train_ngram(corpus: &[TokenSeq], order: usize, k: f64, vocab: &Vocabulary) -> Result<NgramLM, LmError> {
    NgramLM::train(corpus, order, k, vocab)
}

/// Longest suffix of `history` (length `>= min_match`) that also occurs in
/// `conversation` with a following token. Ties go to the latest occurrence.
/// Returns `(match length, continuation token)`.
pub fn longest_suffix_match(
    history: &[TokenId],
    conversation: &[TokenId],
    min_match: usize,
) -> Option<(usize, TokenId)> {
    let cap = history.len().min(MAX_COPY_MATCH);
    if min_match == 0 || cap < min_match {
        return None;
    }
    let last = *history.last()?;
    let mut best: Option<(usize, TokenId)> = None;
    // `end` is the exclusive end of the candidate occurrence; its continuation
    // is conversation[end].
    for end in (1..conversation.len()).rev() {
        if conversation[end - 1] != last {
            continue;
        }
        let limit = cap.min(end);
        let mut len = 1;
        while len < limit && conversation[end - 1 - len] == history[history.len() - 1 - len] {
            len += 1;
        }
        if len >= min_match && best.map_or(true, |(l, _)| len > l) {
            best = Some((len, conversation[end]));
            if len == cap {
                break;
            }
        }
    }
    best
}

/// Base model plus an induction-style copy channel over the conversation.
#[derive(Debug, Clone)]
pub struct CopyMixtureAgent<'a> {
    pub base: &'a NgramLM,
    pub lambda: f64,
    pub min_match: usize,
}

impl<'a> CopyMixtureAgent<'a> {
    pub fn new(base: &'a NgramLM, lambda: f64, min_match: usize) -> Result<Self, LmError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(LmError::Param(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        if min_match == 0 {
            return Err(LmError::Param("min_match must be >= 1".into()));
        }
        Ok(Self { base, lambda, min_match })
    }

    pub fn fill_logits(&self, history: &[TokenId], conversation: &[TokenId], out: &mut Vec<f64>) {
        self.base.fill_logits(history, out);
        if self.lambda == 0.0 {
            return;
        }
        if let Some((_, copy)) = longest_suffix_match(history, conversation, self.min_match) {
            let c = copy as usize;
            let base = out[c].exp();
            let keep = (1.0 - self.lambda).ln();
            out.iter_mut().for_each(|l| *l += keep);
            out[c] = ((1.0 - self.lambda) * base + self.lambda).ln();
        }
    }

    pub fn next_dist(&self, history: &[TokenId], conversation: &[TokenId]) -> NextTokenDistribution {
        let mut logits = Vec::with_capacity(self.base.vocab_size());
        self.fill_logits(history, conversation, &mut logits);
        NextTokenDistribution { logits }
    }

    /// Binds the agent to a fixed conversation so it can drive `generate`.
    pub fn in_conversation<'c>(&'c self, conversation: &'c [TokenId]) -> AgentInConversation<'c, 'a> {
        AgentInConversation { agent: self, conversation }
    }
}

pub fn agent_next_dist(
    agent: &CopyMixtureAgent<'_>,
    history: &[TokenId],
    conversation: &[TokenId],
) -> NextTokenDistribution {
    agent.next_dist(history, conversation)
}

#[derive(Debug, Clone, Copy)]
pub struct AgentInConversation<'c, 'a> {
    agent: &'c CopyMixtureAgent<'a>,
    conversation: &'c [TokenId],
}

impl LanguageModel for AgentInConversation<'_, '_> {
    fn vocab_size(&self) -> usize {
        self.agent.base.vocab_size()
    }

    fn fill_logits(&self, history: &[TokenId], out: &mut Vec<f64>) {
        self.agent.fill_logits(history, self.conversation, out)
    }
}
