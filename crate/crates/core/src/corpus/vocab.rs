use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::types::{DONTCARE, NONE_VALUE};
use super::{Corpus, CorpusError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const DONTCARE_ID: usize = 4;
pub const NONE_ID: usize = 5;
pub const NUM_RESERVED: usize = 6;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<unk>", "<sos>", "<eos>", DONTCARE, NONE_VALUE];

/// Token/id bijection. Reserved tokens occupy ids `0..NUM_RESERVED`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Every token of utterances and belief values with count ≥ `min_freq`.
    /// Ties are broken alphabetically so ids do not depend on corpus order.
    pub fn build(corpus: &Corpus, min_freq: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for d in corpus.dialogues() {
            for t in &d.turns {
                for tok in t.user.iter().chain(&t.system) {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
                for (_, v) in t.belief.iter() {
                    if let super::SlotValue::Value(toks) = v {
                        for tok in toks {
                            *counts.entry(tok.as_str()).or_default() += 1;
                        }
                    }
                }
            }
        }
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        for (tok, c) in counts {
            if c >= min_freq.max(1) && !RESERVED_TOKENS.contains(&tok) {
                tokens.push(tok.to_string());
            }
        }
        Self::from_tokens_unchecked(tokens)
    }

    fn from_tokens_unchecked(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Rebuilds from a saved token list, checking the reserved prefix.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.len() < NUM_RESERVED
            || tokens[..NUM_RESERVED].iter().zip(RESERVED_TOKENS).any(|(a, b)| a != b)
        {
            return Err(CorpusError::Schema("vocabulary lacks the reserved prefix".into()));
        }
        let v = Self::from_tokens_unchecked(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(CorpusError::Schema("vocabulary has duplicate tokens".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn is_reserved(id: usize) -> bool {
    id < NUM_RESERVED
}
