//! Dialogue data model, JSON ingestion, vocabulary, history windows and the
//! dataset splits used by the zero-shot and few-shot protocols.

mod io;
mod multiwoz;
mod ontology;
pub mod synth;
mod tokenize;
mod types;
mod vocab;

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use io::{corpus_to_json, load_corpus, parse_belief, parse_corpus, save_corpus};
pub use multiwoz::{convert_multiwoz, KEPT_DOMAINS};
pub use ontology::Ontology;
pub use tokenize::{canonical, tokenize};
pub use types::{
    BeliefState, Dialogue, DomainSlot, GateLabel, SlotKey, SlotValue, Turn, DONTCARE, NONE_VALUE,
};
pub use vocab::{
    is_reserved, Vocabulary, DONTCARE_ID, EOS, NONE_ID, NUM_RESERVED, PAD, RESERVED_TOKENS, SOS,
    UNK,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unregistered (domain, slot) labels: {}", .0.join(", "))]
    UnknownPairs(Vec<String>),
    #[error("config error: {0}")]
    Config(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("no dialogues for domain {0:?}")]
    EmptyDomain(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Annotated dialogues plus the pair registry they are labeled against.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    ontology: Ontology,
    dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn new(ontology: Ontology, dialogues: Vec<Dialogue>) -> Self {
        Corpus { ontology, dialogues }
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.dialogues.iter().map(|d| d.id.clone()).collect()
    }

    fn with_dialogues(&self, dialogues: Vec<Dialogue>) -> Corpus {
        Corpus { ontology: self.ontology.clone(), dialogues }
    }

    /// Dialogues whose labels touch `domain`.
    pub fn filter_domain(&self, domain: &str) -> Result<Corpus, CorpusError> {
        if !self.ontology.has_domain(domain) {
            return Err(CorpusError::UnknownDomain(domain.to_string()));
        }
        Ok(self.with_dialogues(
            self.dialogues.iter().filter(|d| d.touches_domain(domain)).cloned().collect(),
        ))
    }

    /// Concatenates dialogues of corpora sharing one registry.
    pub fn merge(&self, other: &Corpus) -> Result<Corpus, CorpusError> {
        if self.ontology != other.ontology {
            return Err(CorpusError::Schema("cannot merge corpora with different registries".into()));
        }
        let mut ds = self.dialogues.clone();
        ds.extend(other.dialogues.iter().cloned());
        Ok(self.with_dialogues(ds))
    }

    /// First `n` dialogues.
    pub fn take(&self, n: usize) -> Corpus {
        self.with_dialogues(self.dialogues.iter().take(n).cloned().collect())
    }

    /// Splits into consecutive chunks of the given sizes.
    pub fn split_sizes(&self, sizes: &[usize]) -> Result<Vec<Corpus>, CorpusError> {
        if sizes.iter().sum::<usize>() > self.len() {
            return Err(CorpusError::Config(format!(
                "split sizes {sizes:?} exceed {} dialogues",
                self.len()
            )));
        }
        let mut out = Vec::new();
        let mut off = 0;
        for &s in sizes {
            out.push(self.with_dialogues(self.dialogues[off..off + s].to_vec()));
            off += s;
        }
        Ok(out)
    }
}

/// How many preceding turns [`make_history`] includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryWindow {
    All,
    Turns(usize),
}

impl Default for HistoryWindow {
    fn default() -> Self {
        HistoryWindow::All
    }
}

/// Tokens of turns `t - l ..= t` (1-based `t`), clipped at the start of the
/// dialogue. Within a turn the system prompt precedes the user utterance,
/// matching the order in which they were spoken.
pub fn make_history(
    dialogue: &Dialogue,
    t: usize,
    window: HistoryWindow,
) -> Result<Vec<String>, CorpusError> {
    if t == 0 || t > dialogue.turns.len() {
        return Err(CorpusError::Index(format!(
            "turn {t} out of range 1..={} in dialogue {:?}",
            dialogue.turns.len(),
            dialogue.id
        )));
    }
    let first = match window {
        HistoryWindow::All => 1,
        HistoryWindow::Turns(0) => {
            return Err(CorpusError::Config("history window must be at least 1".into()))
        }
        HistoryWindow::Turns(l) => t.saturating_sub(l).max(1),
    };
    let mut out = Vec::new();
    for turn in &dialogue.turns[first - 1..t] {
        out.extend(turn.system.iter().cloned());
        out.extend(turn.user.iter().cloned());
    }
    Ok(out)
}

/// Gate class of a pair and the value tokens the decoder should emit.
/// PTR values end with `<eos>`; the sentinel-only forms do not.
pub fn gate_label_of(belief: &BeliefState, pair: &DomainSlot) -> (GateLabel, Vec<String>) {
    match belief.get(&pair.key()) {
        None => (GateLabel::None, vec![NONE_VALUE.to_string()]),
        Some(SlotValue::DontCare) => (GateLabel::DontCare, vec![DONTCARE.to_string()]),
        Some(SlotValue::Value(toks)) => {
            let mut v = toks.clone();
            v.push(RESERVED_TOKENS[EOS].to_string());
            (GateLabel::Ptr, v)
        }
    }
}

/// Replaces each non-reserved id with [`UNK`] with probability `rate`.
pub fn word_dropout(ids: &[usize], rate: f64, seed: u64) -> Result<Vec<usize>, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    word_dropout_with(ids, rate, &mut rng)
}

pub fn word_dropout_with<R: Rng>(
    ids: &[usize],
    rate: f64,
    rng: &mut R,
) -> Result<Vec<usize>, CorpusError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(CorpusError::Config(format!("word dropout rate {rate} not in [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(ids.to_vec());
    }
    Ok(ids
        .iter()
        .map(|&id| if !is_reserved(id) && rng.gen::<f64>() < rate { UNK } else { id })
        .collect())
}

/// Splits off every dialogue touching `domain`. The remainder has the
/// domain's labels stripped; the registry is kept whole in both halves.
pub fn exclude_domain(corpus: &Corpus, domain: &str) -> Result<(Corpus, Corpus), CorpusError> {
    if !corpus.ontology().has_domain(domain) {
        return Err(CorpusError::UnknownDomain(domain.to_string()));
    }
    let (held, rest): (Vec<Dialogue>, Vec<Dialogue>) =
        corpus.dialogues().iter().cloned().partition(|d| d.touches_domain(domain));
    if held.is_empty() {
        return Err(CorpusError::EmptyDomain(domain.to_string()));
    }
    let rest = rest
        .into_iter()
        .map(|mut d| {
            for t in &mut d.turns {
                t.belief.retain(|k, _| k.domain != domain);
            }
            d
        })
        .collect();
    Ok((corpus.with_dialogues(rest), corpus.with_dialogues(held)))
}

/// Uniform dialogue-level sample (without replacement) of the dialogues
/// touching `domain`, of size `max(1, round(fraction * count))`. The
/// sampled dialogues keep their original relative order.
pub fn sample_fraction(
    corpus: &Corpus,
    domain: &str,
    fraction: f64,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::Config(format!("fraction {fraction} not in (0, 1]")));
    }
    let pool = corpus.filter_domain(domain)?;
    if pool.is_empty() {
        return Err(CorpusError::EmptyDomain(domain.to_string()));
    }
    let n = ((fraction * pool.len() as f64).round() as usize).clamp(1, pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    Ok(pool.with_dialogues(picked.into_iter().map(|i| pool.dialogues[i].clone()).collect()))
}
