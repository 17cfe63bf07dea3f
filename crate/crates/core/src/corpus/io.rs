use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ontology::Ontology;
use super::tokenize::tokenize;
use super::types::{BeliefState, Dialogue, SlotKey, SlotValue, Turn, DONTCARE, NONE_VALUE};
use super::{Corpus, CorpusError};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    domains: Vec<String>,
    slots: BTreeMap<String, Vec<String>>,
    dialogues: Vec<RawDialogue>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDialogue {
    id: String,
    turns: Vec<RawTurn>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    #[serde(default)]
    system: String,
    user: String,
    #[serde(default)]
    belief: BTreeMap<String, String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    parse_corpus(&text)
}

/// Parses and validates corpus JSON.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    let raw: RawCorpus = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let ontology = Ontology::new(raw.domains, raw.slots)?;

    let mut offenders = Vec::new();
    let mut dialogues = Vec::with_capacity(raw.dialogues.len());
    let mut seen_ids = std::collections::BTreeSet::new();
    for rd in raw.dialogues {
        if !seen_ids.insert(rd.id.clone()) {
            return Err(CorpusError::Schema(format!("duplicate dialogue id {:?}", rd.id)));
        }
        if rd.turns.is_empty() {
            return Err(CorpusError::Schema(format!("dialogue {:?} has no turns", rd.id)));
        }
        let mut turns = Vec::with_capacity(rd.turns.len());
        for (ti, rt) in rd.turns.into_iter().enumerate() {
            let user = tokenize(&rt.user);
            if user.is_empty() {
                return Err(CorpusError::Schema(format!(
                    "dialogue {:?} turn {} has an empty user utterance",
                    rd.id,
                    ti + 1
                )));
            }
            let mut belief = BeliefState::new();
            for (k, v) in rt.belief {
                let Some(key) = SlotKey::parse(&k) else {
                    offenders.push(k);
                    continue;
                };
                if !ontology.contains(&key) {
                    offenders.push(k);
                    continue;
                }
                let toks = tokenize(&v);
                let value = match toks.as_slice() {
                    [] => {
                        return Err(CorpusError::Schema(format!(
                            "empty value for {k} in dialogue {:?}",
                            rd.id
                        )))
                    }
                    [t] if t == NONE_VALUE => continue,
                    [t] if t == DONTCARE => SlotValue::DontCare,
                    _ => SlotValue::Value(toks),
                };
                belief.insert(key, value);
            }
            turns.push(Turn { system: tokenize(&rt.system), user, belief });
        }
        dialogues.push(Dialogue { id: rd.id, turns });
    }
    if !offenders.is_empty() {
        offenders.sort();
        offenders.dedup();
        return Err(CorpusError::UnknownPairs(offenders));
    }
    Ok(Corpus::new(ontology, dialogues))
}

/// Canonical JSON text of a corpus. Stable for a given corpus value.
pub fn corpus_to_json(corpus: &Corpus) -> String {
    let raw = RawCorpus {
        domains: corpus.ontology().domains().to_vec(),
        slots: corpus.ontology().slot_map().clone(),
        dialogues: corpus
            .dialogues()
            .iter()
            .map(|d| RawDialogue {
                id: d.id.clone(),
                turns: d
                    .turns
                    .iter()
                    .map(|t| RawTurn {
                        system: t.system.join(" "),
                        user: t.user.join(" "),
                        belief: t.belief.to_raw(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&raw).expect("corpus serializes");
    s.push('\n');
    s
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, corpus_to_json(corpus))
        .map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))
}

/// Belief state from its `domain-slot -> value` file form.
pub fn parse_belief(raw: &BTreeMap<String, String>, ontology: &Ontology) -> Result<BeliefState, CorpusError> {
    let mut belief = BeliefState::new();
    let mut offenders = Vec::new();
    for (k, v) in raw {
        match SlotKey::parse(k) {
            Some(key) if ontology.contains(&key) => {
                let toks = tokenize(v);
                let value = match toks.as_slice() {
                    [] => return Err(CorpusError::Schema(format!("empty value for {k}"))),
                    [t] if t == NONE_VALUE => continue,
                    [t] if t == DONTCARE => SlotValue::DontCare,
                    _ => SlotValue::Value(toks),
                };
                belief.insert(key, value);
            }
            _ => offenders.push(k.clone()),
        }
    }
    if offenders.is_empty() {
        Ok(belief)
    } else {
        Err(CorpusError::UnknownPairs(offenders))
    }
}
