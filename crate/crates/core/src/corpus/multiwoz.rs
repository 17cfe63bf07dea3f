//! Best-effort conversion of raw MultiWOZ 2.x `data.json` annotations into
//! the corpus model.
//!
//! Choices, none of which claim fidelity to any published preprocessing:
//! - only attraction, hotel, restaurant, taxi and train are kept; hospital
//!   and police labels are dropped;
//! - log entries alternate user / system, and the belief after user turn t is
//!   the `metadata` of the system entry that follows it. A trailing user
//!   entry without a system reply is dropped;
//! - slot names are lowercased with spaces removed (`pricerange` becomes
//!   `price`); booking fields get a `book` prefix (`bookpeople`); the
//!   `booked` list is ignored;
//! - values `""`, `not mentioned` and `none` mean not mentioned; `dontcare`,
//!   `dont care`, `don't care`, `do n't care` and `any` mean dontcare; a
//!   `|`-separated alternative list keeps its first entry;
//! - the registry holds exactly the pairs seen in the converted file.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::Value;

use super::ontology::Ontology;
use super::tokenize::tokenize;
use super::types::{BeliefState, Dialogue, SlotKey, SlotValue, Turn};
use super::{Corpus, CorpusError};

pub const KEPT_DOMAINS: [&str; 5] = ["attraction", "hotel", "restaurant", "taxi", "train"];

#[derive(Deserialize)]
struct RawDialogue {
    log: Vec<RawEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    #[serde(default)]
    text: String,
    #[serde(default)]
    metadata: BTreeMap<String, Value>,
}

fn slot_name(raw: &str) -> String {
    let s: String = raw.to_lowercase().chars().filter(|c| !c.is_whitespace() && *c != '-').collect();
    match s.as_str() {
        "pricerange" => "price".into(),
        _ => s,
    }
}

fn value_of(raw: &str) -> Option<SlotValue> {
    let first = raw.split('|').next().unwrap_or("");
    let toks = tokenize(first);
    match toks.join(" ").as_str() {
        "" | "not mentioned" | "none" => None,
        "dontcare" | "dont care" | "don't care" | "do n't care" | "any" => Some(SlotValue::DontCare),
        _ => Some(SlotValue::Value(toks)),
    }
}

fn belief_of(metadata: &BTreeMap<String, Value>) -> BeliefState {
    let mut belief = BeliefState::new();
    for domain in KEPT_DOMAINS {
        let Some(Value::Object(parts)) = metadata.get(domain) else { continue };
        for (part, prefix) in [("semi", ""), ("book", "book")] {
            let Some(Value::Object(slots)) = parts.get(part) else { continue };
            for (slot, v) in slots {
                let Value::String(text) = v else { continue };
                let name = format!("{prefix}{}", slot_name(slot));
                if name.is_empty() || name == "bookbooked" {
                    continue;
                }
                if let Some(value) = value_of(text) {
                    belief.insert(SlotKey::new(domain, &name), value);
                }
            }
        }
    }
    belief
}

/// Converts the text of a MultiWOZ `data.json` (an object keyed by dialogue
/// id). Dialogues come out sorted by id.
pub fn convert_multiwoz(text: &str) -> Result<Corpus, CorpusError> {
    let raw: BTreeMap<String, RawDialogue> = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut slots: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut dialogues = Vec::new();
    for (id, rd) in raw {
        let mut turns = Vec::new();
        let mut system = Vec::new();
        for pair in rd.log.chunks_exact(2) {
            let user = tokenize(&pair[0].text);
            let belief = belief_of(&pair[1].metadata);
            for k in belief.keys() {
                let list = slots.entry(k.domain.clone()).or_default();
                if !list.contains(&k.slot) {
                    list.push(k.slot.clone());
                }
            }
            if !user.is_empty() {
                turns.push(Turn { system: std::mem::take(&mut system), user, belief });
            }
            system = tokenize(&pair[1].text);
        }
        if !turns.is_empty() {
            dialogues.push(Dialogue { id, turns });
        }
    }
    let ontology = Ontology::new(slots.keys().cloned().collect::<Vec<_>>(), slots)?;
    Ok(Corpus::new(ontology, dialogues))
}
