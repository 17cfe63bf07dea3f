use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Literal used for "does not care" values in files and predictions.
pub const DONTCARE: &str = "dontcare";
/// Literal used for a not-mentioned value.
pub const NONE_VALUE: &str = "none";

/// A (domain, slot) name pair. Orders by domain, then slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotKey {
    pub domain: String,
    pub slot: String,
}

impl SlotKey {
    pub fn new(domain: &str, slot: &str) -> Self {
        SlotKey { domain: domain.to_string(), slot: slot.to_string() }
    }

    /// Parses the hyphen-joined `domain-slot` form. Domains never contain `-`.
    pub fn parse(joined: &str) -> Option<Self> {
        let (d, s) = joined.split_once('-')?;
        if d.is_empty() || s.is_empty() {
            return None;
        }
        Some(SlotKey::new(d, s))
    }

    pub fn joined(&self) -> String {
        format!("{}-{}", self.domain, self.slot)
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.slot)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotValue {
    DontCare,
    Value(Vec<String>),
}

impl SlotValue {
    /// Canonical text: tokens joined by single spaces, or `dontcare`.
    pub fn text(&self) -> String {
        match self {
            SlotValue::DontCare => DONTCARE.to_string(),
            SlotValue::Value(toks) => toks.join(" "),
        }
    }
}

/// Cumulative dialogue state of one turn. Absent keys are not mentioned.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BeliefState(BTreeMap<SlotKey, SlotValue>);

impl BeliefState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: SlotKey, value: SlotValue) -> Option<SlotValue> {
        self.0.insert(key, value)
    }

    pub fn get(&self, key: &SlotKey) -> Option<&SlotValue> {
        self.0.get(key)
    }

    pub fn remove(&mut self, key: &SlotKey) -> Option<SlotValue> {
        self.0.remove(key)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotKey, &SlotValue)> {
        self.0.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &SlotKey> {
        self.0.keys()
    }

    pub fn touches_domain(&self, domain: &str) -> bool {
        self.0.keys().any(|k| k.domain == domain)
    }

    pub fn retain(&mut self, mut f: impl FnMut(&SlotKey, &SlotValue) -> bool) {
        self.0.retain(|k, v| f(k, v));
    }

    /// `domain-slot -> value text`, the file representation.
    pub fn to_raw(&self) -> BTreeMap<String, String> {
        self.0.iter().map(|(k, v)| (k.joined(), v.text())).collect()
    }
}

impl FromIterator<(SlotKey, SlotValue)> for BeliefState {
    fn from_iter<I: IntoIterator<Item = (SlotKey, SlotValue)>>(iter: I) -> Self {
        BeliefState(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub system: Vec<String>,
    pub user: Vec<String>,
    pub belief: BeliefState,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn touches_domain(&self, domain: &str) -> bool {
        self.turns.iter().any(|t| t.belief.touches_domain(domain))
    }

    pub fn domains(&self) -> Vec<String> {
        let mut ds: Vec<String> = self
            .turns
            .iter()
            .flat_map(|t| t.belief.keys().map(|k| k.domain.clone()))
            .collect();
        ds.sort();
        ds.dedup();
        ds
    }
}

/// A registered (domain, slot) pair and its position `j` in the registry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSlot {
    pub domain: String,
    pub slot: String,
    pub index: usize,
}

impl DomainSlot {
    pub fn key(&self) -> SlotKey {
        SlotKey::new(&self.domain, &self.slot)
    }
}

/// Three-way slot gate classes, in classifier row order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateLabel {
    Ptr,
    None,
    DontCare,
}

impl GateLabel {
    pub const ALL: [GateLabel; 3] = [GateLabel::Ptr, GateLabel::None, GateLabel::DontCare];

    pub fn index(self) -> usize {
        match self {
            GateLabel::Ptr => 0,
            GateLabel::None => 1,
            GateLabel::DontCare => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GateLabel::Ptr => "ptr",
            GateLabel::None => "none",
            GateLabel::DontCare => "dontcare",
        }
    }
}
