use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::types::{DomainSlot, SlotKey};
use super::CorpusError;

/// Registered domains, slots and the J (domain, slot) pairs, all in sorted
/// order so indices are reproducible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    domains: Vec<String>,
    slots: BTreeMap<String, Vec<String>>,
    #[serde(skip)]
    pairs: Vec<DomainSlot>,
    #[serde(skip)]
    slot_names: Vec<String>,
}

impl Ontology {
    pub fn new(
        domains: impl IntoIterator<Item = String>,
        slots: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, CorpusError> {
        let domains: BTreeSet<String> = domains.into_iter().collect();
        for d in &domains {
            if d.is_empty() || d.contains('-') || d.contains(char::is_whitespace) {
                return Err(CorpusError::Schema(format!("invalid domain name {d:?}")));
            }
        }
        let mut sorted_slots = BTreeMap::new();
        for (d, ss) in slots {
            if !domains.contains(&d) {
                return Err(CorpusError::Schema(format!("slots listed for unknown domain {d:?}")));
            }
            let set: BTreeSet<String> = ss.iter().cloned().collect();
            if set.len() != ss.len() {
                return Err(CorpusError::Config(format!("duplicate slot names in domain {d:?}")));
            }
            if let Some(bad) = set.iter().find(|s| s.is_empty()) {
                return Err(CorpusError::Schema(format!("empty slot name {bad:?} in {d}")));
            }
            sorted_slots.insert(d, set.into_iter().collect::<Vec<_>>());
        }
        Ok(Self::from_parts(domains.into_iter().collect(), sorted_slots))
    }

    fn from_parts(domains: Vec<String>, slots: BTreeMap<String, Vec<String>>) -> Self {
        let mut pairs = Vec::new();
        for d in &domains {
            for s in slots.get(d).map(Vec::as_slice).unwrap_or(&[]) {
                pairs.push(DomainSlot { domain: d.clone(), slot: s.clone(), index: pairs.len() });
            }
        }
        let slot_names: BTreeSet<String> = slots.values().flatten().cloned().collect();
        Ontology { domains, slots, pairs, slot_names: slot_names.into_iter().collect() }
    }

    /// Restores derived fields after deserialization.
    pub fn rebuilt(self) -> Result<Self, CorpusError> {
        Ontology::new(self.domains, self.slots)
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn has_domain(&self, d: &str) -> bool {
        self.domains.binary_search_by(|x| x.as_str().cmp(d)).is_ok()
    }

    pub fn slots_of(&self, domain: &str) -> &[String] {
        self.slots.get(domain).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn slot_map(&self) -> &BTreeMap<String, Vec<String>> {
        &self.slots
    }

    /// The J registered pairs.
    pub fn pairs(&self) -> &[DomainSlot] {
        &self.pairs
    }

    /// Distinct slot names across domains (M of them), sorted.
    pub fn slot_names(&self) -> &[String] {
        &self.slot_names
    }

    pub fn pair_index(&self, key: &SlotKey) -> Option<usize> {
        self.pairs.iter().position(|p| p.domain == key.domain && p.slot == key.slot)
    }

    pub fn domain_index(&self, d: &str) -> Option<usize> {
        self.domains.iter().position(|x| x == d)
    }

    pub fn slot_index(&self, s: &str) -> Option<usize> {
        self.slot_names.iter().position(|x| x == s)
    }

    pub fn contains(&self, key: &SlotKey) -> bool {
        self.slots_of(&key.domain).iter().any(|s| *s == key.slot)
    }

    /// Pairs of one domain.
    pub fn pairs_of(&self, domain: &str) -> Vec<DomainSlot> {
        self.pairs.iter().filter(|p| p.domain == domain).cloned().collect()
    }
}
