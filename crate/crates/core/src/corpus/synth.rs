//! Templated multi-domain dialogues with gold cumulative belief states.
//!
//! Slots with the same name in different domains draw from one lexicon, so
//! a value learned for `restaurant-area` is also a valid `hotel-area` value.
//! When a later domain of a dialogue needs a slot an earlier domain already
//! filled, the user may refer back to it ("the same area as the
//! restaurant") instead of restating it; the belief then carries the earlier
//! value even though it is absent from the current turn.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::types::{BeliefState, Dialogue, SlotKey, SlotValue, Turn};
use super::{Corpus, CorpusError, Ontology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub slots: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub values: Vec<String>,
    /// Alternative surface forms per value; the belief keeps the canonical value.
    #[serde(default)]
    pub paraphrases: BTreeMap<String, Vec<String>>,
    /// Phrases with a `{v}` placeholder for the surface form.
    #[serde(default)]
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub domains: Vec<DomainSpec>,
    /// Keyed by slot name; shared by every domain that has the slot.
    pub lexicons: BTreeMap<String, Lexicon>,
    pub dialogues: usize,
    pub max_values_per_turn: usize,
    pub slot_fill_rate: f64,
    pub multi_domain_rate: f64,
    /// Probability of referring back to an earlier domain's value when possible.
    pub mapping_rate: f64,
    pub dontcare_rate: f64,
    pub paraphrase_rate: f64,
    /// Probability that the system asks for the next slot, prompting a bare answer.
    pub ask_rate: f64,
    pub closing_rate: f64,
    pub id_prefix: String,
}

/// Bookkeeping returned with a generated corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SynthStats {
    pub dialogues: usize,
    pub turns: usize,
    /// Value introductions where an earlier domain had filled the same slot.
    pub mapping_opportunities: usize,
    /// Of those, how many referred back instead of stating a fresh value.
    pub inherited: usize,
}

fn lex(values: &[&str], templates: &[&str], paraphrases: &[(&str, &[&str])]) -> Lexicon {
    Lexicon {
        values: values.iter().map(|s| s.to_string()).collect(),
        templates: templates.iter().map(|s| s.to_string()).collect(),
        paraphrases: paraphrases
            .iter()
            .map(|(k, vs)| (k.to_string(), vs.iter().map(|s| s.to_string()).collect()))
            .collect(),
    }
}

fn dom(name: &str, slots: &[&str]) -> DomainSpec {
    DomainSpec { name: name.into(), slots: slots.iter().map(|s| s.to_string()).collect() }
}

impl Default for SynthSpec {
    /// Three domains and eight pairs; `area` and `price` are shared between
    /// restaurant and hotel.
    fn default() -> Self {
        let places = [
            "cambridge station",
            "the museum",
            "city hall",
            "the airport",
            "kings college",
            "the cinema",
            "the park",
            "trinity college",
            "the botanic garden",
            "castle hill",
            "the grand arcade",
            "jesus green",
            "the science park",
            "addenbrookes hospital",
            "parkside pool",
            "the corn exchange",
            "queens college",
            "the fitzwilliam",
            "midsummer common",
            "the leisure park",
        ];
        let mut lexicons = BTreeMap::new();
        lexicons.insert(
            "area".to_string(),
            lex(
                &["centre", "north", "south", "east", "west"],
                &["in the {v}", "somewhere in the {v}", "in the {v} part of town"],
                &[("centre", &["center", "downtown"])],
            ),
        );
        lexicons.insert(
            "price".to_string(),
            lex(
                &["cheap", "moderate", "expensive"],
                &["that is {v}", "in the {v} price range", "with a {v} price"],
                &[("cheap", &["inexpensive", "budget"]), ("expensive", &["pricey", "upscale"])],
            ),
        );
        lexicons.insert(
            "food".to_string(),
            lex(
                &[
                    "italian", "chinese", "indian", "thai", "british", "french", "modern european", "mexican",
                    "japanese", "korean", "spanish", "turkish", "lebanese", "vietnamese", "greek", "portuguese",
                    "european", "african", "international", "north american",
                ],
                &["serving {v} food", "that serves {v} food", "with {v} cuisine"],
                &[],
            ),
        );
        lexicons.insert(
            "departure".to_string(),
            lex(&places, &["from {v}", "leaving from {v}", "departing from {v}"], &[]),
        );
        lexicons.insert(
            "destination".to_string(),
            lex(&places, &["to {v}", "going to {v}", "that goes to {v}"], &[]),
        );
        lexicons.insert(
            "leave".to_string(),
            lex(
                &[
                    "08:30", "09:15", "10:00", "12:45", "17:30", "19:00", "07:45", "11:20", "13:00", "14:30",
                    "15:15", "16:40", "18:05", "20:30", "21:15", "22:00",
                ],
                &["leaving at {v}", "at {v}", "after {v}"],
                &[],
            ),
        );
        SynthSpec {
            domains: vec![
                dom("restaurant", &["area", "food", "price"]),
                dom("hotel", &["area", "price"]),
                dom("taxi", &["departure", "destination", "leave"]),
            ],
            lexicons,
            dialogues: 400,
            max_values_per_turn: 2,
            slot_fill_rate: 0.7,
            multi_domain_rate: 0.4,
            mapping_rate: 0.3,
            dontcare_rate: 0.08,
            paraphrase_rate: 0.1,
            ask_rate: 0.3,
            closing_rate: 0.3,
            id_prefix: "synth".into(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<Ontology, CorpusError> {
        if self.domains.is_empty() {
            return Err(CorpusError::Config("synth spec has no domains".into()));
        }
        if self.max_values_per_turn == 0 {
            return Err(CorpusError::Config("max_values_per_turn must be positive".into()));
        }
        for (name, r) in [
            ("slot_fill_rate", self.slot_fill_rate),
            ("multi_domain_rate", self.multi_domain_rate),
            ("mapping_rate", self.mapping_rate),
            ("dontcare_rate", self.dontcare_rate),
            ("paraphrase_rate", self.paraphrase_rate),
            ("ask_rate", self.ask_rate),
            ("closing_rate", self.closing_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(CorpusError::Config(format!("{name} = {r} not in [0, 1]")));
            }
        }
        let mut slots = BTreeMap::new();
        for d in &self.domains {
            if d.slots.is_empty() {
                return Err(CorpusError::Config(format!("domain {} has no slots", d.name)));
            }
            if slots.insert(d.name.clone(), d.slots.clone()).is_some() {
                return Err(CorpusError::Config(format!("duplicate domain {}", d.name)));
            }
            for s in &d.slots {
                let lx = self
                    .lexicons
                    .get(s)
                    .ok_or_else(|| CorpusError::Config(format!("slot {s} has no lexicon")))?;
                if lx.values.is_empty() || lx.values.iter().any(|v| tokenize(v).is_empty()) {
                    return Err(CorpusError::Config(format!("lexicon for {s} has an empty value")));
                }
                if lx.templates.iter().any(|t| !t.contains("{v}")) {
                    return Err(CorpusError::Config(format!("template for {s} lacks {{v}}")));
                }
            }
        }
        Ontology::new(self.domains.iter().map(|d| d.name.clone()), slots)
    }
}

const INTROS: [&str; 3] = ["i am looking for a {d}", "i need a {d}", "can you help me find a {d}"];
const LATER_INTROS: [&str; 2] = ["i also need a {d}", "i am also looking for a {d}"];
const BARE: [&str; 3] = ["{v} please", "{v} would be great", "i would like {v}"];
const DONTCARE_PHRASES: [&str; 2] = ["i do not care about the {s}", "any {s} is fine"];
const INHERIT_PHRASES: [&str; 2] = ["the same {s} as the {p}", "with the same {s} as the {p}"];
const ACKS: [&str; 3] = ["ok , anything else ?", "sure , i can help with that .", "i have a few options for you ."];
const SWITCH: [&str; 2] = ["i have booked the {p} for you . anything else ?", "the {p} is booked . can i help with anything else ?"];
const CLOSINGS: [&str; 2] = ["thank you , that is all", "thanks , goodbye"];

fn pick<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn fill(template: &str, subs: &[(&str, &str)]) -> String {
    let mut s = template.to_string();
    for (k, v) in subs {
        s = s.replace(k, v);
    }
    s
}

fn words(s: &str) -> Vec<String> {
    tokenize(s)
}

/// Generates `spec.dialogues` dialogues deterministically from `seed`.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<Corpus, CorpusError> {
    synth_corpus_with_stats(spec, seed).map(|(c, _)| c)
}

pub fn synth_corpus_with_stats(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Corpus, SynthStats), CorpusError> {
    let ontology = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = SynthStats::default();
    let width = spec.dialogues.max(1).to_string().len().max(5);
    let mut dialogues = Vec::with_capacity(spec.dialogues);
    for i in 0..spec.dialogues {
        let id = format!("{}-{:0width$}", spec.id_prefix, i, width = width);
        dialogues.push(synth_dialogue(spec, id, &mut rng, &mut stats));
    }
    stats.dialogues = dialogues.len();
    stats.turns = dialogues.iter().map(|d| d.turns.len()).sum();
    Ok((Corpus::new(ontology, dialogues), stats))
}

fn synth_dialogue(spec: &SynthSpec, id: String, rng: &mut ChaCha8Rng, stats: &mut SynthStats) -> Dialogue {
    let n_domains = if spec.domains.len() > 1 && rng.gen::<f64>() < spec.multi_domain_rate { 2 } else { 1 };
    let mut order: Vec<usize> = (0..spec.domains.len()).collect();
    order.shuffle(rng);
    order.truncate(n_domains);

    let mut belief = BeliefState::new();
    let mut turns = Vec::new();
    let mut system = String::new();
    // slot name -> (domain, value) of concrete values stated so far
    let mut stated: BTreeMap<String, (String, Vec<String>)> = BTreeMap::new();

    for (di, &d_idx) in order.iter().enumerate() {
        let domain = &spec.domains[d_idx];
        let mut chosen: Vec<&String> =
            domain.slots.iter().filter(|_| rng.gen::<f64>() < spec.slot_fill_rate).collect();
        if chosen.is_empty() {
            chosen.push(&domain.slots[rng.gen_range(0..domain.slots.len())]);
        }
        chosen.shuffle(rng);
        let mut groups: Vec<Vec<&String>> = Vec::new();
        let mut rest = chosen.as_slice();
        while !rest.is_empty() {
            let k = rng.gen_range(1..=spec.max_values_per_turn.min(rest.len()));
            groups.push(rest[..k].to_vec());
            rest = &rest[k..];
        }

        let mut asked: Option<String> = None;
        for (gi, group) in groups.iter().enumerate() {
            let mut intro = String::new();
            if gi == 0 {
                let t = if di == 0 { pick(rng, &INTROS) } else { pick(rng, &LATER_INTROS) };
                intro = fill(t, &[("{d}", &domain.name)]);
            }
            let mut parts: Vec<String> = Vec::new();
            for (si, slot) in group.iter().enumerate() {
                let bare = si == 0 && asked.as_deref() == Some(slot.as_str());
                let lexicon = &spec.lexicons[*slot];
                let key = SlotKey::new(&domain.name, slot);

                let earlier = stated.get(*slot).filter(|(d, _)| *d != domain.name).cloned();
                let mut inherited = false;
                if let Some((prev_domain, prev_value)) = earlier {
                    stats.mapping_opportunities += 1;
                    if rng.gen::<f64>() < spec.mapping_rate {
                        stats.inherited += 1;
                        inherited = true;
                        let phrase = pick(rng, &INHERIT_PHRASES);
                        parts.push(fill(phrase, &[("{s}", slot), ("{p}", &prev_domain)]));
                        belief.insert(key.clone(), SlotValue::Value(prev_value));
                    }
                }
                if inherited {
                    continue;
                }
                if rng.gen::<f64>() < spec.dontcare_rate {
                    let phrase = if bare { "i do not care" } else { pick(rng, &DONTCARE_PHRASES) };
                    parts.push(fill(phrase, &[("{s}", slot)]));
                    belief.insert(key, SlotValue::DontCare);
                    continue;
                }
                let value = &lexicon.values[rng.gen_range(0..lexicon.values.len())];
                let surface = match lexicon.paraphrases.get(value) {
                    Some(alts) if !alts.is_empty() && rng.gen::<f64>() < spec.paraphrase_rate => {
                        alts[rng.gen_range(0..alts.len())].clone()
                    }
                    _ => value.clone(),
                };
                let template = if bare {
                    pick(rng, &BARE).to_string()
                } else if lexicon.templates.is_empty() {
                    format!("with {slot} {{v}}")
                } else {
                    lexicon.templates[rng.gen_range(0..lexicon.templates.len())].clone()
                };
                parts.push(fill(&template, &[("{v}", &surface)]));
                let toks = words(value);
                stated.insert(slot.to_string(), (domain.name.clone(), toks.clone()));
                belief.insert(key, SlotValue::Value(toks));
            }
            turns.push(Turn {
                system: words(&system),
                user: words(&format!("{intro} {}", parts.join(" and "))),
                belief: belief.clone(),
            });

            asked = None;
            system = match groups.get(gi + 1) {
                Some(next) if rng.gen::<f64>() < spec.ask_rate => {
                    asked = Some(next[0].clone());
                    format!("what {} would you like ?", next[0])
                }
                Some(_) => pick(rng, &ACKS).to_string(),
                None => fill(pick(rng, &SWITCH), &[("{p}", &domain.name)]),
            };
        }
    }
    if rng.gen::<f64>() < spec.closing_rate {
        turns.push(Turn {
            system: words(&system),
            user: words(pick(rng, &CLOSINGS)),
            belief: belief.clone(),
        });
    }
    Dialogue { id, turns }
}

/// Train / valid / test corpora from one generated pool, in that order.
pub fn synth_splits(
    spec: &SynthSpec,
    sizes: [usize; 3],
    seed: u64,
) -> Result<[Corpus; 3], CorpusError> {
    let total = SynthSpec { dialogues: sizes.iter().sum(), ..spec.clone() };
    let all = synth_corpus(&total, seed)?;
    let mut parts = all.split_sizes(&sizes)?.into_iter();
    Ok([parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap()])
}
