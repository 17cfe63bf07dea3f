//! Versioned JSON checkpoint: config, vocabulary, ontology, named parameter
//! tensors, and optionally the EWC Fisher and GEM memory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continual::{EpisodicMemory, FisherDiag};
use crate::corpus::{parse_belief, Ontology, Vocabulary};
use crate::model::{Example, ModelConfig, ModelError, TradeModel};
use crate::numkit::{ParamStore, Tensor};

pub const FORMAT: &str = "trade-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint version {found} is not supported (expected {VERSION})")]
    Version { found: u32 },
    #[error("vocabulary hash mismatch: file says {stored}, tokens hash to {computed}")]
    VocabHash { stored: String, computed: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FisherRecord {
    samples: usize,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemoryRecord {
    dialogue_id: String,
    turn: usize,
    history: Vec<String>,
    belief: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    vocab_hash: String,
    ontology: Ontology,
    params: Vec<NamedTensor>,
    #[serde(default, rename = "__fisher__", skip_serializing_if = "Option::is_none")]
    fisher: Option<FisherRecord>,
    #[serde(default, rename = "__memory__", skip_serializing_if = "Option::is_none")]
    memory: Option<Vec<MemoryRecord>>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: TradeModel,
    pub fisher: Option<FisherDiag>,
    pub memory: Option<EpisodicMemory>,
    /// Free-form run information (seed, selected λ, ...). Keep it free of
    /// timestamps so reruns stay byte-identical.
    pub meta: BTreeMap<String, serde_json::Value>,
}

fn named(params: &ParamStore, values: impl Fn(usize) -> Tensor) -> Vec<NamedTensor> {
    params
        .ids()
        .map(|id| {
            let t = values(id.0);
            NamedTensor { name: params.name(id).to_string(), shape: t.shape().to_vec(), data: t.data().to_vec() }
        })
        .collect()
}

fn tensor_of(n: NamedTensor) -> Result<(String, Tensor), CheckpointError> {
    let t = Tensor::new(n.shape, n.data).map_err(|e| CheckpointError::Malformed(format!("{}: {e}", n.name)))?;
    Ok((n.name, t))
}

impl Checkpoint {
    pub fn new(model: TradeModel) -> Self {
        Checkpoint { model, fisher: None, memory: None, meta: BTreeMap::new() }
    }

    pub fn to_json(&self) -> String {
        let m = &self.model;
        let params = named(&m.params, |i| m.params.get(crate::numkit::ParamId(i)).clone());
        let fisher = self.fisher.as_ref().map(|f| FisherRecord {
            samples: f.samples,
            tensors: named(&m.params, |i| f.values.get(crate::numkit::ParamId(i)).clone()),
        });
        let memory = self.memory.as_ref().map(|mem| {
            mem.examples()
                .iter()
                .map(|e| MemoryRecord {
                    dialogue_id: e.dialogue_id.clone(),
                    turn: e.turn,
                    history: e.history.clone(),
                    belief: e.belief.to_raw(),
                })
                .collect()
        });
        let file = CheckpointFile {
            format: FORMAT.to_string(),
            version: VERSION,
            config: m.config.clone(),
            vocab: m.vocab.tokens().to_vec(),
            vocab_hash: m.vocab.hash(),
            ontology: m.ontology.clone(),
            params,
            fisher,
            memory,
            meta: self.meta.clone(),
        };
        let mut s = serde_json::to_string(&file).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        // Peek at the header first so version errors beat schema errors.
        #[derive(Deserialize)]
        struct Header {
            format: Option<String>,
            version: Option<u32>,
        }
        let head: Header = serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if head.format.as_deref() != Some(FORMAT) {
            return Err(CheckpointError::Malformed(format!("format tag is {:?}, expected {FORMAT:?}", head.format)));
        }
        match head.version {
            Some(VERSION) => {}
            Some(found) => return Err(CheckpointError::Version { found }),
            None => return Err(CheckpointError::Malformed("missing version".into())),
        }
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let vocab = Vocabulary::from_tokens(file.vocab).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let computed = vocab.hash();
        if computed != file.vocab_hash {
            return Err(CheckpointError::VocabHash { stored: file.vocab_hash, computed });
        }
        let ontology = file.ontology.rebuilt().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut params = ParamStore::new();
        for n in file.params {
            let (name, t) = tensor_of(n)?;
            params.insert(&name, t).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        let model = TradeModel::from_params(file.config, vocab, ontology, params)?;

        let fisher = match file.fisher {
            None => None,
            Some(rec) => {
                let mut values = model.params.zeros_like();
                if rec.tensors.len() != model.params.len() {
                    return Err(CheckpointError::Malformed("Fisher block count differs from parameters".into()));
                }
                for n in rec.tensors {
                    let (name, t) = tensor_of(n)?;
                    let id = model
                        .params
                        .id(&name)
                        .ok_or_else(|| CheckpointError::Malformed(format!("Fisher block {name} has no parameter")))?;
                    if t.shape() != model.params.get(id).shape() || t.data().iter().any(|x| !(*x >= 0.0)) {
                        return Err(CheckpointError::Malformed(format!("Fisher block {name} is invalid")));
                    }
                    *values.get_mut(id) = t;
                }
                Some(FisherDiag { values, samples: rec.samples })
            }
        };

        let memory = match file.memory {
            None => None,
            Some(records) => {
                let mut examples = Vec::with_capacity(records.len());
                for r in records {
                    let belief = parse_belief(&r.belief, &model.ontology)
                        .map_err(|e| CheckpointError::Malformed(format!("memory belief: {e}")))?;
                    examples.push(Example::from_parts(
                        &r.dialogue_id,
                        r.turn,
                        r.history,
                        belief,
                        &model.vocab,
                        &model.ontology,
                    )?);
                }
                Some(EpisodicMemory::from_examples(examples).map_err(|e| CheckpointError::Malformed(e.to_string()))?)
            }
        };
        Ok(Checkpoint { model, fisher, memory, meta: file.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        fs::write(path, self.to_json())
            .map_err(|e| CheckpointError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CheckpointError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }
}
