//! The TRADE network: bi-GRU utterance encoder, soft-gated copy decoder shared
//! across (domain, slot) pairs, and the three-way slot gate.

mod config;
mod example;
pub mod forward;
#[cfg(test)]
mod tests;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{
    BeliefState, CorpusError, GateLabel, Ontology, SlotValue, Vocabulary, DONTCARE, EOS,
    NONE_VALUE,
};
use crate::numkit::{GradStore, NumError, ParamId, ParamStore, Tensor};

pub use config::ModelConfig;
pub use example::{examples_of, Example};
pub use forward::{argmax, DecodeMode, DecodeTrace, Encoded, Graph, LossVars};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("empty dialogue history")]
    EmptyHistory,
    #[error("index error: {0}")]
    Index(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruIds {
    pub w_input: ParamId,
    pub w_hidden_gates: ParamId,
    pub w_hidden_cand: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamIds {
    pub embedding: ParamId,
    pub out_proj: Option<ParamId>,
    pub enc_fwd: GruIds,
    pub enc_bwd: GruIds,
    pub decoder: GruIds,
    pub copy_gate: ParamId,
    pub copy_gate_bias: ParamId,
    pub slot_gate: ParamId,
    pub slot_gate_bias: ParamId,
    pub domain_emb: ParamId,
    pub slot_emb: ParamId,
}

/// Shapes of every parameter tensor, in registration order.
pub fn param_layout(config: &ModelConfig, vocab_len: usize, ontology: &Ontology) -> Vec<(String, Vec<usize>)> {
    let (e, h) = (config.d_emb, config.d_hdd);
    let half = h / 2;
    let mut out = vec![("embedding".to_string(), vec![vocab_len, e])];
    if config.has_output_projection() {
        out.push(("out_proj".into(), vec![e, h]));
    }
    for (prefix, hid) in [("enc_fwd", half), ("enc_bwd", half), ("decoder", h)] {
        out.push((format!("{prefix}.w_input"), vec![3 * hid, e]));
        out.push((format!("{prefix}.w_hidden_gates"), vec![2 * hid, hid]));
        out.push((format!("{prefix}.w_hidden_cand"), vec![hid, hid]));
        out.push((format!("{prefix}.bias"), vec![3 * hid]));
    }
    out.push(("copy_gate".into(), vec![1, h + e + h]));
    out.push(("copy_gate.bias".into(), vec![1]));
    out.push(("slot_gate".into(), vec![3, h]));
    out.push(("slot_gate.bias".into(), vec![3]));
    out.push(("domain_emb".into(), vec![ontology.domains().len(), e]));
    out.push(("slot_emb".into(), vec![ontology.slot_names().len(), e]));
    out
}

/// Model parameters together with everything needed to interpret them.
#[derive(Clone, Debug)]
pub struct TradeModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub ontology: Ontology,
    pub params: ParamStore,
    pub ids: ParamIds,
    /// (domain row, slot row) of each registered pair.
    pub pair_coords: Vec<(usize, usize)>,
}

/// What the decoder produced for one pair at inference time.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotPrediction {
    pub pair: usize,
    pub gate: [f64; 3],
    /// Extended-vocabulary ids, ending in `<eos>` unless `max_decode_len` was hit.
    pub tokens: Vec<usize>,
    pub words: Vec<String>,
    pub p_gen: Vec<f64>,
    pub attention: Vec<Vec<f64>>,
}

impl SlotPrediction {
    pub fn gate_label(&self) -> GateLabel {
        GateLabel::from_index(argmax(&self.gate)).expect("three gate classes")
    }

    /// Decoded value with `<eos>` removed.
    pub fn value_words(&self) -> Vec<String> {
        self.words.iter().filter(|w| w.as_str() != "<eos>").cloned().collect()
    }
}

/// Batch-averaged loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub gate: f64,
    pub value: f64,
    /// How many `-log p` terms hit the clamp floor.
    pub clamped: usize,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

impl TradeModel {
    /// Fresh model; every draw comes from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, ontology: Ontology, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in param_layout(&config, vocab.len(), &ontology) {
            let t = if name == "copy_gate.bias" {
                Tensor::new(shape.clone(), vec![config.copy_bias_init]).expect("shape")
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else if matches!(name.as_str(), "embedding" | "domain_emb" | "slot_emb") {
                uniform(&mut rng, &shape, config.embed_init)
            } else {
                let fan = *shape.last().expect("matrix") as f64;
                uniform(&mut rng, &shape, 1.0 / fan.sqrt())
            };
            params.insert(&name, t)?;
        }
        Self::from_params(config, vocab, ontology, params)
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(
        config: ModelConfig,
        vocab: Vocabulary,
        ontology: Ontology,
        params: ParamStore,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = param_layout(&config, vocab.len(), &ontology);
        if layout.len() != params.len() {
            return Err(ModelError::Shape(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in &layout {
            let t = params
                .by_name(name)
                .ok_or_else(|| ModelError::Shape(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(NumError::Divergence("non-finite parameter".into()).into());
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let gru = |p: &str| GruIds {
            w_input: id(&format!("{p}.w_input")),
            w_hidden_gates: id(&format!("{p}.w_hidden_gates")),
            w_hidden_cand: id(&format!("{p}.w_hidden_cand")),
            bias: id(&format!("{p}.bias")),
        };
        let ids = ParamIds {
            embedding: id("embedding"),
            out_proj: params.id("out_proj"),
            enc_fwd: gru("enc_fwd"),
            enc_bwd: gru("enc_bwd"),
            decoder: gru("decoder"),
            copy_gate: id("copy_gate"),
            copy_gate_bias: id("copy_gate.bias"),
            slot_gate: id("slot_gate"),
            slot_gate_bias: id("slot_gate.bias"),
            domain_emb: id("domain_emb"),
            slot_emb: id("slot_emb"),
        };
        let pair_coords = ontology
            .pairs()
            .iter()
            .map(|p| {
                (
                    ontology.domain_index(&p.domain).expect("registered"),
                    ontology.slot_index(&p.slot).expect("registered"),
                )
            })
            .collect();
        Ok(TradeModel { config, vocab, ontology, params, ids, pair_coords })
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_coords.len()
    }

    /// Indices of every registered pair.
    pub fn all_pairs(&self) -> Vec<usize> {
        (0..self.num_pairs()).collect()
    }

    /// Indices of the pairs that belong to `domains`.
    pub fn pairs_in(&self, domains: &[&str]) -> Vec<usize> {
        self.ontology
            .pairs()
            .iter()
            .filter(|p| domains.contains(&p.domain.as_str()))
            .map(|p| p.index)
            .collect()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyHistory);
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(ModelError::Index(format!(
                "token id {bad} outside vocabulary of size {}",
                self.vocab.len()
            )));
        }
        Ok(())
    }

    fn check_len(what: &str, got: usize, want: usize) -> Result<(), ModelError> {
        if got == want {
            Ok(())
        } else {
            Err(ModelError::Shape(format!("{what} has length {got}, expected {want}")))
        }
    }

    /// Encoder states `H_t`, one row of width `d_hdd` per token.
    pub fn encode(&self, ids: &[usize]) -> Result<Tensor, ModelError> {
        self.check_ids(ids)?;
        let mut g = Graph::eval(self);
        let enc = g.encode(ids);
        Ok(g.tape.value(enc.states).clone())
    }

    pub fn vocab_dist(&self, h_dec: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::check_len("decoder state", h_dec.len(), self.config.d_hdd)?;
        let mut g = Graph::eval(self);
        let h = g.tape.leaf(Tensor::vector(h_dec.to_vec()));
        let p = g.vocab_dist(h);
        Ok(g.tape.data(p).to_vec())
    }

    /// Returns `(P_history, context)`.
    pub fn history_attention(&self, h_dec: &[f64], states: &Tensor) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        Self::check_len("decoder state", h_dec.len(), self.config.d_hdd)?;
        if states.shape().len() != 2 || states.shape()[1] != self.config.d_hdd || states.shape()[0] == 0 {
            return Err(ModelError::Shape(format!("encoder states of shape {:?}", states.shape())));
        }
        let mut g = Graph::eval(self);
        let h = g.tape.leaf(Tensor::vector(h_dec.to_vec()));
        let s = g.tape.leaf(states.clone());
        let (p, c) = g.history_attention(h, s);
        Ok((g.tape.data(p).to_vec(), g.tape.data(c).to_vec()))
    }

    pub fn generation_gate(&self, h_dec: &[f64], w_in: &[f64], context: &[f64]) -> Result<f64, ModelError> {
        Self::check_len("decoder state", h_dec.len(), self.config.d_hdd)?;
        Self::check_len("input embedding", w_in.len(), self.config.d_emb)?;
        Self::check_len("context", context.len(), self.config.d_hdd)?;
        let mut g = Graph::eval(self);
        let h = g.tape.leaf(Tensor::vector(h_dec.to_vec()));
        let w = g.tape.leaf(Tensor::vector(w_in.to_vec()));
        let c = g.tape.leaf(Tensor::vector(context.to_vec()));
        let p = g.generation_gate(h, w, c);
        Ok(g.tape.scalar(p))
    }

    pub fn slot_gate(&self, context: &[f64]) -> Result<[f64; 3], ModelError> {
        Self::check_len("context", context.len(), self.config.d_hdd)?;
        let mut g = Graph::eval(self);
        let c = g.tape.leaf(Tensor::vector(context.to_vec()));
        let p = g.slot_gate(c);
        let d = g.tape.data(p);
        Ok([d[0], d[1], d[2]])
    }

    /// Greedy decode of pair `j` for a prepared example.
    pub fn decode_slot(&self, ex: &Example, j: usize) -> Result<SlotPrediction, ModelError> {
        Ok(self.predict_pairs(ex, &[j])?.remove(0))
    }

    /// Teacher-forced decode of pair `j`; returns the per-step `P_final` rows
    /// and the summed value loss.
    pub fn teacher_forced(&self, ex: &Example, j: usize, target: &[usize]) -> Result<(Vec<Vec<f64>>, f64), ModelError> {
        self.check_pair(j)?;
        self.check_ids(&ex.input_ids)?;
        if target.is_empty() {
            return Err(ModelError::Config("empty target sequence".into()));
        }
        let ext = ex.extended_size(self.vocab.len());
        if let Some(&bad) = target.iter().find(|&&t| t >= ext) {
            return Err(ModelError::Index(format!("target id {bad} outside extended vocabulary {ext}")));
        }
        let mut g = Graph::eval(self);
        let enc = g.encode(&ex.input_ids);
        let trace = g.decode(&enc, &ex.copy_ids, ext, j, DecodeMode::Teacher(target));
        let rows = trace.finals.iter().map(|&v| g.tape.data(v).to_vec()).collect();
        Ok((rows, g.tape.scalar(trace.value_loss.expect("non-empty target"))))
    }

    fn check_pair(&self, j: usize) -> Result<(), ModelError> {
        if j < self.num_pairs() {
            Ok(())
        } else {
            Err(ModelError::Index(format!("pair {j} not registered (J = {})", self.num_pairs())))
        }
    }

    /// Greedy predictions for the given pairs; each pair decodes independently.
    pub fn predict_pairs(&self, ex: &Example, pairs: &[usize]) -> Result<Vec<SlotPrediction>, ModelError> {
        self.check_ids(&ex.input_ids)?;
        for &j in pairs {
            self.check_pair(j)?;
        }
        let ext = ex.extended_size(self.vocab.len());
        let mut g = Graph::eval(self);
        let enc = g.encode(&ex.input_ids);
        let mut out = Vec::with_capacity(pairs.len());
        for &j in pairs {
            let trace = g.decode(&enc, &ex.copy_ids, ext, j, DecodeMode::Greedy);
            let gd = g.tape.data(trace.gate);
            out.push(SlotPrediction {
                pair: j,
                gate: [gd[0], gd[1], gd[2]],
                words: trace.tokens.iter().map(|&t| ex.token(&self.vocab, t).to_string()).collect(),
                tokens: trace.tokens.clone(),
                p_gen: trace.p_gen.iter().map(|&v| g.tape.scalar(v)).collect(),
                attention: trace.attention.iter().map(|&v| g.tape.data(v).to_vec()).collect(),
            });
        }
        Ok(out)
    }

    /// Belief state assembled from gate decisions and decoded values.
    pub fn belief_from(&self, preds: &[SlotPrediction]) -> BeliefState {
        let mut belief = BeliefState::new();
        for p in preds {
            let key = self.ontology.pairs()[p.pair].key();
            match p.gate_label() {
                GateLabel::None => {}
                GateLabel::DontCare => {
                    belief.insert(key, SlotValue::DontCare);
                }
                GateLabel::Ptr => {
                    let words = p.value_words();
                    if words.is_empty() || words == [NONE_VALUE] {
                        continue;
                    }
                    if words == [DONTCARE] {
                        belief.insert(key, SlotValue::DontCare);
                    } else {
                        belief.insert(key, SlotValue::Value(words));
                    }
                }
            }
        }
        belief
    }

    /// Predicted belief restricted to `pairs`.
    pub fn predict_example(&self, ex: &Example, pairs: &[usize]) -> Result<BeliefState, ModelError> {
        Ok(self.belief_from(&self.predict_pairs(ex, pairs)?))
    }

    /// Predicted belief over all pairs for a tokenized history.
    pub fn predict_belief(&self, history: &[String]) -> Result<BeliefState, ModelError> {
        let ex = Example::from_parts("", 0, history.to_vec(), BeliefState::new(), &self.vocab, &self.ontology)?;
        self.predict_example(&ex, &self.all_pairs())
    }

    /// Batch-averaged loss without gradients or dropout.
    pub fn batch_loss(&self, batch: &[&Example], pairs: &[usize]) -> Result<BatchLoss, ModelError> {
        self.batch_pass(batch, pairs, None, false).map(|(l, _)| l)
    }

    /// Batch-averaged loss and gradient. With `noise_seeds` (one per example)
    /// dropout and word dropout are active.
    pub fn batch_gradient(
        &self,
        batch: &[&Example],
        pairs: &[usize],
        noise_seeds: Option<&[u64]>,
    ) -> Result<(BatchLoss, GradStore), ModelError> {
        let (l, g) = self.batch_pass(batch, pairs, noise_seeds, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    fn batch_pass(
        &self,
        batch: &[&Example],
        pairs: &[usize],
        noise_seeds: Option<&[u64]>,
        want_grad: bool,
    ) -> Result<(BatchLoss, Option<GradStore>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        if pairs.is_empty() {
            return Err(ModelError::Config("no pairs to train".into()));
        }
        if let Some(s) = noise_seeds {
            Self::check_len("noise seeds", s.len(), batch.len())?;
        }
        for ex in batch {
            self.check_ids(&ex.input_ids)?;
            Self::check_len("gate labels", ex.gates.len(), self.num_pairs())?;
        }
        for &j in pairs {
            self.check_pair(j)?;
        }
        let per: Vec<(BatchLoss, Option<GradStore>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut g = match noise_seeds {
                    Some(s) => Graph::train(self, s[i]),
                    None => Graph::eval(self),
                };
                let lv = g.example_loss(ex, pairs);
                let loss = BatchLoss {
                    total: g.tape.scalar(lv.total),
                    gate: g.tape.scalar(lv.gate),
                    value: g.tape.scalar(lv.value),
                    clamped: g.tape.clamped_logs(),
                };
                let grad = want_grad.then(|| {
                    let mut store = self.params.zeros_like();
                    g.tape.backward(lv.total).accumulate(&g.tape, &mut store);
                    store
                });
                (loss, grad)
            })
            .collect();
        let n = batch.len() as f64;
        let mut total = BatchLoss::default();
        let mut grad = want_grad.then(|| self.params.zeros_like());
        for (l, g) in per {
            total.total += l.total;
            total.gate += l.gate;
            total.value += l.value;
            total.clamped += l.clamped;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                acc.add_assign(&g);
            }
        }
        total.total /= n;
        total.gate /= n;
        total.value /= n;
        if let Some(acc) = grad.as_mut() {
            acc.scale(1.0 / n);
        }
        if total.clamped > 0 {
            log::warn!("{} log terms clamped at the probability floor", total.clamped);
        }
        Ok((total, grad))
    }

    /// Learned slot embedding rows, keyed by slot name.
    pub fn slot_embeddings(&self) -> Vec<(String, Vec<f64>)> {
        let t = self.params.get(self.ids.slot_emb);
        self.ontology
            .slot_names()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), t.row(i).to_vec()))
            .collect()
    }
}

/// `p_gen · P_vocab + (1 - p_gen) · scatter(P_history, copy_ids)` over an
/// extended vocabulary of size `ext`.
pub fn mix_distributions(
    p_vocab: &[f64],
    p_history: &[f64],
    p_gen: f64,
    copy_ids: &[usize],
    ext: usize,
) -> Result<Vec<f64>, ModelError> {
    if !(0.0..=1.0).contains(&p_gen) {
        return Err(NumError::Domain(format!("p_gen = {p_gen} outside [0, 1]")).into());
    }
    if p_history.len() != copy_ids.len() {
        return Err(ModelError::Shape(format!(
            "{} attention weights for {} history tokens",
            p_history.len(),
            copy_ids.len()
        )));
    }
    if ext < p_vocab.len() {
        return Err(ModelError::Shape(format!("extended size {ext} < |V| = {}", p_vocab.len())));
    }
    if let Some(&bad) = copy_ids.iter().find(|&&i| i >= ext) {
        return Err(ModelError::Index(format!("copy id {bad} outside extended vocabulary {ext}")));
    }
    let mut out = vec![0.0; ext];
    for (o, p) in out.iter_mut().zip(p_vocab) {
        *o = p_gen * p;
    }
    for (&id, &p) in copy_ids.iter().zip(p_history) {
        out[id] += (1.0 - p_gen) * p;
    }
    Ok(out)
}

/// True when a predicted token sequence ended on `<eos>`.
pub fn ends_with_eos(tokens: &[usize]) -> bool {
    tokens.last() == Some(&EOS)
}
