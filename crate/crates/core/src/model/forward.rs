//! Graph construction for one example on a fresh tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{word_dropout_with, GateLabel, EOS, UNK};
use crate::numkit::{GruVars, Tape, Var};

use super::{Example, ParamIds, TradeModel};

/// Tape handles of every model parameter.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub embedding: Var,
    pub out_proj: Option<Var>,
    pub enc_fwd: GruVars,
    pub enc_bwd: GruVars,
    pub decoder: GruVars,
    pub copy_gate: Var,
    pub copy_gate_bias: Var,
    pub slot_gate: Var,
    pub slot_gate_bias: Var,
    pub domain_emb: Var,
    pub slot_emb: Var,
}

/// Encoder output for one history.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `|X| x d_hdd`, row i = `[forward_i; backward_i]`.
    pub states: Var,
    /// Decoder initial hidden state: `[forward_last; backward_first]`.
    pub init: Var,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub enum DecodeMode<'a> {
    /// Feed gold tokens (extended ids); one step per target token.
    Teacher(&'a [usize]),
    Greedy,
}

/// Everything one pair's decoder recorded.
#[derive(Clone, Debug)]
pub struct DecodeTrace {
    pub gate: Var,
    pub finals: Vec<Var>,
    pub p_gen: Vec<Var>,
    pub attention: Vec<Var>,
    /// Emitted extended ids (greedy mode) or the fed targets (teacher mode).
    pub tokens: Vec<usize>,
    /// Sum of `-log P_final` over steps (teacher mode).
    pub value_loss: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub gate: Var,
    pub value: Var,
}

struct Noise {
    rng: ChaCha8Rng,
    dropout: f64,
    word_dropout: f64,
}

pub struct Graph<'m> {
    pub model: &'m TradeModel,
    pub tape: Tape,
    pub p: ParamVars,
    noise: Option<Noise>,
}

fn gru_vars(tape: &mut Tape, model: &TradeModel, g: &super::GruIds) -> GruVars {
    let s = &model.params;
    GruVars {
        w_input: tape.param(s, g.w_input),
        w_hidden_gates: tape.param(s, g.w_hidden_gates),
        w_hidden_cand: tape.param(s, g.w_hidden_cand),
        bias: tape.param(s, g.bias),
    }
}

impl<'m> Graph<'m> {
    /// Inference graph: no dropout of any kind.
    pub fn eval(model: &'m TradeModel) -> Self {
        Self::build(model, None)
    }

    /// Training graph; dropout masks come from `seed`.
    pub fn train(model: &'m TradeModel, seed: u64) -> Self {
        let noise = Noise {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dropout: model.config.dropout,
            word_dropout: model.config.word_dropout,
        };
        Self::build(model, Some(noise))
    }

    fn build(model: &'m TradeModel, noise: Option<Noise>) -> Self {
        let mut tape = Tape::new();
        let ids: &ParamIds = &model.ids;
        let s = &model.params;
        let p = ParamVars {
            embedding: tape.param(s, ids.embedding),
            out_proj: ids.out_proj.map(|id| tape.param(s, id)),
            enc_fwd: gru_vars(&mut tape, model, &ids.enc_fwd),
            enc_bwd: gru_vars(&mut tape, model, &ids.enc_bwd),
            decoder: gru_vars(&mut tape, model, &ids.decoder),
            copy_gate: tape.param(s, ids.copy_gate),
            copy_gate_bias: tape.param(s, ids.copy_gate_bias),
            slot_gate: tape.param(s, ids.slot_gate),
            slot_gate_bias: tape.param(s, ids.slot_gate_bias),
            domain_emb: tape.param(s, ids.domain_emb),
            slot_emb: tape.param(s, ids.slot_emb),
        };
        Graph { model, tape, p, noise }
    }

    fn dropout(&mut self, v: Var) -> Var {
        let Some(noise) = self.noise.as_mut() else { return v };
        if noise.dropout == 0.0 {
            return v;
        }
        let keep = 1.0 - noise.dropout;
        let n = self.tape.data(v).len();
        let mask = (0..n)
            .map(|_| if noise.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.tape.mask_mul(v, mask)
    }

    /// Word dropout on history ids; dropped positions become `<unk>` for both
    /// the encoder input and the copy distribution.
    pub fn mask_words(&mut self, ex: &Example) -> (Vec<usize>, Vec<usize>) {
        let Some(noise) = self.noise.as_mut() else {
            return (ex.input_ids.clone(), ex.copy_ids.clone());
        };
        let masked = word_dropout_with(&ex.input_ids, noise.word_dropout, &mut noise.rng)
            .expect("word dropout rate validated with the config");
        let copy = ex
            .copy_ids
            .iter()
            .zip(&masked)
            .zip(&ex.input_ids)
            .map(|((&c, &m), &orig)| if m == UNK && orig != UNK { UNK } else { c })
            .collect();
        (masked, copy)
    }

    pub fn embed(&mut self, id: usize) -> Var {
        let row = self.tape.row(self.p.embedding, id);
        self.dropout(row)
    }

    /// Bidirectional GRU over `ids`.
    pub fn encode(&mut self, ids: &[usize]) -> Encoded {
        assert!(!ids.is_empty(), "encode needs at least one token");
        let half = self.model.config.d_hdd / 2;
        let embs: Vec<Var> = ids.iter().map(|&id| self.embed(id)).collect();
        let zero = self.tape.leaf(crate::numkit::Tensor::zeros(&[half]));

        let mut fwd = Vec::with_capacity(ids.len());
        let mut h = zero;
        for &e in &embs {
            h = self.tape.gru_cell(e, h, self.p.enc_fwd);
            fwd.push(h);
        }
        let mut bwd = vec![zero; ids.len()];
        let mut h = zero;
        for i in (0..ids.len()).rev() {
            h = self.tape.gru_cell(embs[i], h, self.p.enc_bwd);
            bwd[i] = h;
        }
        let rows: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| {
                let cat = self.tape.concat(&[f, b]);
                self.dropout(cat)
            })
            .collect();
        let states = self.tape.stack(&rows);
        let init = self.tape.concat(&[fwd[ids.len() - 1], bwd[0]]);
        Encoded { states, init, len: ids.len() }
    }

    /// `softmax(E · proj(h))` over the base vocabulary.
    pub fn vocab_dist(&mut self, h_dec: Var) -> Var {
        let h = match self.p.out_proj {
            Some(w) => self.tape.matvec(w, h_dec),
            None => h_dec,
        };
        let logits = self.tape.matvec(self.p.embedding, h);
        self.tape.softmax(logits)
    }

    /// Attention over encoder states and the resulting context vector.
    pub fn history_attention(&mut self, h_dec: Var, states: Var) -> (Var, Var) {
        let scores = self.tape.matvec(states, h_dec);
        let p = self.tape.softmax(scores);
        let c = self.tape.mat_t_vec(states, p);
        (p, c)
    }

    /// `sigmoid(W1 · [h; w; c] + b1)`.
    pub fn generation_gate(&mut self, h_dec: Var, w_in: Var, context: Var) -> Var {
        let cat = self.tape.concat(&[h_dec, w_in, context]);
        let logit = self.tape.matvec(self.p.copy_gate, cat);
        let logit = self.tape.add(logit, self.p.copy_gate_bias);
        self.tape.sigmoid(logit)
    }

    /// `p_gen · P_vocab + (1 - p_gen) · scatter(P_history)` over the extended vocabulary.
    pub fn mix(&mut self, p_vocab: Var, p_hist: Var, p_gen: Var, copy_ids: &[usize], ext: usize) -> Var {
        let padded = self.tape.pad(p_vocab, ext);
        let gen = self.tape.scalar_mul(p_gen, padded);
        let scattered = self.tape.scatter_add(p_hist, copy_ids, ext);
        let copy_w = self.tape.one_minus(p_gen);
        let copy = self.tape.scalar_mul(copy_w, scattered);
        self.tape.add(gen, copy)
    }

    /// `softmax(Wg · c + bg)` over (ptr, none, dontcare).
    pub fn slot_gate(&mut self, context: Var) -> Var {
        let logits = self.tape.matvec(self.p.slot_gate, context);
        let logits = self.tape.add(logits, self.p.slot_gate_bias);
        self.tape.softmax(logits)
    }

    /// Summed domain and slot embedding that starts pair `j`'s decoder.
    pub fn pair_query(&mut self, j: usize) -> Var {
        let (d, s) = self.model.pair_coords[j];
        let de = self.tape.row(self.p.domain_emb, d);
        let se = self.tape.row(self.p.slot_emb, s);
        self.tape.add(de, se)
    }

    pub fn decode(
        &mut self,
        enc: &Encoded,
        copy_ids: &[usize],
        ext: usize,
        j: usize,
        mode: DecodeMode<'_>,
    ) -> DecodeTrace {
        let vocab_len = self.model.vocab.len();
        let max_len = self.model.config.max_decode_len;
        let steps = match mode {
            DecodeMode::Teacher(t) => t.len(),
            DecodeMode::Greedy => max_len,
        };
        let mut w = self.pair_query(j);
        let mut h = enc.init;
        let mut trace = DecodeTrace {
            gate: h,
            finals: Vec::new(),
            p_gen: Vec::new(),
            attention: Vec::new(),
            tokens: Vec::new(),
            value_loss: None,
        };
        let mut losses = Vec::new();
        for k in 0..steps {
            h = self.tape.gru_cell(w, h, self.p.decoder);
            let p_vocab = self.vocab_dist(h);
            let (p_hist, c) = self.history_attention(h, enc.states);
            if k == 0 {
                trace.gate = self.slot_gate(c);
            }
            let p_gen = self.generation_gate(h, w, c);
            let p_final = self.mix(p_vocab, p_hist, p_gen, copy_ids, ext);
            trace.finals.push(p_final);
            trace.p_gen.push(p_gen);
            trace.attention.push(p_hist);
            let next = match mode {
                DecodeMode::Teacher(targets) => {
                    losses.push(self.tape.neg_log_at(p_final, targets[k]));
                    targets[k]
                }
                DecodeMode::Greedy => argmax(self.tape.data(p_final)),
            };
            trace.tokens.push(next);
            if matches!(mode, DecodeMode::Greedy) && next == EOS {
                break;
            }
            if k + 1 < steps {
                let id = if next < vocab_len { next } else { UNK };
                w = self.embed(id);
            }
        }
        if !losses.is_empty() {
            trace.value_loss = Some(self.tape.sum(&losses));
        }
        trace
    }

    /// `α · L_g + β · L_v` for one example over the given pairs.
    pub fn example_loss(&mut self, ex: &Example, pairs: &[usize]) -> LossVars {
        assert!(!pairs.is_empty(), "loss over no pairs");
        let (ids, copy) = self.mask_words(ex);
        let ext = ex.extended_size(self.model.vocab.len());
        let enc = self.encode(&ids);
        let mut gate_terms = Vec::with_capacity(pairs.len());
        let mut value_terms = Vec::with_capacity(pairs.len());
        for &j in pairs {
            let trace = self.decode(&enc, &copy, ext, j, DecodeMode::Teacher(&ex.targets[j]));
            gate_terms.push(self.tape.neg_log_at(trace.gate, ex.gates[j].index()));
            value_terms.push(trace.value_loss.expect("targets are never empty"));
        }
        let gate = self.tape.sum(&gate_terms);
        let value = self.tape.sum(&value_terms);
        let a = self.tape.scale(gate, self.model.config.alpha);
        let b = self.tape.scale(value, self.model.config.beta);
        let total = self.tape.add(a, b);
        LossVars { total, gate, value }
    }

    pub fn gate_label(&self, trace: &DecodeTrace) -> GateLabel {
        GateLabel::from_index(argmax(self.tape.data(trace.gate))).expect("three gate classes")
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
