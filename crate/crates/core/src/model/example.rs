use crate::corpus::{
    gate_label_of, make_history, BeliefState, Dialogue, GateLabel, HistoryWindow, Ontology,
    Vocabulary, UNK,
};

use super::ModelError;

/// One turn prepared for the network: history ids, copy ids, and the gold
/// gate and value targets of every registered pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub dialogue_id: String,
    /// 1-based turn index.
    pub turn: usize,
    pub history: Vec<String>,
    /// Vocabulary ids (out-of-vocabulary tokens map to `<unk>`).
    pub input_ids: Vec<usize>,
    /// Ids in the extended vocabulary: OOV history tokens get `|V| + k`.
    pub copy_ids: Vec<usize>,
    /// Extended-vocabulary words, in order of first appearance.
    pub oov: Vec<String>,
    pub gates: Vec<GateLabel>,
    /// Extended ids of each pair's value target (sentinel or value + `<eos>`).
    pub targets: Vec<Vec<usize>>,
    pub belief: BeliefState,
}

impl Example {
    pub fn from_turn(
        dialogue: &Dialogue,
        turn: usize,
        window: HistoryWindow,
        vocab: &Vocabulary,
        ontology: &Ontology,
    ) -> Result<Self, ModelError> {
        let history = make_history(dialogue, turn, window)?;
        let belief = dialogue.turns[turn - 1].belief.clone();
        Self::from_parts(&dialogue.id, turn, history, belief, vocab, ontology)
    }

    pub fn from_parts(
        dialogue_id: &str,
        turn: usize,
        history: Vec<String>,
        belief: BeliefState,
        vocab: &Vocabulary,
        ontology: &Ontology,
    ) -> Result<Self, ModelError> {
        if history.is_empty() {
            return Err(ModelError::EmptyHistory);
        }
        let input_ids = vocab.encode(&history);
        let mut oov: Vec<String> = Vec::new();
        let copy_ids = history
            .iter()
            .zip(&input_ids)
            .map(|(tok, &id)| {
                if id != UNK || tok == "<unk>" {
                    return id;
                }
                let k = oov.iter().position(|o| o == tok).unwrap_or_else(|| {
                    oov.push(tok.clone());
                    oov.len() - 1
                });
                vocab.len() + k
            })
            .collect();
        let mut gates = Vec::with_capacity(ontology.pairs().len());
        let mut targets = Vec::with_capacity(ontology.pairs().len());
        for pair in ontology.pairs() {
            let (g, toks) = gate_label_of(&belief, pair);
            gates.push(g);
            let mut ids: Vec<usize> = toks
                .iter()
                .map(|t| match vocab.get(t) {
                    Some(id) => id,
                    None => oov
                        .iter()
                        .position(|o| o == t)
                        .map(|k| vocab.len() + k)
                        .unwrap_or(UNK),
                })
                .collect();
            if g != GateLabel::Ptr {
                ids.push(crate::corpus::EOS);
            }
            targets.push(ids);
        }
        Ok(Example {
            dialogue_id: dialogue_id.to_string(),
            turn,
            history,
            input_ids,
            copy_ids,
            oov,
            gates,
            targets,
            belief,
        })
    }

    pub fn extended_size(&self, vocab_len: usize) -> usize {
        vocab_len + self.oov.len()
    }

    /// The token behind an extended id.
    pub fn token<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> &'a str {
        if id < vocab.len() {
            vocab.token(id).unwrap_or("<unk>")
        } else {
            self.oov.get(id - vocab.len()).map(String::as_str).unwrap_or("<unk>")
        }
    }
}

/// Every turn of every dialogue, in corpus order.
pub fn examples_of(
    corpus: &crate::corpus::Corpus,
    window: HistoryWindow,
    vocab: &Vocabulary,
) -> Result<Vec<Example>, ModelError> {
    let mut out = Vec::with_capacity(corpus.turn_count());
    for d in corpus.dialogues() {
        for t in 1..=d.turns.len() {
            out.push(Example::from_turn(d, t, window, vocab, corpus.ontology())?);
        }
    }
    Ok(out)
}
