//! Joint goal accuracy, slot accuracy, per-slot error rates and the slot
//! embedding similarity matrix.


use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{canonical, BeliefState, DomainSlot, SlotKey, SlotValue};
use crate::model::{Example, ModelError, TradeModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which (turn, pair) cells count toward slot accuracy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotDenominator {
    /// Every turn times every evaluated pair; NONE/NONE agreements count.
    #[default]
    AllPairs,
    /// Only cells where gold or prediction is not NONE.
    ActiveOnly,
}

fn status(belief: &BeliefState, key: &SlotKey) -> Option<String> {
    belief.get(key).map(|v| match v {
        SlotValue::DontCare => "dontcare".to_string(),
        SlotValue::Value(t) => canonical(&t.join(" ")),
    })
}

/// One evaluated turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnEval {
    pub dialogue_id: String,
    pub turn: usize,
    pub gold: BeliefState,
    pub pred: BeliefState,
    /// `correct[j]` for the j-th evaluated pair.
    pub correct: Vec<bool>,
    /// Whether gold or prediction is non-NONE for the j-th pair.
    pub active: Vec<bool>,
}

impl TurnEval {
    pub fn new(dialogue_id: &str, turn: usize, gold: BeliefState, pred: BeliefState, pairs: &[DomainSlot]) -> Self {
        let mut correct = Vec::with_capacity(pairs.len());
        let mut active = Vec::with_capacity(pairs.len());
        for p in pairs {
            let k = p.key();
            let (g, q) = (status(&gold, &k), status(&pred, &k));
            active.push(g.is_some() || q.is_some());
            correct.push(g == q);
        }
        TurnEval { dialogue_id: dialogue_id.to_string(), turn, gold, pred, correct, active }
    }

    pub fn all_correct(&self) -> bool {
        self.correct.iter().all(|&c| c)
    }
}

pub fn joint_goal_accuracy(evals: &[TurnEval]) -> Result<f64, EvalError> {
    if evals.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = evals.iter().filter(|e| e.all_correct()).count();
    Ok(hits as f64 / evals.len() as f64)
}

/// Fraction of correct (turn, pair) cells. With [`SlotDenominator::ActiveOnly`]
/// and no active cells the score is 1.
pub fn slot_accuracy(evals: &[TurnEval], denominator: SlotDenominator) -> Result<f64, EvalError> {
    if evals.is_empty() || evals[0].correct.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for e in evals {
        for (&c, &a) in e.correct.iter().zip(&e.active) {
            if denominator == SlotDenominator::ActiveOnly && !a {
                continue;
            }
            total += 1;
            hits += c as usize;
        }
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}

/// `(pair name, error rate)` sorted by descending error, ties by name.
pub fn per_slot_errors(evals: &[TurnEval], pairs: &[DomainSlot]) -> Result<Vec<(String, f64)>, EvalError> {
    if evals.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = evals.len() as f64;
    let mut out: Vec<(String, f64)> = pairs
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let wrong = evals.iter().filter(|e| !e.correct[j]).count();
            (p.key().joined(), wrong as f64 / n)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub joint_accuracy: f64,
    pub slot_accuracy: f64,
    pub slot_denominator: SlotDenominator,
    pub turns: usize,
    pub pairs: usize,
    pub per_slot_error: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn from_evals(evals: &[TurnEval], pairs: &[DomainSlot], denominator: SlotDenominator) -> Result<Self, EvalError> {
        Ok(MetricReport {
            joint_accuracy: joint_goal_accuracy(evals)?,
            slot_accuracy: slot_accuracy(evals, denominator)?,
            slot_denominator: denominator,
            turns: evals.len(),
            pairs: pairs.len(),
            per_slot_error: per_slot_errors(evals, pairs)?,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "turns          {}", self.turns)?;
        writeln!(f, "pairs          {}", self.pairs)?;
        writeln!(f, "joint accuracy {:.4}", self.joint_accuracy)?;
        writeln!(f, "slot accuracy  {:.4}", self.slot_accuracy)?;
        writeln!(f, "per-slot error rate:")?;
        for (name, err) in &self.per_slot_error {
            writeln!(f, "  {name:<28} {err:.4}")?;
        }
        Ok(())
    }
}

/// Runs the model on every example and compares against gold on `pairs`.
/// Gold beliefs are restricted to `pairs` as well.
pub fn evaluate(model: &TradeModel, examples: &[Example], pairs: &[usize]) -> Result<Vec<TurnEval>, EvalError> {
    if examples.is_empty() || pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let registry: Vec<DomainSlot> = pairs.iter().map(|&j| model.ontology.pairs()[j].clone()).collect();
    examples
        .par_iter()
        .map(|ex| {
            let pred = model.predict_example(ex, pairs)?;
            let mut gold = ex.belief.clone();
            gold.retain(|k, _| registry.iter().any(|p| p.domain == k.domain && p.slot == k.slot));
            Ok(TurnEval::new(&ex.dialogue_id, ex.turn, gold, pred, &registry))
        })
        .collect()
}

/// Same-turn "all NONE" predictions, the zero-shot reference point.
pub fn all_none_evals(examples: &[Example], registry: &[DomainSlot]) -> Vec<TurnEval> {
    examples
        .iter()
        .map(|ex| {
            let mut gold = ex.belief.clone();
            gold.retain(|k, _| registry.iter().any(|p| p.domain == k.domain && p.slot == k.slot));
            TurnEval::new(&ex.dialogue_id, ex.turn, gold, BeliefState::new(), registry)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    dialogue_id: String,
    turn: usize,
    gold: BTreeMap<String, String>,
    predicted: BTreeMap<String, String>,
}

/// One JSON object per line: dialogue id, turn, gold and predicted belief.
pub fn write_predictions<W: Write>(evals: &[TurnEval], mut out: W) -> Result<(), EvalError> {
    for e in evals {
        let rec = PredictionRecord {
            dialogue_id: e.dialogue_id.clone(),
            turn: e.turn,
            gold: e.gold.to_raw(),
            predicted: e.pred.to_raw(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Cosine similarity between slot embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Rows with zero norm; their off-diagonal entries are reported as 0.
    pub degenerate: Vec<String>,
}

impl SimilarityMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("slot");
        for n in &self.names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (n, row) in self.names.iter().zip(&self.values) {
            s.push_str(n);
            for v in row {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn embedding_similarity(rows: &[(String, Vec<f64>)]) -> SimilarityMatrix {
    let norms: Vec<f64> = rows.iter().map(|(_, v)| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let degenerate: Vec<String> =
        rows.iter().zip(&norms).filter(|(_, &n)| n == 0.0).map(|((name, _), _)| name.clone()).collect();
    for d in &degenerate {
        log::warn!("slot embedding {d} has zero norm; its similarities are reported as 0");
    }
    let m = rows.len();
    let mut values = vec![vec![0.0; m]; m];
    for i in 0..m {
        values[i][i] = 1.0;
        for k in i + 1..m {
            let v = if norms[i] == 0.0 || norms[k] == 0.0 {
                0.0
            } else {
                let d: f64 = rows[i].1.iter().zip(&rows[k].1).map(|(a, b)| a * b).sum();
                (d / (norms[i] * norms[k])).clamp(-1.0, 1.0)
            };
            values[i][k] = v;
            values[k][i] = v;
        }
    }
    SimilarityMatrix { names: rows.iter().map(|(n, _)| n.clone()).collect(), values, degenerate }
}
