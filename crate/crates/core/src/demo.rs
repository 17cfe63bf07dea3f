//! Line-oriented interactive session: type turns, see the tracked state.
//!
//! ```text
//! system: what area would you like ?
//! user: somewhere in the north please
//! :reset
//! :quit
//! ```
//! A line without a prefix is a user turn. A `system:` line sets the
//! system prompt for the next user turn.

use std::fmt;

use crate::corpus::{make_history, tokenize, BeliefState, Dialogue, GateLabel, Turn};
use crate::model::{Example, ModelError, SlotPrediction, TradeModel};

pub const HELP: &str = "\
commands:
  user: <text>     add a user turn (the prefix may be omitted)
  system: <text>   system utterance preceding the next user turn
  :reset           start a new dialogue
  :help            show this text
  :quit            leave";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DemoCommand {
    System(Vec<String>),
    User(Vec<String>),
    Reset,
    Help,
    Quit,
    /// Blank line.
    Nothing,
}

/// Parses one input line. Errors carry a short reason; the caller shows
/// [`HELP`].
pub fn parse_demo_line(line: &str) -> Result<DemoCommand, String> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(DemoCommand::Nothing);
    }
    if let Some(cmd) = line.strip_prefix(':') {
        return match cmd.trim() {
            "reset" => Ok(DemoCommand::Reset),
            "help" => Ok(DemoCommand::Help),
            "quit" | "q" | "exit" => Ok(DemoCommand::Quit),
            other => Err(format!("unknown command :{other}")),
        };
    }
    let (is_system, text) = match line.split_once(':') {
        Some((head, rest)) if matches!(head.trim().to_lowercase().as_str(), "system" | "sys") => (true, rest),
        Some((head, rest)) if matches!(head.trim().to_lowercase().as_str(), "user" | "usr") => (false, rest),
        _ => (false, line),
    };
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err("empty utterance".into());
    }
    Ok(if is_system { DemoCommand::System(tokens) } else { DemoCommand::User(tokens) })
}

/// Per-pair view of one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotView {
    pub pair: String,
    pub gate: [f64; 3],
    pub label: GateLabel,
    pub value: Vec<String>,
    /// Five most attended history tokens at the first decoding step.
    pub top_attention: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnOutput {
    pub turn: usize,
    pub belief: BeliefState,
    pub slots: Vec<SlotView>,
}

impl fmt::Display for TurnOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "turn {}", self.turn)?;
        if self.belief.is_empty() {
            writeln!(f, "  belief: (empty)")?;
        }
        for (k, v) in self.belief.iter() {
            writeln!(f, "  {} = {}", k.joined(), v.text())?;
        }
        for s in &self.slots {
            write!(f, "  {:<24} ptr {:.3}  none {:.3}  dontcare {:.3}", s.pair, s.gate[0], s.gate[1], s.gate[2])?;
            if s.label == GateLabel::Ptr {
                let att: Vec<String> = s.top_attention.iter().map(|(w, p)| format!("{w}:{p:.2}")).collect();
                write!(f, "  -> {:?}  [{}]", s.value.join(" "), att.join(" "))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub struct DemoSession<'m> {
    model: &'m TradeModel,
    dialogue: Dialogue,
    pending_system: Vec<String>,
}

fn top_k(example: &Example, weights: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    // Stable sort keeps earlier positions first among equal weights.
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    idx.truncate(k);
    idx.into_iter().map(|i| (example.history[i].clone(), weights[i])).collect()
}

impl<'m> DemoSession<'m> {
    pub fn new(model: &'m TradeModel) -> Self {
        DemoSession { model, dialogue: Dialogue { id: "demo".into(), turns: Vec::new() }, pending_system: Vec::new() }
    }

    pub fn turns(&self) -> usize {
        self.dialogue.turns.len()
    }

    pub fn reset(&mut self) {
        self.dialogue.turns.clear();
        self.pending_system.clear();
    }

    pub fn set_system(&mut self, tokens: Vec<String>) {
        self.pending_system = tokens;
    }

    /// Appends a user turn and predicts the state over every registered pair.
    pub fn user_turn(&mut self, tokens: Vec<String>) -> Result<TurnOutput, ModelError> {
        let system = std::mem::take(&mut self.pending_system);
        self.dialogue.turns.push(Turn { system, user: tokens, belief: BeliefState::new() });
        let t = self.dialogue.turns.len();
        let history = make_history(&self.dialogue, t, self.model.config.history)?;
        let ex = Example::from_parts("demo", t, history, BeliefState::new(), &self.model.vocab, &self.model.ontology)?;
        let preds = self.model.predict_pairs(&ex, &self.model.all_pairs())?;
        let belief = self.model.belief_from(&preds);
        let slots = preds.iter().map(|p| self.view(&ex, p)).collect();
        Ok(TurnOutput { turn: t, belief, slots })
    }

    fn view(&self, ex: &Example, p: &SlotPrediction) -> SlotView {
        let pair = &self.model.ontology.pairs()[p.pair];
        let top = p.attention.first().map(|w| top_k(ex, w, 5)).unwrap_or_default();
        SlotView {
            pair: pair.key().joined(),
            gate: p.gate,
            label: p.gate_label(),
            value: p.value_words(),
            top_attention: top,
        }
    }

    /// Applies one command. Returns the text to print (possibly empty) and
    /// whether the session should end.
    pub fn handle(&mut self, line: &str) -> Result<(String, bool), ModelError> {
        match parse_demo_line(line) {
            Err(reason) => Ok((format!("{reason}\n{HELP}\n"), false)),
            Ok(DemoCommand::Nothing) => Ok((String::new(), false)),
            Ok(DemoCommand::Quit) => Ok((String::new(), true)),
            Ok(DemoCommand::Help) => Ok((format!("{HELP}\n"), false)),
            Ok(DemoCommand::Reset) => {
                self.reset();
                Ok(("new dialogue\n".into(), false))
            }
            Ok(DemoCommand::System(tokens)) => {
                self.set_system(tokens);
                Ok((String::new(), false))
            }
            Ok(DemoCommand::User(tokens)) => Ok((self.user_turn(tokens)?.to_string(), false)),
        }
    }
}
