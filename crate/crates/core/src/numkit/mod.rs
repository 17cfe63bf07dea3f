//! Dense `f64` tensors, a define-by-run gradient tape and Adam.

mod adam;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{GradStore, ParamId, ParamStore};
pub use tape::{Gradients, GruVars, Node, Tape, Var, LOG_FLOOR};
pub use tensor::{dot, matvec, sigmoid, softmax, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric domain error: {0}")]
    Domain(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

/// Concrete weights of one GRU cell, laid out as in [`GruVars`].
#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights {
    pub w_input: Tensor,
    pub w_hidden_gates: Tensor,
    pub w_hidden_cand: Tensor,
    pub bias: Tensor,
}

impl GruWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruWeights {
            w_input: Tensor::zeros(&[3 * hidden, input]),
            w_hidden_gates: Tensor::zeros(&[2 * hidden, hidden]),
            w_hidden_cand: Tensor::zeros(&[hidden, hidden]),
            bias: Tensor::zeros(&[3 * hidden]),
        }
    }

    fn check(&self, input: usize, hidden: usize) -> Result<(), NumError> {
        let ok = self.w_input.shape() == [3 * hidden, input]
            && self.w_hidden_gates.shape() == [2 * hidden, hidden]
            && self.w_hidden_cand.shape() == [hidden, hidden]
            && self.bias.shape() == [3 * hidden];
        if ok {
            Ok(())
        } else {
            Err(NumError::Shape(format!(
                "GRU weights do not fit input {input} / hidden {hidden}"
            )))
        }
    }
}

/// Evaluates one GRU step outside of any training graph.
pub fn gru_cell(x: &[f64], h_prev: &[f64], w: &GruWeights) -> Result<Vec<f64>, NumError> {
    w.check(x.len(), h_prev.len())?;
    let mut tape = Tape::new();
    let vars = GruVars {
        w_input: tape.leaf(w.w_input.clone()),
        w_hidden_gates: tape.leaf(w.w_hidden_gates.clone()),
        w_hidden_cand: tape.leaf(w.w_hidden_cand.clone()),
        bias: tape.leaf(w.bias.clone()),
    };
    let xv = tape.leaf(Tensor::vector(x.to_vec()));
    let hv = tape.leaf(Tensor::vector(h_prev.to_vec()));
    let out = tape.gru_cell(xv, hv, vars);
    Ok(tape.data(out).to_vec())
}
