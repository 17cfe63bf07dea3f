use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::HistoryWindow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_emb: usize,
    /// Hidden size; each encoder direction gets half.
    pub d_hdd: usize,
    pub max_decode_len: usize,
    pub history: HistoryWindow,
    pub dropout: f64,
    pub word_dropout: f64,
    /// Weight of the slot-gate loss.
    pub alpha: f64,
    /// Weight of the value-generation loss.
    pub beta: f64,
    /// Half-width of the uniform initializer for embedding tables.
    pub embed_init: f64,
    /// Starting bias of the generation gate; negative values start the
    /// decoder out copying from the history.
    pub copy_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_emb: 400,
            d_hdd: 400,
            max_decode_len: 10,
            history: HistoryWindow::All,
            dropout: 0.2,
            word_dropout: 0.05,
            alpha: 1.0,
            beta: 1.0,
            embed_init: 0.1,
            copy_bias_init: 0.0,
        }
    }
}

impl ModelConfig {
    /// Settings for the synthetic corpus. Its value sets are small enough
    /// that the vocabulary path can memorize them, so the generation gate
    /// starts biased toward copying.
    pub fn desk() -> Self {
        ModelConfig { d_emb: 128, d_hdd: 128, copy_bias_init: -3.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.d_emb == 0 || self.d_hdd == 0 {
            return fail("d_emb and d_hdd must be positive".into());
        }
        if self.d_hdd % 2 != 0 {
            return fail(format!("d_hdd = {} must be even (two encoder directions)", self.d_hdd));
        }
        if self.max_decode_len == 0 {
            return fail("max_decode_len must be positive".into());
        }
        if let HistoryWindow::Turns(0) = self.history {
            return fail("history window must be at least one turn".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return fail(format!("word_dropout {} not in [0, 1)", self.word_dropout));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return fail(format!("alpha = {}, beta = {} must be finite and ≥ 0", self.alpha, self.beta));
        }
        if !(self.embed_init > 0.0 && self.embed_init.is_finite()) {
            return fail("embed_init must be positive".into());
        }
        if !self.copy_bias_init.is_finite() {
            return fail("copy_bias_init must be finite".into());
        }
        Ok(())
    }

    /// Whether a `d_hdd -> d_emb` projection sits before the tied output embedding.
    pub fn has_output_projection(&self) -> bool {
        self.d_emb != self.d_hdd
    }
}
