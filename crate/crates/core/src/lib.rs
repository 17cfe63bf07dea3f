//! Transferable dialogue state generator: a GRU encoder over dialogue
//! history, a soft-gated copy decoder run once per (domain, slot) pair, and a
//! three-way slot gate, with naive, EWC and GEM fine-tuning for new domains.

pub mod numkit;
pub mod corpus;
pub mod model;
pub mod eval;
pub mod train;
pub mod continual;
pub mod checkpoint;
pub mod experiment;
pub mod demo;
