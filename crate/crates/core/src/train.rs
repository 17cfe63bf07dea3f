//! Mini-batch Adam training with validation-driven learning-rate halving and
//! early stopping.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{evaluate, joint_goal_accuracy, slot_accuracy, EvalError, SlotDenominator};
use crate::model::{Example, ModelError, TradeModel};
use crate::numkit::{AdamConfig, AdamState, GradStore, NumError, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Starting learning rate; halved when validation joint accuracy stalls.
    pub lr: f64,
    pub lr_min: f64,
    /// Validations without improvement between halvings (1 = halve on every miss).
    pub anneal_after: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    /// Stop as soon as validation joint accuracy reaches this value.
    pub target_joint: Option<f64>,
    /// Epochs between validation passes (the last epoch is always validated).
    pub eval_every: usize,
    /// Epochs before learning-rate halving and patience start counting.
    pub warmup_epochs: usize,
    /// Return the best validated parameters rather than the last ones.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            lr: 1e-3,
            lr_min: 1e-4,
            anneal_after: 1,
            patience: 6,
            clip_norm: 10.0,
            target_joint: None,
            eval_every: 1,
            warmup_epochs: 0,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    /// Settings for the small synthetic corpora: more, smaller steps so a
    /// few hundred dialogues suffice.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            lr: 3e-3,
            lr_min: 1e-4,
            anneal_after: 3,
            patience: 12,
            warmup_epochs: 30,
            ..TrainConfig::default()
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr && self.lr.is_finite()) {
            return fail("need 0 < lr_min <= lr");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if self.anneal_after == 0 {
            return fail("anneal_after must be positive");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        if let Some(t) = self.target_joint {
            if !(0.0..=1.0).contains(&t) {
                return fail("target_joint must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Modifies each averaged batch gradient before clipping and the Adam step.
pub trait GradientHook {
    fn adjust(&mut self, model: &TradeModel, grad: &mut GradStore) -> Result<(), ModelError>;
}

/// Leaves gradients alone.
pub struct Plain;

impl GradientHook for Plain {
    fn adjust(&mut self, _: &TradeModel, _: &mut GradStore) -> Result<(), ModelError> {
        Ok(())
    }
}

/// An extra evaluation set reported every validated epoch.
pub struct Monitor<'a> {
    pub name: &'a str,
    pub examples: &'a [Example],
    pub pairs: &'a [usize],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub gate_loss: f64,
    pub value_loss: f64,
    pub lr: f64,
    pub valid_joint: Option<f64>,
    pub valid_slot: Option<f64>,
    /// Joint accuracy on each monitor set.
    pub monitors: BTreeMap<String, f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,gate_loss,value_loss,lr,valid_joint,valid_slot";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.epoch,
            self.loss,
            self.gate_loss,
            self.value_loss,
            self.lr,
            opt(self.valid_joint),
            opt(self.valid_slot)
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_joint: f64,
    pub steps: u64,
}

/// Seed of the dropout stream for one example in one epoch.
fn noise_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [epoch as u64, position as u64] {
        x = (x ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 31;
    }
    x
}

/// Trains `model` in place on `train` over `pairs`. Validation joint accuracy
/// on `valid` (scored over `valid_pairs`) drives checkpoint selection: on
/// return the model holds the best validated parameters. With no validation
/// set, the final parameters are kept.
///
/// On divergence the model is left at the best parameters seen so far and
/// [`TrainError::Diverged`] is returned.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut TradeModel,
    train: &[Example],
    pairs: &[usize],
    valid: &[Example],
    valid_pairs: &[usize],
    config: &TrainConfig,
    seed: u64,
    hook: &mut dyn GradientHook,
    monitors: &[Monitor<'_>],
    mut on_epoch: impl FnMut(&EpochLog, &TradeModel),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() && config.epochs > 0 {
        return Err(TrainError::Config("empty training set".into()));
    }
    let mut adam = AdamState::new(&model.params, AdamConfig { lr: config.lr, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    let mut logs = Vec::new();

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(seed, epoch, usize::MAX));
        order.shuffle(&mut rng);
        let (mut loss, mut gate, mut value, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> =
                (0..chunk.len()).map(|k| noise_seed(seed, epoch, b * config.batch_size + k)).collect();
            let (l, mut grad) = model.batch_gradient(&batch, pairs, Some(&seeds))?;
            if !l.total.is_finite() || !grad.all_finite() {
                restore_best(model, &best);
                return Err(TrainError::Diverged { epoch, reason: format!("loss {}", l.total) });
            }
            hook.adjust(model, &mut grad)?;
            grad.clip_norm(config.clip_norm);
            match adam.step(&mut model.params, &grad) {
                Ok(()) => {}
                Err(NumError::Divergence(reason)) => {
                    restore_best(model, &best);
                    return Err(TrainError::Diverged { epoch, reason });
                }
                Err(e) => return Err(ModelError::from(e).into()),
            }
            if !model.params.all_finite() {
                restore_best(model, &best);
                return Err(TrainError::Diverged { epoch, reason: "non-finite parameters".into() });
            }
            let n = chunk.len() as f64;
            loss += l.total * n;
            gate += l.gate * n;
            value += l.value * n;
            count += chunk.len();
        }
        let count = count as f64;
        let mut log = EpochLog {
            epoch,
            loss: loss / count,
            gate_loss: gate / count,
            value_loss: value / count,
            lr: adam.config.lr,
            valid_joint: None,
            valid_slot: None,
            monitors: BTreeMap::new(),
        };
        let validate_now = epoch % config.eval_every == 0 || epoch == config.epochs;
        let mut stop = false;
        if validate_now && !valid.is_empty() {
            let evals = evaluate(model, valid, valid_pairs)?;
            let joint = joint_goal_accuracy(&evals)?;
            log.valid_joint = Some(joint);
            log.valid_slot = Some(slot_accuracy(&evals, SlotDenominator::AllPairs)?);
            for m in monitors {
                let e = evaluate(model, m.examples, m.pairs)?;
                log.monitors.insert(m.name.to_string(), joint_goal_accuracy(&e)?);
            }
            let improved = best.as_ref().map_or(true, |(b, _, _)| joint > *b);
            if improved {
                best = Some((joint, epoch, model.params.clone()));
                stale = 0;
            } else if epoch > config.warmup_epochs {
                stale += 1;
                if stale % config.anneal_after == 0 {
                    adam.set_lr((adam.config.lr * 0.5).max(config.lr_min));
                }
                if stale >= config.patience {
                    stop = true;
                }
            }
            if config.target_joint.is_some_and(|t| joint >= t) {
                stop = true;
            }
        }
        log::info!(
            "epoch {epoch}: loss {:.4} (gate {:.4}, value {:.4}) valid joint {:?}",
            log.loss,
            log.gate_loss,
            log.value_loss,
            log.valid_joint
        );
        on_epoch(&log, model);
        logs.push(log);
        if stop {
            break;
        }
    }
    let (best_joint, best_epoch) = match &best {
        Some((j, e, _)) => (*j, *e),
        None => (f64::NAN, logs.len()),
    };
    if config.restore_best {
        restore_best(model, &best);
    }
    Ok(TrainOutcome { logs, best_epoch, best_joint, steps: adam.step_count() })
}

fn restore_best(model: &mut TradeModel, best: &Option<(f64, usize, ParamStore)>) {
    if let Some((_, _, p)) = best {
        model.params = p.clone();
    }
}
