//! Few-shot domain expansion on top of a source-trained model: naive
//! fine-tuning, elastic weight consolidation and gradient episodic memory.


use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Example, ModelError, TradeModel};
use crate::numkit::{GradStore, ParamStore};
use crate::train::{train, GradientHook, Monitor, Plain, TrainConfig, TrainError, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContinualError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Ewc,
    Gem,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Ewc => "ewc",
            Strategy::Gem => "gem",
        }
    }
}

/// Diagonal Fisher estimate, aligned with the model's parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherDiag {
    pub values: GradStore,
    pub samples: usize,
}

/// Mean squared per-example gradient of the training loss at the current
/// parameters (the empirical Fisher). No dropout is applied.
pub fn fisher_diag(model: &TradeModel, samples: &[Example], pairs: &[usize]) -> Result<FisherDiag, ContinualError> {
    if samples.is_empty() {
        return Err(ContinualError::Config("Fisher estimate needs at least one sample".into()));
    }
    let squares: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|ex| {
            let (_, g) = model.batch_gradient(&[ex], pairs, None)?;
            Ok(g.flatten().into_iter().map(|x| x * x).collect())
        })
        .collect::<Result<_, ModelError>>()?;
    let mut acc = vec![0.0; model.params.numel()];
    for sq in &squares {
        for (a, s) in acc.iter_mut().zip(sq) {
            *a += s;
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let mut values = model.params.zeros_like();
    values.set_flat(&acc);
    Ok(FisherDiag { values, samples: samples.len() })
}

/// Frozen copy of the source-trained parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceAnchor {
    params: ParamStore,
}

impl SourceAnchor {
    pub fn new(params: &ParamStore) -> Self {
        SourceAnchor { params: params.clone() }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }
}

fn check_ewc(params: &ParamStore, anchor: &SourceAnchor, fisher: &FisherDiag, lambda: f64) -> Result<(), ContinualError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ContinualError::Config(format!("EWC lambda {lambda} must be finite and >= 0")));
    }
    if !params.same_layout(&anchor.params) || fisher.values.len() != params.len() {
        return Err(ContinualError::Shape("EWC anchor or Fisher does not match the parameters".into()));
    }
    for id in params.ids() {
        if fisher.values.get(id).shape() != params.get(id).shape() {
            return Err(ContinualError::Shape(format!("Fisher block {} has the wrong shape", params.name(id))));
        }
    }
    Ok(())
}

/// `Σ_i (λ/2) F_i (Θ_i − Θ_S,i)²`.
pub fn ewc_penalty(params: &ParamStore, anchor: &SourceAnchor, fisher: &FisherDiag, lambda: f64) -> Result<f64, ContinualError> {
    check_ewc(params, anchor, fisher, lambda)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for id in params.ids() {
        let (p, a, f) = (params.get(id).data(), anchor.params.get(id).data(), fisher.values.get(id).data());
        for i in 0..p.len() {
            let d = p[i] - a[i];
            total += 0.5 * lambda * f[i] * d * d;
        }
    }
    Ok(total)
}

/// `L + penalty`.
pub fn ewc_loss(
    loss: f64,
    params: &ParamStore,
    anchor: &SourceAnchor,
    fisher: &FisherDiag,
    lambda: f64,
) -> Result<f64, ContinualError> {
    Ok(loss + ewc_penalty(params, anchor, fisher, lambda)?)
}

/// Adds the penalty gradient `λ F_i (Θ_i − Θ_S,i)` into `grad`.
pub fn add_ewc_gradient(
    grad: &mut GradStore,
    params: &ParamStore,
    anchor: &SourceAnchor,
    fisher: &FisherDiag,
    lambda: f64,
) -> Result<(), ContinualError> {
    check_ewc(params, anchor, fisher, lambda)?;
    if lambda == 0.0 {
        return Ok(());
    }
    for id in params.ids() {
        let (p, a, f) = (params.get(id).data(), anchor.params.get(id).data(), fisher.values.get(id).data());
        let g = grad.get_mut(id).data_mut();
        for i in 0..p.len() {
            g[i] += lambda * f[i] * (p[i] - a[i]);
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects `g` onto the half-space `⟨·, g_mem⟩ ≥ 0` when it violates it.
pub fn gem_project(g: &[f64], g_mem: &[f64]) -> Result<Vec<f64>, ContinualError> {
    if g.len() != g_mem.len() {
        return Err(ContinualError::Shape(format!("gradient lengths {} and {}", g.len(), g_mem.len())));
    }
    let gm = dot(g, g_mem);
    let mm = dot(g_mem, g_mem);
    if gm >= 0.0 || mm == 0.0 {
        return Ok(g.to_vec());
    }
    let c = gm / mm;
    Ok(g.iter().zip(g_mem).map(|(x, m)| x - c * m).collect())
}

/// Source examples kept for the GEM constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodicMemory {
    examples: Vec<Example>,
}

impl EpisodicMemory {
    /// Uniform sample of `max(1, round(fraction · n))` examples.
    pub fn sample(source: &[Example], fraction: f64, seed: u64) -> Result<Self, ContinualError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(ContinualError::Config(format!("memory fraction {fraction} not in (0, 1]")));
        }
        if source.is_empty() {
            return Err(ContinualError::Config("no source examples for the episodic memory".into()));
        }
        let n = ((fraction * source.len() as f64).round() as usize).clamp(1, source.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, source.len(), n).into_vec();
        idx.sort_unstable();
        Ok(EpisodicMemory { examples: idx.into_iter().map(|i| source[i].clone()).collect() })
    }

    pub fn from_examples(examples: Vec<Example>) -> Result<Self, ContinualError> {
        if examples.is_empty() {
            return Err(ContinualError::Config("episodic memory cannot be empty".into()));
        }
        Ok(EpisodicMemory { examples })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Loss gradient over the whole memory at the model's current parameters.
    pub fn gradient(&self, model: &TradeModel, pairs: &[usize]) -> Result<GradStore, ModelError> {
        let refs: Vec<&Example> = self.examples.iter().collect();
        Ok(model.batch_gradient(&refs, pairs, None)?.1)
    }
}

/// Adds the EWC penalty gradient to every batch gradient.
pub struct EwcHook<'a> {
    pub anchor: &'a SourceAnchor,
    pub fisher: &'a FisherDiag,
    pub lambda: f64,
}

impl GradientHook for EwcHook<'_> {
    fn adjust(&mut self, model: &TradeModel, grad: &mut GradStore) -> Result<(), ModelError> {
        add_ewc_gradient(grad, &model.params, self.anchor, self.fisher, self.lambda)
            .map_err(|e| ModelError::Config(e.to_string()))
    }
}

/// Projects every batch gradient against the memory gradient.
pub struct GemHook<'a> {
    pub memory: &'a EpisodicMemory,
    /// Pairs the memory loss is computed over.
    pub pairs: &'a [usize],
    /// How many batch gradients needed projecting.
    pub projected: usize,
    pub steps: usize,
}

impl<'a> GemHook<'a> {
    pub fn new(memory: &'a EpisodicMemory, pairs: &'a [usize]) -> Self {
        GemHook { memory, pairs, projected: 0, steps: 0 }
    }
}

impl GradientHook for GemHook<'_> {
    fn adjust(&mut self, model: &TradeModel, grad: &mut GradStore) -> Result<(), ModelError> {
        let mem = self.memory.gradient(model, self.pairs)?.flatten();
        let g = grad.flatten();
        let projected = gem_project(&g, &mem).map_err(|e| ModelError::Shape(e.to_string()))?;
        self.steps += 1;
        if projected != g {
            self.projected += 1;
            grad.set_flat(&projected);
        }
        Ok(())
    }
}

/// Strategy-specific state for [`finetune`].
pub enum Regularizer<'a> {
    Naive,
    Ewc { fisher: &'a FisherDiag, lambda: f64 },
    Gem { memory: &'a EpisodicMemory },
}

impl Regularizer<'_> {
    pub fn strategy(&self) -> Strategy {
        match self {
            Regularizer::Naive => Strategy::Naive,
            Regularizer::Ewc { .. } => Strategy::Ewc,
            Regularizer::Gem { .. } => Strategy::Gem,
        }
    }
}

/// Data for one fine-tuning run. Target validation drives model selection;
/// source validation is logged every epoch under the monitor name `source`.
pub struct FinetuneSets<'a> {
    pub train: &'a [Example],
    pub train_pairs: &'a [usize],
    pub target_valid: &'a [Example],
    pub target_pairs: &'a [usize],
    pub source_valid: &'a [Example],
    pub source_pairs: &'a [usize],
}

/// Fine-tunes `model` in place, anchored at its current parameters.
pub fn finetune(
    model: &mut TradeModel,
    sets: &FinetuneSets<'_>,
    regularizer: &Regularizer<'_>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let anchor = SourceAnchor::new(&model.params);
    let monitors = [Monitor { name: "source", examples: sets.source_valid, pairs: sets.source_pairs }];
    let monitors: &[Monitor<'_>] = if sets.source_valid.is_empty() { &[] } else { &monitors };
    let mut plain = Plain;
    let mut ewc = None;
    let mut gem = None;
    let hook: &mut dyn GradientHook = match regularizer {
        Regularizer::Naive => &mut plain,
        Regularizer::Ewc { fisher, lambda } => {
            check_ewc(&model.params, &anchor, fisher, *lambda).map_err(|e| TrainError::Config(e.to_string()))?;
            ewc.insert(EwcHook { anchor: &anchor, fisher, lambda: *lambda })
        }
        Regularizer::Gem { memory } => gem.insert(GemHook::new(memory, sets.source_pairs)),
    };
    let out = train(
        model,
        sets.train,
        sets.train_pairs,
        sets.target_valid,
        sets.target_pairs,
        config,
        seed,
        hook,
        monitors,
        |_, _| {},
    )?;
    if let Some(g) = &gem {
        log::info!("GEM projected {} of {} batch gradients", g.projected, g.steps);
    }
    Ok(out)
}
